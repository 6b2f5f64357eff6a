"""Merge-architecture image captioning: model, training, decoding, metrics."""

__version__ = "0.1.0"

from .data_io import (
    CaptionRecord,
    DatasetSplit,
    load_captions,
    load_checkpoint,
    load_features,
    save_checkpoint,
    save_features,
    split_dataset,
)
from .decoder import beam_search, exhaustive_oracle, greedy_decode, sequence_log_prob
from .metrics import EvalPair, MetricReport, bleu, cider, evaluate_corpus, rouge_l
from .model import ModelConfig, ModelParams, forward, init_params, loss_and_grads
from .text import EncodedCaption, Vocabulary, build_vocab, decode_ids, encode, tokenize
from .trainer import TrainConfig, TrainHistory, evaluate_loss, train

__all__ = [
    "CaptionRecord",
    "DatasetSplit",
    "EncodedCaption",
    "EvalPair",
    "MetricReport",
    "ModelConfig",
    "ModelParams",
    "TrainConfig",
    "TrainHistory",
    "Vocabulary",
    "beam_search",
    "bleu",
    "build_vocab",
    "cider",
    "decode_ids",
    "encode",
    "evaluate_corpus",
    "evaluate_loss",
    "exhaustive_oracle",
    "forward",
    "greedy_decode",
    "init_params",
    "load_captions",
    "load_checkpoint",
    "load_features",
    "loss_and_grads",
    "rouge_l",
    "save_checkpoint",
    "save_features",
    "sequence_log_prob",
    "split_dataset",
    "tokenize",
    "train",
]
