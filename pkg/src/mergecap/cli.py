"""Command-line entry point.

Commands cover the full workflow: build-vocab, train, caption, evaluate,
and gradcheck. Every run writes a JSON manifest next to its outputs (or
into $MERGECAP_OUT_DIR when a command only prints), so results are
reproducible from recorded flags and seeds. Exit code is 0 only on full
success.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, model, nn
from .data_io import (
    load_captions,
    load_checkpoint,
    load_features,
    ratios_to_counts,
    save_checkpoint,
    split_dataset,
)
from .decoder import beam_search, greedy_decode
from .errors import MergecapError
from .metrics import EvalPair, evaluate_corpus
from .model import ModelConfig, ModelParams, init_params, loss_and_grads
from .text import END, PAD, START, EncodedCaption, Vocabulary, build_vocab, encode, tokenize
from .trainer import TrainConfig, train

DEFAULT_SPLIT_COUNTS = "7154,1000,1000"
GRADCHECK_DEFAULTS = dict(
    vocab_size=11, embedding_dim=4, conv_filters=5, kernel_size=3,
    feature_dim=3, hidden_dim=6, max_len=6,
)


def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def _out_dir() -> str:
    return os.environ.get("MERGECAP_OUT_DIR", ".")


def _write_manifest(path: str, command: str, arguments: dict, outputs: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "arguments": arguments,
        "outputs": outputs,
        "wall_time_s": round(time.perf_counter() - started, 3),
    }
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _add_split_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--split-counts", default=DEFAULT_SPLIT_COUNTS,
                        help="train,val,test sizes (default %(default)s)")
    parser.add_argument("--split-ratios", default=None,
                        help="train,val,test ratios; overrides --split-counts")
    parser.add_argument("--split-seed", type=int, default=0)


def _resolve_split(records, args):
    ids = list(dict.fromkeys(r.image_id for r in records))
    try:
        if args.split_ratios:
            ratios = tuple(float(x) for x in args.split_ratios.split(","))
            if len(ratios) != 3:
                raise ValueError("expected three ratios")
            counts = ratios_to_counts(len(ids), ratios)
        else:
            counts = tuple(int(x) for x in args.split_counts.split(","))
            if len(counts) != 3:
                raise ValueError("expected three counts")
    except ValueError as exc:
        raise MergecapError(f"bad split specification: {exc}") from exc
    return split_dataset(ids, counts, args.split_seed), counts


def _group_captions(records) -> dict[str, list[str]]:
    grouped: dict[str, list[str]] = {}
    for record in records:
        grouped.setdefault(record.image_id, []).append(record.caption)
    return grouped


# --- build-vocab ---

def cmd_build_vocab(args) -> int:
    started = time.perf_counter()
    records = load_captions(args.captions)
    split, counts = _resolve_split(records, args)
    train_ids = set(split.train)
    corpus = [tokenize(r.caption) for r in records if r.image_id in train_ids]
    vocab = build_vocab(corpus, min_count=args.min_count)
    vocab.save(args.out)
    print(f"vocabulary size: {len(vocab)}")
    _write_manifest(
        args.out + ".manifest.json", "build-vocab",
        {"captions": args.captions, "out": args.out, "min_count": args.min_count,
         "split_counts": list(counts), "split_seed": args.split_seed},
        [args.out], started,
    )
    return 0


# --- train ---

def _encode_split(grouped, image_ids, features, vocab, max_len):
    items = []
    for image_id in image_ids:
        for caption in grouped.get(image_id, []):
            items.append((features[image_id], encode(tokenize(caption), vocab, max_len)))
    return items


def cmd_train(args) -> int:
    started = time.perf_counter()
    records = load_captions(args.captions)
    split, counts = _resolve_split(records, args)
    vocab = Vocabulary.load(args.vocab)
    vocab_hash = vocab.content_hash()
    features = load_features(args.features)
    grouped = _group_captions(records)

    needed = list(split.train) + list(split.val)
    missing = [i for i in needed if i not in features]
    if missing:
        raise MergecapError(f"features missing for image ids: {', '.join(sorted(missing))}")

    if args.max_len is not None:
        max_len = args.max_len
    else:
        lengths = [len(tokenize(c)) for i in split.train for c in grouped.get(i, [])]
        if not lengths:
            raise MergecapError("train split has no captions")
        max_len = min(max(lengths) + 2, 40)

    feature_dim = len(next(iter(features.values())))
    if args.resume:
        initial_params, model_config, _ = load_checkpoint(args.resume, expected_vocab_hash=vocab_hash)
    else:
        initial_params = None
        model_config = ModelConfig(
            vocab_size=len(vocab),
            max_len=max_len,
            embedding_dim=args.embedding_dim,
            conv_filters=args.conv_filters,
            kernel_size=args.kernel_size,
            feature_dim=feature_dim,
            hidden_dim=args.hidden_dim,
            image_projection=args.image_projection,
            seed=args.init_seed,
        )
    train_config = TrainConfig(
        optimizer=args.optimizer,
        lr=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        shuffle_seed=args.shuffle_seed,
        clip_norm=args.clip_norm,
    )

    train_items = _encode_split(grouped, split.train, features, vocab, model_config.max_len)
    val_items = _encode_split(grouped, split.val, features, vocab, model_config.max_len)

    os.makedirs(args.out_dir, exist_ok=True)
    checkpoint_path = os.path.join(args.out_dir, "checkpoint.mcap")
    history_path = os.path.join(args.out_dir, "history.tsv")

    def on_improve(params, epoch):
        save_checkpoint(params, model_config, vocab_hash, checkpoint_path)

    def on_epoch(stats):
        print(f"epoch {stats.epoch}: train {stats.train_loss:.4f} val {stats.val_loss:.4f} "
              f"({stats.seconds:.1f}s)")

    best_params, history = train(
        train_items, val_items, model_config, train_config,
        initial_params=initial_params, on_improve=on_improve, on_epoch=on_epoch,
    )
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(history.log_lines()) + "\n")
    print(f"best epoch: {history.best_epoch}")

    _write_manifest(
        os.path.join(args.out_dir, "manifest.json"), "train",
        {
            "captions": args.captions, "features": args.features, "vocab": args.vocab,
            "split_counts": list(counts), "split_seed": args.split_seed,
            "model_config": model_config.to_dict(),
            "train_config": {
                "optimizer": train_config.optimizer, "lr": train_config.lr,
                "batch_size": train_config.batch_size, "max_epochs": train_config.max_epochs,
                "patience": train_config.patience, "shuffle_seed": train_config.shuffle_seed,
                "clip_norm": train_config.clip_norm,
            },
            "resume": args.resume, "best_epoch": history.best_epoch,
        },
        [checkpoint_path, history_path], started,
    )
    return 0


# --- caption ---

def _decode_tokens(ids, vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[int(i)] for i in ids if int(i) not in (PAD, START, END)]


def _decode_one(params, config, feature, args):
    if args.search == "greedy":
        return greedy_decode(params, feature, max_len=args.max_len or config.max_len)
    return beam_search(params, feature, args.beam_width, max_len=args.max_len or config.max_len)


def cmd_caption(args) -> int:
    started = time.perf_counter()
    vocab = Vocabulary.load(args.vocab)
    params, config, _ = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.content_hash())
    features = load_features(args.features)

    if args.all:
        targets = sorted(features)
    else:
        targets = args.image_id
        unknown = [i for i in targets if i not in features]
        if unknown:
            raise MergecapError(f"unknown image ids: {', '.join(unknown)}")

    lines = []
    for image_id in targets:
        ids = _decode_one(params, config, features[image_id], args)
        lines.append(f"{image_id}\t{' '.join(_decode_tokens(ids, vocab))}")
    output = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(output)
    sys.stdout.write(output)

    manifest_path = (args.out + ".manifest.json") if args.out else os.path.join(_out_dir(), "caption.manifest.json")
    _write_manifest(
        manifest_path, "caption",
        {"checkpoint": args.checkpoint, "features": args.features, "vocab": args.vocab,
         "search": args.search, "beam_width": args.beam_width,
         "max_len": args.max_len or config.max_len,
         "images": "all" if args.all else targets, "image_count": len(targets)},
        [args.out] if args.out else [], started,
    )
    return 0


# --- evaluate ---

def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    records = load_captions(args.captions)
    split, counts = _resolve_split(records, args)
    vocab = Vocabulary.load(args.vocab)
    params, config, _ = load_checkpoint(args.checkpoint, expected_vocab_hash=vocab.content_hash())
    features = load_features(args.features)
    grouped = _group_captions(records)

    image_ids = [i for i in sorted(split.subset(args.split_name)) if i in grouped]
    if not args.self_test:
        missing = [i for i in image_ids if i not in features]
        if missing:
            raise MergecapError(f"features missing for image ids: {', '.join(missing)}")
    pairs = []
    for image_id in image_ids:
        references = [tokenize(c) for c in grouped[image_id]]
        if args.self_test:
            candidate = list(references[0])
        else:
            ids = _decode_one(params, config, features[image_id], args)
            candidate = _decode_tokens(ids, vocab)
        pairs.append(EvalPair(image_id=image_id, candidate=candidate, references=references))

    report = evaluate_corpus(pairs)
    out_path = args.out or os.path.join(_out_dir(), "report.json")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    print(report.to_json())

    _write_manifest(
        out_path + ".manifest.json", "evaluate",
        {"checkpoint": args.checkpoint, "features": args.features, "captions": args.captions,
         "vocab": args.vocab, "split": args.split_name, "split_counts": list(counts),
         "split_seed": args.split_seed, "search": args.search, "beam_width": args.beam_width,
         "self_test": args.self_test},
        [out_path], started,
    )
    return 0


# --- gradcheck ---

def _gradcheck_problem(config: ModelConfig, seed: int, eps: float):
    """Toy float64 batch steered away from ReLU and pooling kinks."""
    margin = 10.0 * eps
    for attempt in range(64):
        rng = np.random.default_rng(seed + 1000 * attempt)
        params = init_params(
            ModelConfig(**{**config.to_dict(), "seed": seed + 1000 * attempt}), dtype=np.float64
        )
        batch = []
        for _ in range(2):
            body_len = int(rng.integers(2, config.max_len - 1))
            body = rng.integers(4, config.vocab_size, size=body_len) if config.vocab_size > 4 else []
            ids = [START, *[int(b) for b in body], END]
            ids += [PAD] * (config.max_len - len(ids))
            batch.append(
                (rng.normal(size=config.feature_dim), EncodedCaption(tuple(ids), len(ids) - ids.count(PAD)))
            )
        feats, prefixes, _ = model.expand_batch(batch, np.float64)
        caches = model._forward(params, feats, prefixes)
        conv_pre, merge_pre = caches.conv.pre, caches.merge.pre
        # pooling kink: top-2 post-ReLU values may not be within the margin
        # (an all-zero column is locally constant, hence fine)
        h = np.maximum(conv_pre, 0.0)
        if h.shape[-2] > 1:
            ordered = np.sort(h, axis=-2)
            top1, top2 = ordered[..., -1, :], ordered[..., -2, :]
            pool_ok = bool(np.all((top1 == 0.0) | (top1 - top2 > margin)))
        else:
            pool_ok = True
        if (
            np.min(np.abs(conv_pre)) > margin
            and np.min(np.abs(merge_pre)) > margin
            and pool_ok
        ):
            return params, batch
    raise MergecapError("could not find a smooth probe point; try another seed")


def cmd_gradcheck(args) -> int:
    started = time.perf_counter()
    config = ModelConfig(
        vocab_size=args.vocab_size, max_len=args.max_len, embedding_dim=args.embedding_dim,
        conv_filters=args.conv_filters, kernel_size=args.kernel_size,
        feature_dim=args.feature_dim, hidden_dim=args.hidden_dim,
        image_projection=args.image_projection, seed=args.seed,
    )
    params, batch = _gradcheck_problem(config, args.seed, args.eps)

    def fn(tensors):
        loss, grads = loss_and_grads(ModelParams.from_dict(tensors), batch)
        if args.inject_fault:
            grads = {k: (-g if k == "conv_w" else g) for k, g in grads.items()}
        return loss, grads

    errors = nn.grad_check(fn, params.as_dict(), eps=args.eps)
    ok = True
    for name, err in errors.items():
        status = "ok" if err < args.threshold else "FAIL"
        print(f"{name}\tmax_rel_err={err:.3e}\t{status}")
        ok = ok and err < args.threshold
    print(f"overall max: {max(errors.values()):.3e} ({'ok' if ok else 'FAIL'})")

    _write_manifest(
        os.path.join(_out_dir(), "gradcheck.manifest.json"), "gradcheck",
        {"config": config.to_dict(), "seed": args.seed, "eps": args.eps,
         "threshold": args.threshold, "errors": {k: float(v) for k, v in errors.items()}},
        [], started,
    )
    return 0 if ok else 1


# --- parser ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mergecap", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a vocabulary from the train split")
    p.add_argument("--captions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-count", type=_positive_int, default=1)
    _add_split_flags(p)
    p.set_defaults(fn=cmd_build_vocab)

    p = sub.add_parser("train", help="train a model and keep the best checkpoint")
    p.add_argument("--captions", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out-dir", required=True)
    _add_split_flags(p)
    p.add_argument("--embedding-dim", type=_positive_int, default=256)
    p.add_argument("--conv-filters", type=_positive_int, default=512)
    p.add_argument("--kernel-size", type=_positive_int, default=3)
    p.add_argument("--hidden-dim", type=_positive_int, default=512)
    p.add_argument("--max-len", type=_positive_int, default=None)
    p.add_argument("--image-projection", action="store_true")
    p.add_argument("--init-seed", type=int, default=0)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_positive_int, default=64)
    p.add_argument("--max-epochs", type=_positive_int, default=50)
    p.add_argument("--patience", type=_positive_int, default=5)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--clip-norm", type=float, default=5.0)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("caption", help="generate captions for images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--vocab", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--image-id", action="append")
    group.add_argument("--all", action="store_true")
    p.add_argument("--search", choices=("greedy", "beam"), default="beam")
    p.add_argument("--beam-width", type=_positive_int, default=5)
    p.add_argument("--max-len", type=_positive_int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_caption)

    p = sub.add_parser("evaluate", help="score decoded captions against references")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--vocab", required=True)
    _add_split_flags(p)
    p.add_argument("--split-name", choices=("train", "val", "test"), default="test")
    p.add_argument("--search", choices=("greedy", "beam"), default="beam")
    p.add_argument("--beam-width", type=_positive_int, default=5)
    p.add_argument("--max-len", type=_positive_int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--self-test", action="store_true",
                   help="score the first reference against the references (metric identity check)")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    for name, default in GRADCHECK_DEFAULTS.items():
        p.add_argument(f"--{name.replace('_', '-')}", type=_positive_int, default=default)
    p.add_argument("--image-projection", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-5)
    p.add_argument("--inject-fault", action="store_true", help="test hook: flip one gradient sign")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MergecapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
