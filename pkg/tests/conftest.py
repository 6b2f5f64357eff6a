"""Shared fixtures: a tiny on-disk corpus with features, vocab, checkpoint."""

import json

import numpy as np
import pytest

from mergecap.cli import main
from mergecap.data_io import save_features

BENGALI_WORDS = [
    "একটি", "মানুষ", "নদীর", "পাশে", "দাঁড়িয়ে", "আছে", "গাছের", "নিচে",
    "বসে", "ছেলে", "মেয়ে", "খেলছে", "নৌকা", "ভাসছে", "পাখি", "উড়ছে",
]


def synthetic_corpus(rng, n_images=10, feature_dim=16):
    captions = []
    features = {}
    for i in range(n_images):
        image_id = f"img{i:03d}"
        features[image_id] = rng.normal(size=feature_dim).astype(np.float32)
        for _ in range(2):
            words = [BENGALI_WORDS[int(w)] for w in rng.integers(0, len(BENGALI_WORDS), size=4)]
            captions.append({"image_id": image_id, "caption": " ".join(words) + "।"})
    return captions, features


@pytest.fixture(scope="session")
def workspace(tmp_path_factory):
    """Corpus + features + vocab + a briefly trained checkpoint."""
    root = tmp_path_factory.mktemp("workspace")
    rng = np.random.default_rng(42)
    captions, features = synthetic_corpus(rng)

    captions_path = root / "captions.jsonl"
    with open(captions_path, "w", encoding="utf-8") as fh:
        for row in captions:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    features_path = root / "features.feat"
    save_features(features, str(features_path))

    vocab_path = root / "vocab.tsv"
    assert main([
        "build-vocab", "--captions", str(captions_path), "--out", str(vocab_path),
        "--split-ratios", "0.8,0.1,0.1",
    ]) == 0

    out_dir = root / "run"
    assert main([
        "train",
        "--captions", str(captions_path), "--features", str(features_path),
        "--vocab", str(vocab_path), "--out-dir", str(out_dir),
        "--split-ratios", "0.8,0.1,0.1",
        "--embedding-dim", "8", "--conv-filters", "8", "--hidden-dim", "8",
        "--batch-size", "8", "--max-epochs", "2", "--patience", "5",
    ]) == 0

    return {
        "root": root,
        "captions": str(captions_path),
        "features": str(features_path),
        "vocab": str(vocab_path),
        "out_dir": str(out_dir),
        "checkpoint": str(out_dir / "checkpoint.mcap"),
    }
