"""File formats and dataset handling.

Captions travel as UTF-8 JSON lines ({"image_id": ..., "caption": ...}).
Image features use the FEAT1 binary container and model checkpoints the
MCAP1 container; both are little-endian with a magic prefix, and both
round-trip bit-exactly. Splitting is by image id so both captions of an
image always land in the same split.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DuplicateId,
    FormatError,
    ParseError,
    ShapeMismatch,
    SplitError,
    TruncatedFile,
    VersionMismatch,
    VocabMismatch,
)
from .model import ModelConfig, ModelParams, expected_shapes

FEAT_MAGIC = b"FEAT1"
CHECKPOINT_MAGIC = b"MCAP1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class CaptionRecord:
    image_id: str
    caption: str


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test image-id partitions, in shuffle order."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def subset(self, name: str) -> tuple[str, ...]:
        return getattr(self, name)


# --- captions ---

def load_captions(path: str) -> list[CaptionRecord]:
    """Read JSON-lines caption records, preserving file order.

    Blank lines are skipped; anything else malformed raises ParseError
    with its 1-based line number. Duplicate (image_id, caption) pairs are
    kept, since the dataset legitimately repeats captions.
    """
    records: list[CaptionRecord] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(line_no, "expected a JSON object")
            image_id = obj.get("image_id")
            caption = obj.get("caption")
            if not isinstance(image_id, str) or not image_id:
                raise ParseError(line_no, "missing or empty image_id")
            if not isinstance(caption, str) or not caption:
                raise ParseError(line_no, "missing or empty caption")
            records.append(CaptionRecord(image_id=image_id, caption=caption))
    return records


def save_captions(records: Sequence[CaptionRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps({"image_id": record.image_id, "caption": record.caption},
                                ensure_ascii=False) + "\n")


# --- FEAT1 image features ---

def save_features(features: dict[str, np.ndarray], path: str) -> None:
    """Write a FEAT1 file (records in sorted id order).

    All vectors must share one dimension; they are stored as f32.
    """
    ids = sorted(features)
    if not ids:
        raise ValueError("refusing to write an empty feature file")
    dim = len(np.asarray(features[ids[0]]).reshape(-1))
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<II", len(ids), dim))
        for image_id in ids:
            vec = np.asarray(features[image_id], dtype="<f4").reshape(-1)
            if vec.shape != (dim,):
                raise ValueError(f"feature {image_id!r} has dim {vec.shape[0]}, expected {dim}")
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(vec.tobytes())


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFile(f"file ended while reading {what}")
    return data


def load_features(path: str) -> dict[str, np.ndarray]:
    """Read a FEAT1 file into an id -> float32 vector map.

    Raises:
        FormatError: wrong magic or trailing garbage.
        TruncatedFile: payload shorter than the header promises.
        DuplicateId: an image id occurs twice.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(FEAT_MAGIC))
        if magic != FEAT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {FEAT_MAGIC!r}")
        count, dim = struct.unpack("<II", _read_exact(fh, 8, "header"))
        features: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack("<H", _read_exact(fh, 2, "id length"))
            try:
                image_id = _read_exact(fh, id_len, "id bytes").decode("utf-8")
            except UnicodeDecodeError as exc:
                raise FormatError(f"image id is not valid UTF-8: {exc}") from exc
            vec = np.frombuffer(_read_exact(fh, 4 * dim, f"vector for {image_id!r}"), dtype="<f4")
            if image_id in features:
                raise DuplicateId(f"image id {image_id!r} appears twice")
            features[image_id] = vec.copy()
        if fh.read(1):
            raise FormatError("trailing bytes after the declared records")
    return features


# --- splits ---

def split_dataset(
    ids: Sequence[str], counts: tuple[int, int, int], seed: int
) -> DatasetSplit:
    """Seeded shuffle then partition into train/val/test of exact sizes.

    Raises:
        SplitError: counts do not sum to len(ids), or ids repeat.
    """
    n_train, n_val, n_test = counts
    if min(counts) < 0 or n_train + n_val + n_test != len(ids):
        raise SplitError(f"counts {counts} do not partition {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise SplitError("ids must be unique")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    return DatasetSplit(
        train=tuple(shuffled[:n_train]),
        val=tuple(shuffled[n_train : n_train + n_val]),
        test=tuple(shuffled[n_train + n_val :]),
    )


def ratios_to_counts(total: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder rounding of split ratios to counts summing to total."""
    if min(ratios) < 0 or sum(ratios) <= 0:
        raise SplitError(f"ratios {ratios} must be non-negative and sum > 0")
    scale = total / sum(ratios)
    raw = [r * scale for r in ratios]
    counts = [int(x) for x in raw]
    remainders = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts[0], counts[1], counts[2]


# --- MCAP1 checkpoints ---

def save_checkpoint(params: ModelParams, config: ModelConfig, vocab_hash: str, path: str) -> None:
    """Write an MCAP1 checkpoint: JSON metadata then f32 tensors.

    Parameters must be float32 (the on-disk precision) so the round trip
    is bit-exact.
    """
    tensors = params.as_dict()
    for name, value in tensors.items():
        if value.dtype != np.float32:
            raise ValueError(f"checkpoint tensors must be float32; {name!r} is {value.dtype}")
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    metadata = json.dumps(
        {"config": config.to_dict(), "manifest": manifest, "vocab_hash": vocab_hash}
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(metadata)))
        fh.write(metadata)
        for value in tensors.values():
            fh.write(np.ascontiguousarray(value, dtype="<f4").tobytes())


def load_checkpoint(
    path: str, expected_vocab_hash: str | None = None
) -> tuple[ModelParams, ModelConfig, str]:
    """Read an MCAP1 checkpoint back into (params, config, vocab_hash).

    Raises:
        FormatError: bad magic, corrupt metadata, or payload size mismatch.
        VersionMismatch: unknown format version.
        VocabMismatch: expected_vocab_hash given and different.
        ShapeMismatch: manifest shapes disagree with the stored config.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        try:
            version, meta_len = struct.unpack("<II", _read_exact(fh, 8, "header"))
        except TruncatedFile as exc:
            raise FormatError(str(exc)) from exc
        if version != CHECKPOINT_VERSION:
            raise VersionMismatch(f"version {version}, expected {CHECKPOINT_VERSION}")
        try:
            metadata = json.loads(_read_exact(fh, meta_len, "metadata").decode("utf-8"))
            config = ModelConfig.from_dict(metadata["config"])
            manifest = metadata["manifest"]
            vocab_hash = metadata["vocab_hash"]
        except (TruncatedFile, ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"corrupt metadata: {exc}") from exc
        if expected_vocab_hash is not None and vocab_hash != expected_vocab_hash:
            raise VocabMismatch(f"checkpoint vocabulary {vocab_hash[:12]}... differs")
        shapes = expected_shapes(config)
        if [m["name"] for m in manifest] != list(shapes):
            raise ShapeMismatch("tensor manifest names disagree with the config")
        tensors: dict[str, np.ndarray] = {}
        for entry in manifest:
            name, shape = entry["name"], tuple(entry["shape"])
            if shape != shapes[name]:
                raise ShapeMismatch(f"{name!r} stored as {shape}, config implies {shapes[name]}")
            size = int(np.prod(shape)) if shape else 1
            try:
                raw = _read_exact(fh, 4 * size, f"tensor {name!r}")
            except TruncatedFile as exc:
                raise FormatError(str(exc)) from exc
            tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        if fh.read(1):
            raise FormatError("trailing bytes after the declared tensors")
    return ModelParams.from_dict(tensors), config, vocab_hash
