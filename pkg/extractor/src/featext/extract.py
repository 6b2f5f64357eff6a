"""Turn a directory of images into a FEAT1 feature file.

The extractor runs a 50-layer residual network with its classification
head removed, yielding one 2048-dim vector per image from the pooled
penultimate layer. Preprocessing is the network's canonical pipeline:
resize to 256, center-crop 224, normalize with the ImageNet channel
statistics. Records are keyed by filename stem and written in sorted
order, so output is deterministic for fixed weights.

Weights come from a local state-dict file when provided; otherwise the
network is seeded-randomly initialized, which preserves output shape and
determinism for format-level testing without downloadable weights.
"""

from __future__ import annotations

import json
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import nn
from torchvision import models, transforms

FEAT_MAGIC = b"FEAT1"
IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".webp"}
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


@dataclass
class ExtractionJob:
    image_dir: str
    output_path: str
    model_name: str = "resnet50"
    weights_path: str | None = None
    batch_size: int = 8
    device: str = "cpu"
    seed: int = 0
    skipped: list[dict] = field(default_factory=list)


def build_encoder(job: ExtractionJob) -> tuple[nn.Module, int]:
    """Headless backbone in eval mode plus its output width."""
    if job.model_name != "resnet50":
        raise ValueError(f"unsupported model {job.model_name!r}")
    torch.manual_seed(job.seed)
    backbone = models.resnet50(weights=None)
    if job.weights_path:
        state = torch.load(job.weights_path, map_location="cpu", weights_only=True)
        backbone.load_state_dict(state)
    feature_dim = backbone.fc.in_features
    encoder = nn.Sequential(*list(backbone.children())[:-1])  # drop the classifier
    encoder.eval()
    return encoder.to(job.device), feature_dim


def preprocessing() -> transforms.Compose:
    return transforms.Compose(
        [
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ]
    )


def list_images(image_dir: str) -> list[Path]:
    root = Path(image_dir)
    if not root.is_dir():
        raise NotADirectoryError(f"{image_dir} is not a directory")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        dupes = sorted({s for s in stems if stems.count(s) > 1})
        raise ValueError(f"duplicate image ids (filename stems): {', '.join(dupes)}")
    return paths


def write_feat1(features: dict[str, np.ndarray], path: str) -> None:
    """FEAT1 container: magic, u32 count, u32 dim, then
    (u16 id length, id bytes, dim * f32) per record, all little-endian."""
    ids = sorted(features)
    dim = len(features[ids[0]])
    with open(path, "wb") as fh:
        fh.write(FEAT_MAGIC)
        fh.write(struct.pack("<II", len(ids), dim))
        for image_id in ids:
            raw = image_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(features[image_id], dtype="<f4").tobytes())


def extract(job: ExtractionJob) -> dict[str, np.ndarray]:
    """Encode every readable image and write the FEAT1 file.

    Unreadable images are skipped with a warning, recorded in job.skipped,
    and listed in a `<output>.skipped.json` sidecar when any occur.

    Raises:
        RuntimeError: no image could be encoded.
    """
    encoder, feature_dim = build_encoder(job)
    prep = preprocessing()
    paths = list_images(job.image_dir)

    tensors: list[torch.Tensor] = []
    ids: list[str] = []
    for path in paths:
        try:
            with Image.open(path) as img:
                tensors.append(prep(img.convert("RGB")))
            ids.append(path.stem)
        except (OSError, ValueError) as exc:
            job.skipped.append({"path": str(path), "reason": str(exc)})
            print(f"warning: skipping {path}: {exc}", file=sys.stderr)

    if not ids:
        raise RuntimeError(f"no readable images in {job.image_dir}")

    features: dict[str, np.ndarray] = {}
    with torch.no_grad():
        for lo in range(0, len(ids), job.batch_size):
            batch = torch.stack(tensors[lo : lo + job.batch_size]).to(job.device)
            pooled = encoder(batch).reshape(len(batch), feature_dim)
            for image_id, vec in zip(ids[lo : lo + job.batch_size], pooled.cpu().numpy()):
                features[image_id] = vec.astype(np.float32)

    write_feat1(features, job.output_path)
    if job.skipped:
        with open(job.output_path + ".skipped.json", "w", encoding="utf-8") as fh:
            json.dump(job.skipped, fh, indent=2)
    return features
