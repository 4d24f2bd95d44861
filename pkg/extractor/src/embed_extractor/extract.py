"""Pretrained-network feature extraction into the EMB1 format.

Mid-level features: Inception-V3's final convolutional block (Mixed_7c),
globally average-pooled to 2048-d. High-level features: VGG16's second
fully-connected layer after its ReLU, 4096-d. Both networks use their
canonical ImageNet preprocessing; ``weights="random"`` skips the weight
download for offline runs (seeded, so runs are reproducible).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models
from torchvision import transforms as T

from .emb_format import write_embeddings

log = logging.getLogger(__name__)

EXTRACTORS = ("midlevel", "highlevel")
HIGHLEVEL_DIM = 4096

IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]

PREPROCESSING = {
    "midlevel": "inception_v3: resize 342, center-crop 299, imagenet-normalize",
    "highlevel": "vgg16: resize 256, center-crop 224, imagenet-normalize",
}

_TRANSFORMS = {
    "midlevel": T.Compose(
        [
            T.Resize(342),
            T.CenterCrop(299),
            T.ToTensor(),
            T.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ]
    ),
    "highlevel": T.Compose(
        [
            T.Resize(256),
            T.CenterCrop(224),
            T.ToTensor(),
            T.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ]
    ),
}


class ExtractionError(Exception):
    pass


@dataclass
class ExtractionJob:
    images_dir: Path
    labels_csv: Path
    out_dir: Path
    extractor: str = "both"  # midlevel | highlevel | both
    dataset_tag: str = "dataset"
    domain: str = "real"
    weights: str = "pretrained"  # pretrained | random
    batch_size: int = 8
    device: str = "cpu"

    def extractors(self) -> list[str]:
        if self.extractor == "both":
            return list(EXTRACTORS)
        if self.extractor not in EXTRACTORS:
            raise ExtractionError(f"unknown extractor {self.extractor!r}")
        return [self.extractor]


@lru_cache(maxsize=2)
def _inception_backbone(weights: str) -> torch.nn.Module:
    if weights == "pretrained":
        model = models.inception_v3(weights=models.Inception_V3_Weights.IMAGENET1K_V1)
    else:
        torch.manual_seed(0)
        model = models.inception_v3(weights=None, init_weights=True)
    model.eval()
    return model


@lru_cache(maxsize=2)
def _vgg_backbone(weights: str) -> torch.nn.Module:
    if weights == "pretrained":
        model = models.vgg16(weights=models.VGG16_Weights.IMAGENET1K_V1)
    else:
        torch.manual_seed(0)
        model = models.vgg16(weights=None)
    model.eval()
    return model


def _midlevel_features(batch: torch.Tensor, weights: str, device: str) -> torch.Tensor:
    model = _inception_backbone(weights).to(device)
    captured: list[torch.Tensor] = []

    def hook(_module, _inputs, output):
        captured.append(output)

    handle = model.Mixed_7c.register_forward_hook(hook)
    try:
        with torch.no_grad():
            model(batch.to(device))
    finally:
        handle.remove()
    pooled = torch.nn.functional.adaptive_avg_pool2d(captured[0], 1)
    return torch.flatten(pooled, 1).cpu()


def _highlevel_features(batch: torch.Tensor, weights: str, device: str) -> torch.Tensor:
    model = _vgg_backbone(weights).to(device)
    with torch.no_grad():
        x = model.features(batch.to(device))
        x = model.avgpool(x)
        x = torch.flatten(x, 1)
        # classifier[0..4]: fc6 -> relu -> dropout -> fc7 -> relu; stop at
        # the second fully-connected layer's rectified activations (4096-d)
        for layer in model.classifier[:5]:
            x = layer(x)
    return x.cpu()


_FEATURE_FNS = {"midlevel": _midlevel_features, "highlevel": _highlevel_features}


def read_labels(labels_csv: Path) -> list[tuple[str, int]]:
    """Rows of (image filename, class id); header `image,class_id`."""
    entries = []
    with open(labels_csv, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["image", "class_id"]:
            raise ExtractionError(f"{labels_csv}: expected header image,class_id")
        for row in reader:
            if not row:
                continue
            entries.append((row[0], int(row[1])))
    if not entries:
        raise ExtractionError(f"{labels_csv}: no labelled images")
    return entries


def extract(job: ExtractionJob) -> dict[str, Path]:
    """Run the job; returns the embedding file per extractor.

    Undecodable images are skipped and listed in ``skip_report.json``;
    a job where every image fails is an error.
    """
    labels = read_labels(Path(job.labels_csv))
    num_classes = max(class_id for _, class_id in labels) + 1
    job.out_dir = Path(job.out_dir)
    job.out_dir.mkdir(parents=True, exist_ok=True)

    loaded: list[tuple[str, int, Image.Image]] = []
    skipped: list[dict] = []
    for filename, class_id in labels:
        path = Path(job.images_dir) / filename
        try:
            with Image.open(path) as img:
                loaded.append((Path(filename).stem, class_id, img.convert("RGB")))
        except Exception as exc:
            log.warning("skipping %s: %s", path, exc)
            skipped.append({"image": filename, "error": str(exc)})
    (job.out_dir / "skip_report.json").write_text(
        json.dumps(skipped, indent=1), encoding="utf-8"
    )
    if not loaded:
        raise ExtractionError("no images could be decoded")

    outputs: dict[str, Path] = {}
    for extractor in job.extractors():
        transform = _TRANSFORMS[extractor]
        feature_fn = _FEATURE_FNS[extractor]
        chunks = []
        for start in range(0, len(loaded), job.batch_size):
            batch_imgs = loaded[start : start + job.batch_size]
            tensors = torch.stack([transform(img) for _, _, img in batch_imgs])
            chunks.append(feature_fn(tensors, job.weights, job.device).numpy())
        vectors = np.concatenate(chunks, axis=0)
        if not np.all(np.isfinite(vectors)):
            raise ExtractionError(f"{extractor}: non-finite activations")
        if extractor == "highlevel" and vectors.shape[1] != HIGHLEVEL_DIM:
            raise ExtractionError(
                f"highlevel features are {vectors.shape[1]}-d, expected {HIGHLEVEL_DIM}"
            )
        out_path = job.out_dir / f"{extractor}.emb"
        write_embeddings(
            out_path,
            vectors,
            image_ids=[image_id for image_id, _, _ in loaded],
            class_ids=[class_id for _, class_id, _ in loaded],
            dataset_tag=job.dataset_tag,
            domain=job.domain,
            extractor=extractor,
            num_classes=num_classes,
            preprocessing=PREPROCESSING[extractor],
        )
        outputs[extractor] = out_path
        log.info("%s: wrote %d x %d embeddings", extractor, *vectors.shape)
    return outputs
