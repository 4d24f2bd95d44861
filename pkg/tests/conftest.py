import csv

import numpy as np
import pytest
from PIL import Image

from helpers import random_set
from synbandit.store import write_embeddings

ALL_METRIC_NAMES = [
    "SSIM", "PSNR", "IS", "FID", "DPS", "FCS", "MEAN_DPS_FCS", "ME", "MD", "MX", "MN",
]


@pytest.fixture
def toy_workspace(tmp_path):
    """Embedding files, images, probs CSV and a config covering every metric."""
    rng = np.random.default_rng(42)
    n_real, n_syn, classes = 14, 12, 2
    real_mid = random_set(rng, n_real, 6, classes, domain="real", prefix="real")
    syn_mid = random_set(rng, n_syn, 6, classes, domain="synthetic", prefix="syn")
    real_high = random_set(
        rng, n_real, 8, classes, domain="real", extractor="highlevel",
        nonnegative=True, prefix="real",
    )
    syn_high = random_set(
        rng, n_syn, 8, classes, domain="synthetic", extractor="highlevel",
        nonnegative=True, prefix="syn",
    )
    # identical id <-> class pairing across extractors
    for high, mid in ((real_high, real_mid), (syn_high, syn_mid)):
        for rec_high, rec_mid in zip(high.records, mid.records):
            rec_high.class_id = rec_mid.class_id
    write_embeddings(real_mid, tmp_path / "real_mid.emb")
    write_embeddings(syn_mid, tmp_path / "syn_mid.emb")
    write_embeddings(real_high, tmp_path / "real_high.emb")
    write_embeddings(syn_high, tmp_path / "syn_high.emb")

    for sub, emb in (("real", real_mid), ("syn", syn_mid)):
        directory = tmp_path / "imgs" / sub
        directory.mkdir(parents=True)
        for rec in emb.records:
            pixels = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(directory / f"{rec.image_id}.png")

    with open(tmp_path / "probs.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "p0", "p1"])
        for rec in syn_mid.records:
            raw = rng.random(2) + 0.05
            row = raw / raw.sum()
            writer.writerow([rec.image_id, repr(float(row[0])), repr(float(row[1]))])

    return {
        "root": tmp_path,
        "syn_ids": [r.image_id for r in syn_mid.records],
        "real_mid": real_mid,
        "syn_mid": syn_mid,
    }


def write_config(path, body: str) -> str:
    path.write_text(body, encoding="utf-8")
    return str(path)


BASE_CONFIG = """
seed = 7
out_dir = "out"

[data]
real_midlevel = "real_mid.emb"
syn_midlevel = "syn_mid.emb"
real_highlevel = "real_high.emb"
syn_highlevel = "syn_high.emb"

[images]
real_dir = "imgs/real"
syn_dir = "imgs/syn"

[probs]
path = "probs.csv"

[usability]
k = 3
"""


def full_metric_config(extra: str = "") -> str:
    metrics = ", ".join(f'"{m.lower()}"' for m in ALL_METRIC_NAMES)
    return BASE_CONFIG + f"\n[score]\nmetrics = [{metrics}]\n" + extra
