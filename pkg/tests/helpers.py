"""Builders for toy embedding sets and images used across the test suite."""

from __future__ import annotations

import numpy as np

from synbandit.store import EmbeddingSet, FeatureRecord


def make_set(
    vectors: np.ndarray,
    class_ids: list[int],
    domain: str = "synthetic",
    extractor: str = "midlevel",
    tag: str = "toy",
    num_classes: int | None = None,
    prefix: str = "img",
) -> EmbeddingSet:
    vectors = np.asarray(vectors, dtype=np.float32)
    if num_classes is None:
        num_classes = int(max(class_ids)) + 1
    records = [
        FeatureRecord(
            image_id=f"{prefix}{i:04d}",
            class_id=int(c),
            domain=domain,
            extractor=extractor,
            vector=vectors[i],
        )
        for i, c in enumerate(class_ids)
    ]
    emb = EmbeddingSet(
        dataset_tag=tag,
        domain=domain,
        extractor=extractor,
        dim=vectors.shape[1],
        num_classes=num_classes,
        records=records,
    )
    emb.validate()
    return emb


def random_set(
    rng: np.random.Generator,
    n: int,
    dim: int,
    num_classes: int,
    domain: str = "synthetic",
    extractor: str = "midlevel",
    nonnegative: bool = False,
    prefix: str = "img",
) -> EmbeddingSet:
    vectors = rng.normal(size=(n, dim)).astype(np.float32)
    if nonnegative:
        vectors = np.abs(vectors)
    # every class gets at least one record
    class_ids = list(range(num_classes)) + [
        int(rng.integers(num_classes)) for _ in range(n - num_classes)
    ]
    return make_set(
        vectors, class_ids, domain=domain, extractor=extractor, prefix=prefix
    )
