"""Writer for the EMB1 embedding interchange format.

Layout: magic ``EMB1``, u32-LE record count, u32-LE dimension, then
count x dim float32-LE values row-major; identity in a sidecar
``<basename>.manifest.json`` listing records in payload row order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"


def write_embeddings(
    path: Path | str,
    vectors: np.ndarray,
    image_ids: list[str],
    class_ids: list[int],
    dataset_tag: str,
    domain: str,
    extractor: str,
    num_classes: int,
    preprocessing: str = "",
) -> None:
    path = Path(path)
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    n, dim = vectors.shape
    if not (n == len(image_ids) == len(class_ids)):
        raise ValueError("vectors, image_ids and class_ids must align")
    if n == 0:
        raise ValueError("refusing to write an empty embedding set")
    if not np.all(np.isfinite(vectors)):
        raise ValueError("non-finite values in embedding payload")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, dim))
        fh.write(vectors.tobytes())
    manifest = {
        "dataset_tag": dataset_tag,
        "domain": domain,
        "extractor": extractor,
        "num_classes": num_classes,
        "preprocessing": preprocessing,
        "records": [
            {"image_id": image_id, "class_id": int(class_id)}
            for image_id, class_id in zip(image_ids, class_ids)
        ],
    }
    manifest_file = path.with_name(path.stem + ".manifest.json")
    manifest_file.write_text(json.dumps(manifest, indent=1), encoding="utf-8")
