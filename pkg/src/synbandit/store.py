"""Embedding sets, their on-disk binary format, and per-epoch run logs.

Embedding file layout: magic ``EMB1`` (4 bytes), u32-LE record count N,
u32-LE dimension D, then N*D float32-LE values, row-major. Record identity
(image ids, class ids) lives in a sidecar manifest JSON with the same
basename and a ``.manifest.json`` suffix, listed in payload row order.

Run logs are UTF-8 JSON lines, one epoch per line.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"EMB1"
HEADER_SIZE = 12

DOMAINS = ("real", "synthetic")
EXTRACTORS = ("midlevel", "highlevel")


class StoreError(Exception):
    """Base class for embedding/run-log storage failures."""


class FormatError(StoreError):
    """File does not start with the expected magic bytes."""


class CorruptionError(StoreError):
    """Header and payload disagree (sizes, finiteness)."""


class ManifestError(StoreError):
    """Sidecar manifest missing, malformed, or inconsistent with the payload."""


class SequencingError(StoreError):
    """Run-log append out of order with the existing file."""


@dataclass
class FeatureRecord:
    """One image's embedding vector plus identity tags."""

    image_id: str
    class_id: int
    domain: str
    extractor: str
    vector: np.ndarray

    def summary_mean_std(self) -> tuple[float, float]:
        """Mean and population std of the vector components."""
        v = self.vector
        return float(np.mean(v)), float(np.std(v))


@dataclass
class EmbeddingSet:
    """A validated collection of feature records sharing tag/dim/classes."""

    dataset_tag: str
    domain: str
    extractor: str
    dim: int
    num_classes: int
    records: list[FeatureRecord] = field(default_factory=list)

    def validate(self) -> None:
        if self.domain not in DOMAINS:
            raise ManifestError(f"unknown domain {self.domain!r}")
        if self.extractor not in EXTRACTORS:
            raise ManifestError(f"unknown extractor {self.extractor!r}")
        if self.dim <= 0:
            raise ManifestError(f"dimension must be positive, got {self.dim}")
        if self.num_classes <= 0:
            raise ManifestError(f"num_classes must be positive, got {self.num_classes}")
        if not self.records:
            raise ManifestError("embedding set has no records")
        seen: set[str] = set()
        for rec in self.records:
            if rec.image_id in seen:
                raise ManifestError(f"duplicate image_id {rec.image_id!r}")
            seen.add(rec.image_id)
            if not 0 <= rec.class_id < self.num_classes:
                raise ManifestError(
                    f"class_id {rec.class_id} out of range [0, {self.num_classes}) "
                    f"for image {rec.image_id!r}"
                )
            if rec.vector.shape != (self.dim,):
                raise CorruptionError(
                    f"vector shape {rec.vector.shape} != ({self.dim},) "
                    f"for image {rec.image_id!r}"
                )
            if not np.all(np.isfinite(rec.vector)):
                raise CorruptionError(f"non-finite values in vector of {rec.image_id!r}")

    def vectors(self) -> np.ndarray:
        """All vectors stacked as an (N, dim) float32 array, row order preserved."""
        return np.stack([r.vector for r in self.records]).astype(np.float32)

    def class_ids(self) -> np.ndarray:
        return np.array([r.class_id for r in self.records], dtype=np.int64)

    def by_class(self) -> dict[int, list[FeatureRecord]]:
        out: dict[int, list[FeatureRecord]] = {}
        for rec in self.records:
            out.setdefault(rec.class_id, []).append(rec)
        return out


def manifest_path(path: Path | str) -> Path:
    """Sidecar manifest path: same basename, ``.manifest.json`` suffix."""
    p = Path(path)
    return p.with_name(p.stem + ".manifest.json")


def write_embeddings(emb_set: EmbeddingSet, path: Path | str) -> None:
    """Write an embedding set to `path` plus its sidecar manifest.

    The set is validated first; invalid sets (including empty ones) are
    refused rather than written.
    """
    emb_set.validate()
    path = Path(path)
    n = len(emb_set.records)
    payload = emb_set.vectors().astype("<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", n, emb_set.dim))
        fh.write(payload.tobytes())
    manifest = {
        "dataset_tag": emb_set.dataset_tag,
        "domain": emb_set.domain,
        "extractor": emb_set.extractor,
        "num_classes": emb_set.num_classes,
        "records": [
            {"image_id": r.image_id, "class_id": r.class_id} for r in emb_set.records
        ],
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=1), encoding="utf-8")


def ingest_embeddings(path: Path | str) -> EmbeddingSet:
    """Read and validate an embedding file plus its sidecar manifest."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER_SIZE or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic, not an EMB1 file")
    n, dim = struct.unpack("<II", raw[4:HEADER_SIZE])
    payload = raw[HEADER_SIZE:]
    expected = n * dim * 4
    if len(payload) != expected:
        raise CorruptionError(
            f"{path}: header promises {expected} payload bytes, found {len(payload)}"
        )

    mpath = manifest_path(path)
    if not mpath.exists():
        raise ManifestError(f"missing sidecar manifest {mpath}")
    try:
        manifest = json.loads(mpath.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{mpath}: malformed JSON ({exc})") from exc
    try:
        tag = manifest["dataset_tag"]
        domain = manifest["domain"]
        extractor = manifest["extractor"]
        num_classes = int(manifest["num_classes"])
        entries = manifest["records"]
    except (KeyError, TypeError) as exc:
        raise ManifestError(f"{mpath}: missing field ({exc})") from exc
    if len(entries) != n:
        raise ManifestError(
            f"{mpath}: manifest lists {len(entries)} records, header says {n}"
        )

    vectors = np.frombuffer(payload, dtype="<f4").reshape(n, dim) if n else np.zeros((0, dim))
    records = [
        FeatureRecord(
            image_id=str(e["image_id"]),
            class_id=int(e["class_id"]),
            domain=domain,
            extractor=extractor,
            vector=vectors[i].copy(),
        )
        for i, e in enumerate(entries)
    ]
    emb_set = EmbeddingSet(
        dataset_tag=tag,
        domain=domain,
        extractor=extractor,
        dim=dim,
        num_classes=num_classes,
        records=records,
    )
    emb_set.validate()
    return emb_set


@dataclass
class EpochRecord:
    """One training epoch: arm used, accuracy observed, bandit tallies after update."""

    epoch: int
    arm_index: int
    val_accuracy: float
    counts: list[int]
    rewards: list[float]
    ucb_values: list[float] | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "epoch": self.epoch,
                "arm_index": self.arm_index,
                "val_accuracy": self.val_accuracy,
                "ucb_values": self.ucb_values,
                "counts": self.counts,
                "rewards": self.rewards,
            }
        )

    @classmethod
    def from_json(cls, line: str) -> "EpochRecord":
        d = json.loads(line)
        return cls(
            epoch=int(d["epoch"]),
            arm_index=int(d["arm_index"]),
            val_accuracy=float(d["val_accuracy"]),
            counts=[int(c) for c in d["counts"]],
            rewards=[float(r) for r in d["rewards"]],
            ucb_values=None if d.get("ucb_values") is None else [float(u) for u in d["ucb_values"]],
        )

    def validate(self) -> None:
        if self.epoch < 0:
            raise SequencingError(f"negative epoch {self.epoch}")
        if not 0.0 <= self.val_accuracy <= 1.0:
            raise CorruptionError(f"val_accuracy {self.val_accuracy} outside [0, 1]")
        if sum(self.counts) != self.epoch + 1:
            raise CorruptionError(
                f"epoch {self.epoch}: counts sum {sum(self.counts)} != epoch+1"
            )


def append_run_log(log_path: Path | str, record: EpochRecord) -> None:
    """Append one epoch record; `record.epoch` must equal the current line count."""
    record.validate()
    log_path = Path(log_path)
    existing = 0
    if log_path.exists():
        with open(log_path, "r", encoding="utf-8") as fh:
            existing = sum(1 for line in fh if line.strip())
    if record.epoch != existing:
        raise SequencingError(
            f"cannot append epoch {record.epoch}: log already has {existing} records"
        )
    with open(log_path, "a", encoding="utf-8") as fh:
        fh.write(record.to_json() + "\n")


def read_run_log(log_path: Path | str) -> list[EpochRecord]:
    """Parse a run log, checking the epoch sequence is 0, 1, 2, ..."""
    records = []
    with open(log_path, "r", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            rec = EpochRecord.from_json(line)
            if rec.epoch != i:
                raise SequencingError(f"line {i} holds epoch {rec.epoch}")
            rec.validate()
            records.append(rec)
    return records
