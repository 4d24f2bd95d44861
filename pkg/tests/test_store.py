import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_set
from synbandit.store import (
    CorruptionError,
    EpochRecord,
    FormatError,
    ManifestError,
    SequencingError,
    StoreError,
    append_run_log,
    ingest_embeddings,
    manifest_path,
    read_run_log,
    write_embeddings,
)


def test_minimal_well_formed_file(tmp_path):
    emb = make_set(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), [0, 1])
    path = tmp_path / "toy.emb"
    write_embeddings(emb, path)
    back = ingest_embeddings(path)
    assert len(back.records) == 2
    assert back.dim == 3


def test_header_payload_count_mismatch(tmp_path):
    emb = make_set(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), [0, 1])
    path = tmp_path / "toy.emb"
    write_embeddings(emb, path)
    # append one extra payload row: 3 rows against a count-2 header
    with open(path, "ab") as fh:
        fh.write(np.zeros(3, dtype="<f4").tobytes())
    with pytest.raises(CorruptionError):
        ingest_embeddings(path)


def test_magic_mismatch(tmp_path):
    path = tmp_path / "bad.emb"
    path.write_bytes(b"NOPE" + b"\x00" * 16)
    (tmp_path / "bad.manifest.json").write_text("{}")
    with pytest.raises(FormatError):
        ingest_embeddings(path)


def test_refuses_empty_set(tmp_path):
    emb = make_set(np.array([[1.0], [2.0]]), [0, 0])
    emb.records = []
    with pytest.raises(ManifestError):
        write_embeddings(emb, tmp_path / "empty.emb")


def test_single_record_payload_is_four_bytes(tmp_path):
    emb = make_set(np.array([[0.0]]), [0])
    path = tmp_path / "one.emb"
    write_embeddings(emb, path)
    assert path.stat().st_size == 12 + 4


def test_duplicate_image_id_rejected(tmp_path):
    emb = make_set(np.array([[1.0], [2.0]]), [0, 0])
    emb.records[1].image_id = emb.records[0].image_id
    with pytest.raises(ManifestError):
        write_embeddings(emb, tmp_path / "dup.emb")


def test_class_id_out_of_range_rejected(tmp_path):
    emb = make_set(np.array([[1.0], [2.0]]), [0, 1])
    path = tmp_path / "cls.emb"
    write_embeddings(emb, path)
    manifest = json.loads(manifest_path(path).read_text())
    manifest["records"][1]["class_id"] = 7
    manifest_path(path).write_text(json.dumps(manifest))
    with pytest.raises(ManifestError):
        ingest_embeddings(path)


@settings(max_examples=30, deadline=None)
@given(
    n=st.integers(1, 8),
    dim=st.integers(1, 6),
    seed=st.integers(0, 10_000),
)
def test_roundtrip_bit_exact(tmp_path_factory, n, dim, seed):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(scale=100.0, size=(n, dim)).astype(np.float32)
    emb = make_set(vectors, [int(rng.integers(3)) for _ in range(n)], num_classes=3)
    path = tmp_path_factory.mktemp("rt") / "set.emb"
    write_embeddings(emb, path)
    back = ingest_embeddings(path)
    assert back.dataset_tag == emb.dataset_tag
    assert back.domain == emb.domain
    assert back.extractor == emb.extractor
    assert back.dim == emb.dim
    assert back.num_classes == emb.num_classes
    for a, b in zip(emb.records, back.records):
        assert a.image_id == b.image_id
        assert a.class_id == b.class_id
        assert a.vector.tobytes() == b.vector.tobytes()


def corrupt_header_rejections(tmp_path) -> int:
    """Every single-byte header corruption must raise a StoreError."""
    emb = make_set(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]), [0, 1])
    path = tmp_path / "fuzz.emb"
    write_embeddings(emb, path)
    original = path.read_bytes()
    rejected = 0
    cases = 0
    for pos in range(12):
        for delta in (1, 128, 255):
            corrupted = bytearray(original)
            corrupted[pos] = (corrupted[pos] + delta) % 256
            if bytes(corrupted) == original:
                continue
            cases += 1
            path.write_bytes(bytes(corrupted))
            try:
                ingest_embeddings(path)
            except StoreError:
                rejected += 1
    assert cases > 0
    return cases - rejected


def test_header_corruption_fuzz(tmp_path):
    assert corrupt_header_rejections(tmp_path) == 0


def test_run_log_append_and_sequencing(tmp_path):
    log = tmp_path / "run.jsonl"
    rec0 = EpochRecord(epoch=0, arm_index=0, val_accuracy=0.5, counts=[1, 0], rewards=[0.5, 0.0])
    append_run_log(log, rec0)
    assert len(log.read_text().splitlines()) == 1
    rec2 = EpochRecord(epoch=2, arm_index=0, val_accuracy=0.5, counts=[3, 0], rewards=[1.5, 0.0])
    with pytest.raises(SequencingError):
        append_run_log(log, rec2)


def test_run_log_roundtrip_100(tmp_path):
    log = tmp_path / "run.jsonl"
    rng = np.random.default_rng(7)
    written = []
    counts = [0, 0, 0]
    rewards = [0.0, 0.0, 0.0]
    for epoch in range(100):
        arm = int(rng.integers(3))
        acc = float(np.round(rng.random(), 6))
        counts[arm] += 1
        rewards[arm] += acc
        rec = EpochRecord(
            epoch=epoch,
            arm_index=arm,
            val_accuracy=acc,
            counts=list(counts),
            rewards=list(rewards),
            ucb_values=None if epoch < 3 else [float(rng.random()) for _ in range(3)],
        )
        append_run_log(log, rec)
        written.append(rec)
    back = read_run_log(log)
    assert back == written
