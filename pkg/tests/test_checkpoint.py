import json
import struct

import numpy as np
import pytest

from attnbench.checkpoint import MAGIC, load_checkpoint, read_manifest, save_checkpoint
from attnbench.data import TokenBatch
from attnbench.errors import CheckpointFormatError
from attnbench.models import FAMILIES, build
from conftest import small_config


@pytest.mark.parametrize("family", FAMILIES)
@pytest.mark.parametrize("dtype", [np.float64, np.float32])
def test_round_trip_bit_exact(tmp_path, family, dtype):
    m = build(small_config(family), np.random.default_rng(3), dtype=dtype)
    save_checkpoint(tmp_path / "m.ckpt", m, {"epoch": 4, "avg_bleu": 0.123456789})
    m2, meta = load_checkpoint(tmp_path / "m.ckpt")
    assert meta == {"epoch": 4, "avg_bleu": 0.123456789}
    assert m2.config == m.config and m2.dtype == m.dtype
    for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
        assert n1 == n2 and p1.data.tobytes() == p2.data.tobytes()
    src = TokenBatch.from_sequences([[4, 5, 6], [7, 8]])
    assert m.greedy_decode(src).ids.tolist() == m2.greedy_decode(src).ids.tolist()


@pytest.fixture
def saved(tmp_path):
    m = build(small_config("gru_bahdanau"), np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, m)
    return path


def rewrite_manifest(path, edit):
    manifest, data = read_manifest(path)
    edit(manifest)
    head = json.dumps(manifest).encode()
    path.write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + data)


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointFormatError, match="nope.ckpt"):
        load_checkpoint(tmp_path / "nope.ckpt")


def test_bad_magic(saved):
    saved.write_bytes(b"garbage!" + saved.read_bytes()[8:])
    with pytest.raises(CheckpointFormatError, match="not an attnbench checkpoint"):
        load_checkpoint(saved)


def test_truncated(saved):
    saved.write_bytes(saved.read_bytes()[:-10])
    with pytest.raises(CheckpointFormatError, match="data bytes"):
        load_checkpoint(saved)


def test_corrupt_manifest(saved):
    blob = bytearray(saved.read_bytes())
    blob[20:30] = b"\xff" * 10
    saved.write_bytes(bytes(blob))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(saved)


def test_version(saved):
    rewrite_manifest(saved, lambda m: m.update(format_version=99))
    with pytest.raises(CheckpointFormatError, match="version"):
        load_checkpoint(saved)


def test_config_mismatch(saved):
    rewrite_manifest(saved, lambda m: m["config"].update(embed_dim=m["config"]["embed_dim"] + 1))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(saved)


def test_family_swap(saved):
    rewrite_manifest(saved, lambda m: m["config"].update(family="lstm_plain"))
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(saved)


def test_atomic_write_leaves_no_tmp(saved):
    assert [p.name for p in saved.parent.iterdir()] == ["m.ckpt"]
