"""Checkpoint container: bit-exact roundtrips, corruption detection, and a
hand-authored byte fixture pinned to the documented layout.
"""

import json
import struct

import numpy as np
import pytest

from conftest import TINY_MODEL
from slpc.checkpoint import (
    MAGIC,
    VERSION,
    BadMagicError,
    CheckpointError,
    TruncatedError,
    VersionError,
    checkpoint_bytes,
    load_bundle,
    load_checkpoint,
    load_model,
    save_autoencoder,
    save_checkpoint,
    save_denoiser,
)
from slpc.nets import AutoEncoder


def _tensors(seed=0):
    rng = np.random.default_rng(seed)
    return {
        "a.w": rng.normal(size=(3, 4)).astype(np.float32),
        "a.b": rng.normal(size=(4,)).astype(np.float32),
        "z": rng.normal(size=(2, 2, 2)).astype(np.float32),
    }


def test_roundtrip_bit_exact(tmp_path):
    tensors = _tensors()
    cfg = {"kind": "test", "nested": {"x": 1}}
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, tensors, cfg, seed=77)
    back, cfg2, seed = load_checkpoint(path)
    assert cfg2 == cfg
    assert seed == 77
    assert set(back) == set(tensors)
    for name, arr in tensors.items():
        assert np.array_equal(back[name], arr)
        assert back[name].dtype == np.float32


def test_bad_magic(tmp_path):
    path = tmp_path / "m.ckpt"
    data = checkpoint_bytes(_tensors(), {}, 0)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(BadMagicError, match="magic"):
        load_checkpoint(path)


def test_version_mismatch(tmp_path):
    path = tmp_path / "m.ckpt"
    data = checkpoint_bytes(_tensors(), {}, 0)
    path.write_bytes(data[:4] + struct.pack("<I", 99) + data[8:])
    with pytest.raises(VersionError, match="version 99"):
        load_checkpoint(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(checkpoint_bytes(_tensors(), {}, 0)[:-8])
    with pytest.raises(TruncatedError, match="beyond payload"):
        load_checkpoint(path)


def test_truncated_preamble(tmp_path):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"SLP")
    with pytest.raises(TruncatedError, match="preamble"):
        load_checkpoint(path)


def test_overlapping_offsets_rejected(tmp_path):
    header = {
        "tensors": {
            "a": {"dtype": "<f4", "shape": [2], "offset": 0},
            "b": {"dtype": "<f4", "shape": [2], "offset": 4},
        },
        "config": {},
        "seed": 0,
    }
    hjson = json.dumps(header).encode()
    payload = struct.pack("<3f", 1.0, 2.0, 3.0)
    data = MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(hjson)) + hjson + payload
    path = tmp_path / "m.ckpt"
    path.write_bytes(data)
    with pytest.raises(CheckpointError, match="overlap"):
        load_checkpoint(path)


def test_hand_authored_fixture(tmp_path):
    """Bytes written from the format doc alone parse to the known tensor."""
    header = {
        "tensors": {"w": {"dtype": "<f4", "shape": [2, 2], "offset": 0}},
        "config": {"kind": "fixture"},
        "seed": 5,
    }
    hjson = json.dumps(header).encode("utf-8")
    payload = struct.pack("<4f", 1.5, -2.0, 0.25, 4.0)
    blob = b"SLPC" + struct.pack("<I", 1) + struct.pack("<Q", len(hjson)) + hjson + payload
    path = tmp_path / "fixture.ckpt"
    path.write_bytes(blob)
    tensors, cfg, seed = load_checkpoint(path)
    assert cfg == {"kind": "fixture"}
    assert seed == 5
    assert np.array_equal(
        tensors["w"], np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
    )


def test_autoencoder_checkpoint_reproduces_outputs(tmp_path):
    ae = AutoEncoder(TINY_MODEL)
    path = tmp_path / "ae.ckpt"
    save_autoencoder(path, ae, seed=3)
    loaded, cfg, seed = load_model(path)
    assert seed == 3
    assert cfg["kind"] == "autoencoder"
    assert loaded.cfg == ae.cfg
    for name, arr in ae.named_state().items():
        assert np.array_equal(arr, loaded.named_state()[name])


def test_bundle_schedule_mismatch_rejected(tmp_path, tiny_bundle):
    save_autoencoder(tmp_path / "ae.ckpt", tiny_bundle.ae)
    save_denoiser(
        tmp_path / "pos.ckpt",
        tiny_bundle.position_model,
        "position_ddpm",
        {"T": 20, "beta_start": 1e-4, "beta_end": 0.02},
    )
    save_denoiser(
        tmp_path / "feat.ckpt",
        tiny_bundle.feature_model,
        "feature_ddpm",
        {"T": 50, "beta_start": 1e-4, "beta_end": 0.02},
    )
    with pytest.raises(CheckpointError, match="schedules differ"):
        load_bundle(tmp_path / "ae.ckpt", tmp_path / "pos.ckpt", tmp_path / "feat.ckpt")


def test_bundle_wrong_kinds_rejected(tmp_path, tiny_bundle):
    save_autoencoder(tmp_path / "ae.ckpt", tiny_bundle.ae)
    with pytest.raises(CheckpointError):
        load_bundle(tmp_path / "ae.ckpt", tmp_path / "ae.ckpt", tmp_path / "ae.ckpt")
