"""Checkpoint container: named float32 tensors + config + seed.

Layout (all integers little-endian):

    bytes 0..3    magic "SLPC"
    bytes 4..7    format version, uint32 (currently 1)
    bytes 8..15   header length H, uint64
    bytes 16..16+H  JSON header (utf-8)
    rest          payload: raw little-endian float32 tensor data

The header maps tensor names to {dtype, shape, offset}; offsets are
relative to the payload start and must be non-overlapping and in-bounds.
Roundtrips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .diffusion import DenoiserConfig, FeatureDenoiser, PositionDenoiser, make_schedule
from .nets import AutoEncoder, AutoencoderConfig

__all__ = [
    "CheckpointError",
    "BadMagicError",
    "VersionError",
    "TruncatedError",
    "MAGIC",
    "VERSION",
    "checkpoint_bytes",
    "save_checkpoint",
    "load_checkpoint",
    "save_autoencoder",
    "save_denoiser",
    "load_model",
]

MAGIC = b"SLPC"
VERSION = 1


class CheckpointError(ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def checkpoint_bytes(tensors: dict[str, np.ndarray], config: dict, seed: int) -> bytes:
    entries = {}
    payload = bytearray()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        entries[name] = {
            "dtype": "<f4",
            "shape": list(arr.shape),
            "offset": len(payload),
        }
        payload.extend(arr.tobytes())
    header = json.dumps({"tensors": entries, "config": config, "seed": seed}).encode("utf-8")
    return MAGIC + struct.pack("<I", VERSION) + struct.pack("<Q", len(header)) + header + bytes(payload)


def save_checkpoint(path, tensors, config, seed=0):
    Path(path).write_bytes(checkpoint_bytes(tensors, config, seed))


def load_checkpoint(path):
    """-> (tensors dict, config dict, seed). Raises distinct CheckpointErrors."""
    data = Path(path).read_bytes()
    if len(data) < 16:
        raise TruncatedError(f"file too short for checkpoint preamble ({len(data)} bytes)")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != VERSION:
        raise VersionError(f"unsupported checkpoint version {version}, expected {VERSION}")
    (hlen,) = struct.unpack("<Q", data[8:16])
    if len(data) < 16 + hlen:
        raise TruncatedError(f"header claims {hlen} bytes, file has {len(data) - 16}")
    try:
        header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unparseable header: {e}") from None
    payload = data[16 + hlen :]

    spans = []
    tensors = {}
    for name, meta in header["tensors"].items():
        if meta["dtype"] != "<f4":
            raise CheckpointError(f"tensor {name!r} has unsupported dtype {meta['dtype']!r}")
        shape = tuple(meta["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        start = meta["offset"]
        if start < 0 or start + nbytes > len(payload):
            raise TruncatedError(
                f"tensor {name!r} spans [{start}, {start + nbytes}) beyond payload "
                f"size {len(payload)}"
            )
        spans.append((start, start + nbytes, name))
        tensors[name] = np.frombuffer(payload[start : start + nbytes], dtype="<f4").reshape(shape).copy()
    spans.sort()
    for (s0, e0, n0), (s1, _, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CheckpointError(f"tensors {n0!r} and {n1!r} overlap in the payload")
    return tensors, header["config"], header.get("seed", 0)


def save_autoencoder(path, ae: AutoEncoder, seed=0):
    config = {"kind": "autoencoder", "model": asdict(ae.cfg)}
    save_checkpoint(path, ae.named_state(), config, seed)


def save_denoiser(path, model, kind, schedule_params, seed=0):
    """kind: 'position_ddpm' | 'feature_ddpm'; schedule_params: T/beta_start/beta_end."""
    config = {"kind": kind, "model": asdict(model.cfg), "schedule": dict(schedule_params)}
    save_checkpoint(path, model.named_state(), config, seed)


def _tupled(d, keys):
    return {k: tuple(v) if k in keys else v for k, v in d.items()}


def load_model(path):
    """Rebuild a model object from a checkpoint; -> (model, config, seed)."""
    tensors, config, seed = load_checkpoint(path)
    kind = config.get("kind")
    if kind == "autoencoder":
        cfg = AutoencoderConfig(
            **_tupled(config["model"], {"sa_points", "sa_dims", "sa_k", "pu_gammas", "pu_hidden"})
        )
        model = AutoEncoder(cfg)
    elif kind in ("position_ddpm", "feature_ddpm"):
        cfg = DenoiserConfig(**config["model"])
        model = PositionDenoiser(cfg) if kind == "position_ddpm" else FeatureDenoiser(cfg)
    else:
        raise CheckpointError(f"unknown model kind {kind!r}")
    model.load_state(tensors)
    return model, config, seed


def load_bundle(ae_path, pos_path, feat_path):
    """Load the trained trio and their shared noise schedule."""
    from .edit import ModelBundle

    ae, _, _ = load_model(ae_path)
    pos, pos_cfg, _ = load_model(pos_path)
    feat, feat_cfg, _ = load_model(feat_path)
    if not isinstance(ae, AutoEncoder) or not isinstance(pos, PositionDenoiser) or not isinstance(
        feat, FeatureDenoiser
    ):
        raise CheckpointError("checkpoint kinds do not form an AE + position + feature trio")
    if pos_cfg["schedule"] != feat_cfg["schedule"]:
        raise CheckpointError(
            f"DDPM schedules differ: {pos_cfg['schedule']} vs {feat_cfg['schedule']}"
        )
    sp = pos_cfg["schedule"]
    sched = make_schedule(sp["T"], sp["beta_start"], sp["beta_end"])
    return ModelBundle(ae, pos, feat, sched)
