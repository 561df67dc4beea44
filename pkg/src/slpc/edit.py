"""Latent-point editing: feature (re)generation, correspondence,
interpolation, and combination of sparse latent shapes.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

from .diffusion import FeatureDenoiser, NoiseSchedule, PositionDenoiser, partial_resample, sample_features
from .geometry import PointCloud
from .nets import AutoEncoder, SparseLatent

__all__ = [
    "EditMode",
    "EditRequest",
    "Correspondence",
    "ModelBundle",
    "edit",
    "correspond",
    "interpolate",
    "combine",
]


class EditMode(Enum):
    RESAMPLE_ALL = "resample_all"
    RESAMPLE_MOVED = "resample_moved"
    KEEP_FEATURES = "keep_features"


@dataclass
class EditRequest:
    latent: SparseLatent
    moved_mask: np.ndarray  # (k,) bool; True rows get new features in RESAMPLE_MOVED
    mode: EditMode
    seed: int = 0

    def __post_init__(self):
        self.moved_mask = np.asarray(self.moved_mask, dtype=bool)
        if self.moved_mask.shape != (self.latent.k,):
            raise ValueError(
                f"moved_mask length {self.moved_mask.shape} != latent count {self.latent.k}"
            )
        if self.mode is EditMode.RESAMPLE_MOVED and self.moved_mask.all():
            raise ValueError("resample_moved needs at least one fixed point with a feature")


@dataclass
class Correspondence:
    """Permutation pi: row i of shape A matches row pi[i] of shape B."""

    permutation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.permutation, dtype=np.int64)
        if sorted(p.tolist()) != list(range(len(p))):
            raise ValueError("correspondence must be a bijection")
        self.permutation = p

    def apply(self, latent: SparseLatent) -> SparseLatent:
        """Reorder shape-B rows so row i aligns with shape-A row i."""
        return SparseLatent(
            latent.positions[self.permutation], latent.features[self.permutation]
        )


@dataclass
class ModelBundle:
    """The trained trio used by editing, sampling and the service."""

    ae: AutoEncoder
    position_model: PositionDenoiser
    feature_model: FeatureDenoiser
    schedule: NoiseSchedule

    def decode_cloud(self, latent: SparseLatent) -> PointCloud:
        _, _, x4, f4 = self.ae.decode(latent)
        return PointCloud(x4, f4)

    def generate(self, rng) -> SparseLatent:
        from .diffusion import sample_positions

        x = sample_positions(self.position_model, self.schedule, self.ae.cfg.n_latent, rng)
        f = sample_features(self.feature_model, self.schedule, x, rng)
        return SparseLatent(x, f)


def edit(req: EditRequest, models: ModelBundle) -> tuple[SparseLatent, PointCloud]:
    """Apply an edit request and decode the result.

    RESAMPLE_ALL draws fresh features for every latent point; RESAMPLE_MOVED
    regenerates only the moved rows (fixed rows keep their features exactly);
    KEEP_FEATURES decodes the latent as-is.
    """
    if req.latent.k != models.ae.cfg.n_latent:
        raise ValueError(
            f"latent count {req.latent.k} != model count {models.ae.cfg.n_latent}"
        )
    if req.latent.features.shape[1] != models.ae.cfg.feature_dim:
        raise ValueError(
            f"feature dim {req.latent.features.shape[1]} != model dim "
            f"{models.ae.cfg.feature_dim}"
        )
    rng = np.random.default_rng(req.seed)
    if req.mode is EditMode.KEEP_FEATURES:
        latent = req.latent
    elif req.mode is EditMode.RESAMPLE_ALL:
        f = sample_features(models.feature_model, models.schedule, req.latent.positions, rng)
        latent = SparseLatent(req.latent.positions, f)
    else:
        f = partial_resample(
            models.feature_model,
            models.schedule,
            req.latent.positions,
            req.latent.features,
            req.moved_mask,
            rng,
        )
        latent = SparseLatent(req.latent.positions, f)
    return latent, models.decode_cloud(latent)


def correspond(a: SparseLatent, b: SparseLatent) -> Correspondence:
    """Minimum total squared-distance bijection after centroid alignment."""
    if a.k != b.k:
        raise ValueError(f"latent counts differ: {a.k} vs {b.k}")
    pa = a.positions - a.positions.mean(axis=0)
    pb = b.positions - b.positions.mean(axis=0)
    cost = (
        np.sum(pa * pa, axis=1)[:, None]
        + np.sum(pb * pb, axis=1)[None, :]
        - 2.0 * (pa.astype(np.float64) @ pb.astype(np.float64).T)
    )
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(a.k, dtype=np.int64)
    perm[rows] = cols
    return Correspondence(perm)


def interpolate(a: SparseLatent, b: SparseLatent, s: float, mask=None) -> SparseLatent:
    """Linear blend of corresponded latents; masked rows keep shape-a values.

    b must already be row-aligned to a (apply a Correspondence first).
    """
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"interpolation parameter s={s} outside [0, 1]")
    if a.k != b.k:
        raise ValueError(f"latent counts differ: {a.k} vs {b.k}")
    pos = (1.0 - s) * a.positions + s * b.positions
    feat = (1.0 - s) * a.features + s * b.features
    if s == 0.0:
        pos, feat = a.positions.copy(), a.features.copy()
    elif s == 1.0:
        pos, feat = b.positions.copy(), b.features.copy()
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (a.k,):
            raise ValueError(f"mask length {mask.shape} != latent count {a.k}")
        pos[mask] = a.positions[mask]
        feat[mask] = a.features[mask]
    return SparseLatent(pos, feat)


def combine(parts: list[tuple[SparseLatent, np.ndarray]]) -> SparseLatent:
    """Assemble a latent from row subsets of several sources.

    Each (latent, indices) pair contributes its rows at those indices,
    copied verbatim. The index subsets must be disjoint and cover 0..k-1.
    """
    if not parts:
        raise ValueError("combine needs at least one part")
    k = parts[0][0].k
    d = parts[0][0].features.shape[1]
    filled = np.zeros(k, dtype=bool)
    pos = np.zeros((k, 3), dtype=np.float32)
    feat = np.zeros((k, d), dtype=np.float32)
    for latent, indices in parts:
        if latent.k != k or latent.features.shape[1] != d:
            raise ValueError("combine parts must share latent shape")
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= k):
            raise ValueError(f"combine indices out of range 0..{k - 1}")
        if filled[idx].any():
            raise ValueError("combine index subsets collide")
        filled[idx] = True
        pos[idx] = latent.positions[idx]
        feat[idx] = latent.features[idx]
    if not filled.all():
        raise ValueError(f"combine covers {int(filled.sum())} of {k} slots")
    return SparseLatent(pos, feat)
