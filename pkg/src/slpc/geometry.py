"""Point-cloud kernels: FPS, k-NN, Chamfer / EMD / normal-consistency.

All distances are squared-Euclidean unless stated otherwise. Chamfer uses
the mean-per-side squared-distance convention; EMD is the exact optimal
assignment cost divided by N. Everything here is pure and float32-safe.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = [
    "PointCloud",
    "FpsVariant",
    "FpsStrategy",
    "FpsResult",
    "fps",
    "fps_indices_batched",
    "knn",
    "knn_batched",
    "square_distances",
    "chamfer",
    "emd",
    "normal_consistency",
    "normalize_cloud",
]

NORMAL_TOL = 1e-4


@dataclass
class PointCloud:
    """N 3-D positions with optional unit normals."""

    positions: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"positions must be (N,3), got {self.positions.shape}")
        if self.positions.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float32)
            if self.normals.shape != self.positions.shape:
                raise ValueError(
                    f"normals shape {self.normals.shape} != positions {self.positions.shape}"
                )
            lengths = np.linalg.norm(self.normals.astype(np.float64), axis=1)
            if np.any(np.abs(lengths - 1.0) > NORMAL_TOL):
                worst = float(np.abs(lengths - 1.0).max())
                raise ValueError(f"normals must be unit length +-{NORMAL_TOL}, off by {worst:.2e}")

    def __len__(self):
        return self.positions.shape[0]


class FpsVariant(Enum):
    CENTROID_START = "centroid-start"  # centroid itself is emitted as element 0
    CENTROID_SEED = "centroid-seed"  # centroid only seeds the search; outputs are data points
    RANDOM_START = "random-start"


@dataclass(frozen=True)
class FpsStrategy:
    variant: FpsVariant = FpsVariant.CENTROID_START
    seed: int | None = None


@dataclass
class FpsResult:
    """Selected positions plus source indices (-1 marks the virtual centroid)."""

    indices: np.ndarray
    positions: np.ndarray


def square_distances(a, b):
    """(|a|,|b|) squared-distance table, computed in float64 for stable ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def _fps_greedy(points, k, min_d, first_idx=None):
    """Greedy max-min selection. min_d carries pre-seeded distances.

    Ties in the arg-max break toward the lowest input index (numpy argmax).
    """
    n = points.shape[0]
    chosen = []
    if first_idx is not None:
        chosen.append(first_idx)
        diff = points - points[first_idx]
        np.minimum(min_d, np.einsum("ij,ij->i", diff, diff), out=min_d)
    while len(chosen) < k:
        nxt = int(np.argmax(min_d))
        chosen.append(nxt)
        diff = points - points[nxt]
        np.minimum(min_d, np.einsum("ij,ij->i", diff, diff), out=min_d)
    return np.asarray(chosen, dtype=np.int64)


def fps(cloud: PointCloud, k: int, strategy: FpsStrategy = FpsStrategy()) -> FpsResult:
    """Farthest point sampling.

    CENTROID_START emits the centroid (a virtual point, index -1) first and
    then greedily appends the data point farthest from everything selected
    so far. CENTROID_SEED skips emitting the centroid but still measures the
    first pick against it. RANDOM_START picks a seeded random data point
    first. Distance ties resolve to the lowest input index.
    """
    pts = cloud.positions.astype(np.float64)
    n = pts.shape[0]
    v = strategy.variant
    needed = k - 1 if v is FpsVariant.CENTROID_START else k
    if k < 1 or needed > n:
        raise ValueError(f"fps k={k} out of range for {n} points ({v.value})")

    if v is FpsVariant.RANDOM_START:
        rng = np.random.default_rng(strategy.seed)
        first = int(rng.integers(n))
        idx = _fps_greedy(pts, k, np.full(n, np.inf), first_idx=first)
        return FpsResult(idx, cloud.positions[idx])

    centroid = pts.mean(axis=0)
    diff = pts - centroid
    min_d = np.einsum("ij,ij->i", diff, diff)
    if v is FpsVariant.CENTROID_SEED:
        idx = _fps_greedy(pts, k, min_d)
        return FpsResult(idx, cloud.positions[idx])

    # CENTROID_START: element 0 is the centroid itself.
    idx = _fps_greedy(pts, k - 1, min_d) if k > 1 else np.empty(0, dtype=np.int64)
    positions = np.concatenate(
        [centroid[None, :].astype(np.float32), cloud.positions[idx]], axis=0
    )
    return FpsResult(np.concatenate([[-1], idx]).astype(np.int64), positions)


try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def _njit(**kwargs):
        def deco(fn):
            return fn

        return deco


@_njit(cache=True)
def _fps_greedy_batched_kernel(pos, k, min_d, out):
    b, n, _ = pos.shape
    for bi in range(b):
        for i in range(k):
            best = 0
            bd = min_d[bi, 0]
            for j in range(1, n):
                if min_d[bi, j] > bd:
                    bd = min_d[bi, j]
                    best = j
            out[bi, i] = best
            px, py, pz = pos[bi, best, 0], pos[bi, best, 1], pos[bi, best, 2]
            for j in range(n):
                dx = pos[bi, j, 0] - px
                dy = pos[bi, j, 1] - py
                dz = pos[bi, j, 2] - pz
                d = dx * dx + dy * dy + dz * dz
                if d < min_d[bi, j]:
                    min_d[bi, j] = d


def _fps_batched_numpy(pos, k, min_d, out):
    rows = np.arange(pos.shape[0])
    for i in range(k):
        nxt = np.argmax(min_d, axis=1)
        out[:, i] = nxt
        diff = pos - pos[rows, nxt][:, None, :]
        np.minimum(min_d, np.einsum("bnd,bnd->bn", diff, diff), out=min_d)


def fps_indices_batched(positions, k):
    """Centroid-seeded FPS per batch element; positions (B,N,3) -> (B,k) indices.

    Float32 hot path used inside the networks; ties break to the lowest index.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float32)
    b, n, _ = pos.shape
    if not 1 <= k <= n:
        raise ValueError(f"fps k={k} out of range for {n} points")
    centroid = pos.mean(axis=1, keepdims=True)
    min_d = np.einsum("bnd,bnd->bn", pos - centroid, pos - centroid)
    out = np.empty((b, k), dtype=np.int64)
    if _HAVE_NUMBA:
        _fps_greedy_batched_kernel(pos, k, min_d, out)
    else:
        _fps_batched_numpy(pos, k, min_d, out)
    return out


def knn(query: PointCloud, base: PointCloud, k: int):
    """Per-query indices of the k nearest base points.

    Sorted by ascending distance; exact ties by ascending base index.
    """
    if k > len(base):
        raise ValueError(f"knn k={k} exceeds base size {len(base)}")
    d = square_distances(query.positions, base.positions)
    order = np.argsort(d, axis=1, kind="stable")
    return order[:, :k]


def knn_batched(query, base, k):
    """Batched k-NN on raw arrays: (B,Nq,3) x (B,Nb,3) -> (B,Nq,k) indices.

    Float32 fast path for network internals; ordering on exact ties is
    deterministic but not index-sorted (use knn() where ties matter).
    """
    q = np.asarray(query, dtype=np.float32)
    b = np.asarray(base, dtype=np.float32)
    nb = b.shape[1]
    if k > nb:
        raise ValueError(f"knn k={k} exceeds base size {nb}")
    d = (
        np.sum(q * q, axis=2)[:, :, None]
        + np.sum(b * b, axis=2)[:, None, :]
        - 2.0 * np.einsum("bqd,bnd->bqn", q, b)
    )
    if k >= nb:
        return np.argsort(d, axis=2)[:, :, :k]
    part = np.argpartition(d, k - 1, axis=2)[:, :, :k]
    sub = np.take_along_axis(d, part, axis=2)
    order = np.argsort(sub, axis=2)
    return np.take_along_axis(part, order, axis=2)


def chamfer(a: PointCloud, b: PointCloud) -> float:
    """Mean-per-side squared nearest-neighbor distance, summed over both sides."""
    d = square_distances(a.positions, b.positions)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def emd(a: PointCloud, b: PointCloud) -> float:
    """Exact earth mover distance: min over bijections of mean squared distance."""
    if len(a) != len(b):
        raise ValueError(f"emd requires equal sizes, got {len(a)} vs {len(b)}")
    cost = square_distances(a.positions, b.positions)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean())


def normal_consistency(a: PointCloud, b: PointCloud) -> float:
    """1 - mean |cos| between normals of mutual nearest neighbors; 0 iff aligned."""
    if a.normals is None or b.normals is None:
        raise ValueError("normal_consistency requires normals on both clouds")
    d = square_distances(a.positions, b.positions)
    nn_ab = np.argmin(d, axis=1)
    nn_ba = np.argmin(d, axis=0)
    an = a.normals.astype(np.float64)
    bn = b.normals.astype(np.float64)
    side_a = np.abs(np.einsum("ij,ij->i", an, bn[nn_ab])).mean()
    side_b = np.abs(np.einsum("ij,ij->i", bn, an[nn_ba])).mean()
    return float(1.0 - 0.5 * (side_a + side_b))


def normalize_cloud(cloud: PointCloud) -> PointCloud:
    """Center at the origin and scale the max absolute coordinate to 1.

    Zero-extent clouds are centered but keep scale 1. Idempotent. Normals
    are unaffected (uniform scaling preserves directions).
    """
    centered = cloud.positions - cloud.positions.mean(axis=0)
    extent = float(np.abs(centered).max())
    if extent > 0.0:
        centered = centered / extent
    return PointCloud(centered.astype(np.float32), cloud.normals)
