"""Generative set metrics: leave-one-out 1-NN accuracy, MMD, coverage.

All three run over a pairwise distance matrix under a pluggable cloud
distance ("cd", "emd", or "nc"). Ties are broken by ascending global index
(generated set first, then reference) so reports are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .geometry import PointCloud, chamfer, emd, normal_consistency

__all__ = ["MetricReport", "cloud_distance", "pairwise_matrix", "one_nn", "mmd", "cov", "evaluate"]

_METRICS = {"cd": chamfer, "emd": emd, "nc": normal_consistency}


@dataclass
class MetricReport:
    metric: str
    one_nn: float
    mmd: float
    cov: float
    n_gen: int
    n_ref: int

    def to_dict(self):
        return asdict(self)

    def table(self):
        rows = [
            ("metric", self.metric),
            ("1-NN accuracy", f"{self.one_nn:.4f}"),
            ("MMD", f"{self.mmd:.6f}"),
            ("COV", f"{self.cov:.4f}"),
            ("gen/ref sizes", f"{self.n_gen}/{self.n_ref}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def cloud_distance(a: PointCloud, b: PointCloud, metric="cd") -> float:
    try:
        return _METRICS[metric](a, b)
    except KeyError:
        raise ValueError(f"unknown metric {metric!r}, expected one of {sorted(_METRICS)}") from None


def pairwise_matrix(gen, ref, metric="cd"):
    """|gen| x |ref| distance matrix between two cloud lists."""
    if not gen or not ref:
        raise ValueError("pairwise_matrix requires nonempty cloud sets")
    out = np.empty((len(gen), len(ref)), dtype=np.float64)
    for i, a in enumerate(gen):
        for j, b in enumerate(ref):
            out[i, j] = cloud_distance(a, b, metric)
    return out


def _union_matrix(gen, ref, metric):
    """Symmetric distance matrix over gen + ref using block structure."""
    g, r = len(gen), len(ref)
    m = np.empty((g + r, g + r), dtype=np.float64)
    for i in range(g):
        m[i, i] = 0.0
        for j in range(i + 1, g):
            m[i, j] = m[j, i] = cloud_distance(gen[i], gen[j], metric)
    for i in range(r):
        m[g + i, g + i] = 0.0
        for j in range(i + 1, r):
            m[g + i, g + j] = m[g + j, g + i] = cloud_distance(ref[i], ref[j], metric)
    cross = pairwise_matrix(gen, ref, metric)
    m[:g, g:] = cross
    m[g:, :g] = cross.T
    return m


def _one_nn_from(m, g, r):
    m = m.copy()
    np.fill_diagonal(m, np.inf)
    nearest = np.argmin(m, axis=1)  # argmin takes the first minimum: index tie rule
    labels = np.array([0] * g + [1] * r)
    return float((labels[nearest] == labels).mean())


def one_nn(gen, ref, metric="cd") -> float:
    """Leave-one-out two-sample classifier accuracy; 0.5 is ideal.

    Each sample is labeled by its nearest other sample's set; distance ties
    break toward the lowest global index (gen block before ref block).
    """
    g, r = len(gen), len(ref)
    if g < 2 or r < 2:
        raise ValueError("one_nn needs at least 2 clouds per set")
    return _one_nn_from(_union_matrix(gen, ref, metric), g, r)


def mmd(gen, ref, metric="cd") -> float:
    """Mean over reference clouds of the distance to their closest generated cloud."""
    return float(pairwise_matrix(gen, ref, metric).min(axis=0).mean())


def cov(gen, ref, metric="cd") -> float:
    """Fraction of reference clouds that are nearest-reference of some generated cloud."""
    matches = pairwise_matrix(gen, ref, metric).argmin(axis=1)
    return float(len(np.unique(matches)) / len(ref))


def evaluate(gen, ref, metric="cd") -> MetricReport:
    """All three metrics from one shared distance computation."""
    g, r = len(gen), len(ref)
    if g < 2 or r < 2:
        raise ValueError("evaluate needs at least 2 clouds per set")
    m = _union_matrix(gen, ref, metric)
    cross = m[:g, g:]
    return MetricReport(
        metric=metric,
        one_nn=_one_nn_from(m, g, r),
        mmd=float(cross.min(axis=0).mean()),
        cov=float(len(np.unique(cross.argmin(axis=1))) / r),
        n_gen=g,
        n_ref=r,
    )
