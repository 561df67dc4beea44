"""Sampling-cost benchmark: sparse latent cascade vs an equal-architecture
dense DDPM over the full point count at the same step count.
"""

from __future__ import annotations

import dataclasses
import time

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import (
    DenoiserConfig,
    FeatureDenoiser,
    PositionDenoiser,
    NoiseSchedule,
    reverse_step,
    sample_features,
    sample_positions,
)

__all__ = ["benchmark_sampling"]


def _dense_chain(model: FeatureDenoiser, sched: NoiseSchedule, n_points, rng):
    """Reverse chain with the feature-denoiser architecture over n_points rows."""
    x = rng.standard_normal((n_points, 3)).astype(np.float32)
    f = rng.standard_normal((n_points, model.cfg.channels)).astype(np.float32)
    with ad.no_grad():
        for t in range(sched.T, 0, -1):
            eps_hat = model(
                Tensor(x), Tensor(f), np.atleast_1d(t), 1
            ).data
            f = reverse_step(f, t, eps_hat, sched, rng)
    return f


def benchmark_sampling(
    pos_model: PositionDenoiser,
    feat_model: FeatureDenoiser,
    sched: NoiseSchedule,
    dense_points=512,
    repeats=3,
    seed=0,
):
    """Wall-clock of the sparse two-DDPM cascade vs the dense equivalent.

    The dense reference instantiates the same feature-denoiser architecture
    (identical widths/blocks/channels) with n_points=dense_points and runs
    one T-step chain. Returns per-run times and the speedup ratio.
    """
    k = pos_model.cfg.n_points
    dense_cfg = dataclasses.replace(feat_model.cfg, n_points=dense_points)
    dense_model = FeatureDenoiser(dense_cfg)
    # keep the architecture identical; weights don't affect cost
    rng = np.random.default_rng(seed)

    # warm-up both paths (numba JIT, allocator)
    sample_features(feat_model, sched, sample_positions(pos_model, sched, k, rng), rng)
    _dense_chain(dense_model, sched, dense_points, rng)

    sparse_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        x = sample_positions(pos_model, sched, k, rng)
        sample_features(feat_model, sched, x, rng)
        sparse_times.append(time.perf_counter() - t0)

    dense_times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        _dense_chain(dense_model, sched, dense_points, rng)
        dense_times.append(time.perf_counter() - t0)

    sparse = float(np.median(sparse_times))
    dense = float(np.median(dense_times))
    return {
        "sparse_seconds": sparse,
        "dense_seconds": dense,
        "speedup": dense / sparse,
        "k": k,
        "dense_points": dense_points,
        "T": sched.T,
    }
