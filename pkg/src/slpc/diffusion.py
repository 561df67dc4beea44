"""DDPM machinery: noise schedules, training losses, reverse samplers.

Instantiated twice by the pipeline: a position model over the k sparse
latent points and a feature model over their k x d features conditioned
on the positions. Both denoisers predict the added noise; the reverse
step follows mu = (x_t - beta_t/sqrt(1-abar_t) * eps_hat) / sqrt(alpha_t)
with sigma_t^2 = beta_t.

Targets are standardized per channel before diffusion (stats measured on
the training set, stored with the model) so the terminal distribution
matches the unit-Gaussian prior regardless of latent scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import MiniPointNet, Mlp, Module

__all__ = [
    "NoiseSchedule",
    "make_schedule",
    "q_sample",
    "reverse_step",
    "DenoiserConfig",
    "PointSetDenoiser",
    "PositionDenoiser",
    "FeatureDenoiser",
    "ddpm_position_loss",
    "feature_loss",
    "sample_positions",
    "sample_features",
    "partial_resample",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step beta/alpha tables, 0-indexed internally; t runs 1..T."""

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray
    sigmas: np.ndarray


def make_schedule(T, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    """Linear beta schedule with precomputed alpha tables and sigma^2 = beta."""
    if T < 1:
        raise ValueError(f"schedule needs T >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(f"invalid beta range [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    sigmas = np.sqrt(betas)
    return NoiseSchedule(T, betas, alphas, alpha_bars, sigmas)


def _check_t(t, T):
    t = np.asarray(t)
    if np.any(t < 1) or np.any(t > T):
        raise ValueError(f"timestep {t} outside 1..{T}")
    return t


def q_sample(x0, t, eps, sched: NoiseSchedule):
    """Closed-form forward diffusion: sqrt(abar_t) x0 + sqrt(1-abar_t) eps.

    t may be a scalar (applied to all of x0) or per-row along axis 0.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    t = _check_t(t, sched.T)
    ab = sched.alpha_bars[t - 1]
    if t.ndim > 0:
        ab = ab.reshape((x0.shape[0],) + (1,) * (x0.ndim - 1))
    return (np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps).astype(np.float32)


def reverse_step(x_t, t, eps_hat, sched: NoiseSchedule, rng, sigma=None):
    """One reverse-chain step x_t -> x_{t-1} given the predicted noise.

    Adds sigma_t * z noise except at t=1 where z = 0. Pass sigma=0.0 for
    a deterministic chain.
    """
    t = int(_check_t(t, sched.T))
    a = sched.alphas[t - 1]
    b = sched.betas[t - 1]
    ab = sched.alpha_bars[t - 1]
    mu = (x_t - (b / np.sqrt(1.0 - ab)) * eps_hat) / np.sqrt(a)
    s = sched.sigmas[t - 1] if sigma is None else sigma
    if t > 1 and s > 0.0:
        mu = mu + s * rng.standard_normal(x_t.shape)
    return mu.astype(np.float32)


@dataclass(frozen=True)
class DenoiserConfig:
    n_points: int = 16
    channels: int = 3  # per-point channels being denoised
    temb_dim: int = 16
    width: int = 96
    blocks: int = 2
    k_neighbors: int = 8
    init_seed: int = 0


class PointSetDenoiser(Module):
    """Noise predictor over a point set; mini-pointnet blocks plus a head.

    Positions anchor the neighborhoods; the denoised channels ride along as
    per-point features. The timestep enters every block both by feature
    concatenation and by a learned scale-shift (the per-step gain of the
    noise target spans orders of magnitude, which pure concatenation tracks
    poorly). `loc`/`scale` hold the per-channel standardization of the
    training data.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        d = cfg.channels
        self.blocks = []
        self.films = []
        for i in range(cfg.blocks):
            blk = MiniPointNet(
                d + cfg.temb_dim, cfg.width, rng, k=min(cfg.k_neighbors, cfg.n_points)
            )
            self.blocks.append(self.child(f"block{i}", blk))
            self.films.append(
                self.child(f"film{i}", Mlp((cfg.temb_dim, cfg.width, 2 * cfg.width), rng, out_scale=0.1))
            )
            d = cfg.width
        self.head = self.child(
            "head", Mlp((cfg.width + cfg.channels + cfg.temb_dim, cfg.width, cfg.channels), rng)
        )
        self.buffer("norm.loc", np.zeros(cfg.channels))
        self.buffer("norm.scale", np.ones(cfg.channels))

    @property
    def loc(self):
        return self._buffers["norm.loc"]

    @property
    def scale(self):
        return self._buffers["norm.scale"]

    def set_normalization(self, data):
        """Fit per-channel loc/scale on (n, channels) training rows."""
        data = np.asarray(data, dtype=np.float32).reshape(-1, self.cfg.channels)
        self.buffer("norm.loc", data.mean(axis=0))
        self.buffer("norm.scale", np.maximum(data.std(axis=0), 1e-2))

    def normalize(self, x):
        return ((np.asarray(x) - self.loc) / self.scale).astype(np.float32)

    def denormalize(self, x):
        return (np.asarray(x) * self.scale + self.loc).astype(np.float32)

    def __call__(self, pos, channels, t, b):
        """pos (b*k,3) Tensor, channels (b*k,c) Tensor, t (b,) ints -> (b*k,c)."""
        k, w = self.cfg.n_points, self.cfg.width
        temb_b = ad.sinusoidal_embedding(t, self.cfg.temb_dim)  # (b, temb)
        temb = ad.repeat_rows(temb_b, k)
        h = channels
        for i, (blk, film) in enumerate(zip(self.blocks, self.films)):
            out = blk(pos, ad.concat([h, temb], axis=1), b, k)
            gb = ad.repeat_rows(film(temb_b), k)  # (b*k, 2w)
            out = ad.add(
                ad.mul(out, ad.sadd(ad.slice_cols(gb, 0, w), 1.0)), ad.slice_cols(gb, w, 2 * w)
            )
            h = out if i == 0 else ad.add(h, out)  # residual once widths agree
        return self.head(ad.concat([h, channels, temb], axis=1))


class PositionDenoiser(PointSetDenoiser):
    """Denoises the latent point positions themselves (channels double as pos)."""

    def __init__(self, cfg: DenoiserConfig):
        if cfg.channels != 3:
            raise ValueError("position denoiser works on 3 channels")
        super().__init__(cfg)

    def predict(self, noisy, t, b=1):
        """(b,k,3) noisy standardized positions -> (b,k,3) noise prediction."""
        noisy = np.asarray(noisy, dtype=np.float32)
        flat = Tensor(noisy.reshape(-1, 3))
        out = self(flat, flat, np.atleast_1d(t), b)
        return out


class FeatureDenoiser(PointSetDenoiser):
    """Denoises per-point features conditioned on (clean) point positions."""

    def predict(self, positions, noisy_feats, t, b=1):
        """(b,k,3) cond positions + (b,k,c) standardized noisy feats -> noise."""
        pos = Tensor(np.asarray(positions, dtype=np.float32).reshape(-1, 3))
        f = Tensor(np.asarray(noisy_feats, dtype=np.float32).reshape(-1, self.cfg.channels))
        return self(pos, f, np.atleast_1d(t), b)


def _draw_t_eps(b, shape, sched, rng, t=None, noise=None):
    if t is None:
        t = rng.integers(1, sched.T + 1, size=b)
    t = np.atleast_1d(np.asarray(t))
    if noise is None:
        noise = rng.standard_normal(shape).astype(np.float32)
    return t, np.asarray(noise, dtype=np.float32)


def ddpm_position_loss(batch_x0, sched, model: PositionDenoiser, rng, t=None, noise=None):
    """Simplified denoising loss: per-element MSE between eps and eps_hat.

    batch_x0 is (b,k,3) raw positions; t uniform in 1..T per sample unless
    pinned. `noise` lets tests plumb a known epsilon through.
    """
    x0 = model.normalize(batch_x0).reshape(batch_x0.shape)
    b = x0.shape[0]
    t, eps = _draw_t_eps(b, x0.shape, sched, rng, t, noise)
    x_t = q_sample(x0, t, eps, sched)
    pred = model(Tensor(x_t.reshape(-1, 3)), Tensor(x_t.reshape(-1, 3)), t, b)
    diff = ad.sub(pred, Tensor(eps.reshape(-1, 3)))
    return ad.reduce_mean(ad.mul(diff, diff))


def feature_loss(batch_x, batch_f, sched, model: FeatureDenoiser, rng, t=None, noise=None):
    """Conditional variant: noise the features, condition on the positions."""
    c = model.cfg.channels
    f0 = model.normalize(batch_f).reshape(batch_f.shape)
    b = f0.shape[0]
    t, eps = _draw_t_eps(b, f0.shape, sched, rng, t, noise)
    f_t = q_sample(f0, t, eps, sched)
    pred = model(
        Tensor(np.asarray(batch_x, dtype=np.float32).reshape(-1, 3)),
        Tensor(f_t.reshape(-1, c)),
        t,
        b,
    )
    diff = ad.sub(pred, Tensor(eps.reshape(-1, c)))
    return ad.reduce_mean(ad.mul(diff, diff))


def sample_positions(model: PositionDenoiser, sched, k, rng, sigma=None):
    """Full reverse chain from Gaussian noise -> (k,3) latent positions."""
    x = rng.standard_normal((k, 3)).astype(np.float32)
    with ad.no_grad():
        for t in range(sched.T, 0, -1):
            eps_hat = model.predict(x[None], t).data
            x = reverse_step(x, t, eps_hat, sched, rng, sigma=sigma)
    return model.denormalize(x)


def sample_features(model: FeatureDenoiser, sched, x, rng, sigma=None):
    """Reverse chain for features conditioned on positions x -> (k,d)."""
    return partial_resample(
        model, sched, x, np.zeros((x.shape[0], model.cfg.channels), np.float32),
        np.ones(x.shape[0], dtype=bool), rng, sigma=sigma,
    )


def partial_resample(model: FeatureDenoiser, sched, x, f_known, free_mask, rng, sigma=None):
    """Inpainting-style sampler: regenerate features only where free_mask is True.

    At every reverse step the fixed rows are overwritten with the forward
    diffusion of their known values; at the end they equal f_known exactly
    (bit-for-bit, via a final copy). An all-True mask is plain conditional
    sampling; an all-False mask returns f_known unchanged.
    """
    x = np.asarray(x, dtype=np.float32)
    f_known = np.asarray(f_known, dtype=np.float32)
    free_mask = np.asarray(free_mask, dtype=bool)
    k = x.shape[0]
    if free_mask.shape != (k,):
        raise ValueError(f"mask length {free_mask.shape} != latent count {k}")
    if f_known.shape != (k, model.cfg.channels):
        raise ValueError(f"features shape {f_known.shape} != ({k},{model.cfg.channels})")
    fixed = ~free_mask
    if not free_mask.any():
        return f_known.copy()

    f0_fixed = model.normalize(f_known)
    f = rng.standard_normal(f_known.shape).astype(np.float32)
    with ad.no_grad():
        for t in range(sched.T, 0, -1):
            eps_hat = model.predict(x[None], f[None], t).data
            f = reverse_step(f, t, eps_hat, sched, rng, sigma=sigma)
            if fixed.any() and t > 1:
                eps_mix = rng.standard_normal(f_known.shape).astype(np.float32)
                f_fixed_t = q_sample(f0_fixed, t - 1, eps_mix, sched)
                f[fixed] = f_fixed_t[fixed]
    out = model.denormalize(f)
    out[fixed] = f_known[fixed]
    return out
