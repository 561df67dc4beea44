"""Training stages: autoencoder first, then the two latent DDPMs.

The autoencoder trains on multi-scale Chamfer + normal-consistency + KL;
the DDPM stages freeze it and train on latent (position, feature) pairs
re-extracted each epoch with clean (unjittered) latent positions. Latent
positions mix centroid-start and random-start FPS 50/50 across batches.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import (
    DenoiserConfig,
    FeatureDenoiser,
    PositionDenoiser,
    ddpm_position_loss,
    feature_loss,
    make_schedule,
)
from .geometry import _fps_batched_numpy, _fps_greedy_batched_kernel, _HAVE_NUMBA
from .geometry import knn_batched
from .nets import AutoEncoder, AutoencoderConfig, LatentPosterior, kl_divergence

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainError",
    "ae_loss",
    "loss_targets",
    "latent_fps_batched",
    "train_autoencoder",
    "train_position_ddpm",
    "train_feature_ddpm",
    "extract_latents",
]


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    stage: str = "ae"  # ae | pos | feat
    epochs: int = 200
    batch_size: int = 16
    lr: float = 1e-3
    lr_decay: str = "cosine"  # cosine | constant
    lr_min_frac: float = 0.05
    w_nc: float = 0.1
    w_kl: float = 1e-5
    jitter: float = 0.04
    latent_strategy: str = "mixed"  # mixed | centroid-start | random-start
    seed: int = 0
    # diffusion stages only
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02

    def __post_init__(self):
        if self.stage not in ("ae", "pos", "feat"):
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.w_nc < 0 or self.w_kl < 0:
            raise ValueError("loss weights must be nonnegative")
        if self.lr_decay not in ("cosine", "constant"):
            raise ValueError(f"unknown lr decay {self.lr_decay!r}")
        if self.latent_strategy not in ("mixed", "centroid-start", "random-start"):
            raise ValueError(f"unknown latent strategy {self.latent_strategy!r}")

    def lr_at(self, epoch):
        if self.lr_decay == "constant" or self.epochs <= 1:
            return self.lr
        frac = epoch / (self.epochs - 1)
        lo = self.lr * self.lr_min_frac
        return lo + 0.5 * (self.lr - lo) * (1.0 + np.cos(np.pi * frac))


@dataclass
class TrainReport:
    stage: str
    epochs: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0
    checkpoint_path: str | None = None

    def append(self, record):
        if not all(np.isfinite(v) for v in record.values() if isinstance(v, float)):
            raise TrainError(f"non-finite loss at epoch {len(self.epochs)}: {record}")
        self.epochs.append(record)

    def to_jsonl(self, path):
        with open(path, "w") as f:
            for i, rec in enumerate(self.epochs):
                f.write(json.dumps({"epoch": i, **rec}) + "\n")


def _greedy_fps(pos, k, min_d, out):
    if _HAVE_NUMBA:
        _fps_greedy_batched_kernel(pos, k, min_d, out)
    else:
        _fps_batched_numpy(pos, k, min_d, out)


def latent_fps_batched(positions, k, variant, rng=None):
    """Latent positions for a (B,N,3) batch: (B,k,3) array.

    variant "centroid-start" emits the (virtual) centroid as point 0 and
    FPS-selects the rest; "random-start" starts from a random data point.
    """
    pos = np.ascontiguousarray(positions, dtype=np.float32)
    b, n, _ = pos.shape
    if variant == "centroid-start":
        centroid = pos.mean(axis=1)
        min_d = np.einsum("bnd,bnd->bn", pos - centroid[:, None], pos - centroid[:, None])
        idx = np.empty((b, k - 1), dtype=np.int64)
        _greedy_fps(pos, k - 1, min_d, idx)
        chosen = pos[np.arange(b)[:, None], idx]
        return np.concatenate([centroid[:, None, :], chosen], axis=1)
    if variant == "random-start":
        first = rng.integers(n, size=b)
        min_d = np.zeros((b, n), dtype=np.float32)
        min_d[np.arange(b), first] = 1.0  # forces the seeded point to win step 0
        idx = np.empty((b, k), dtype=np.int64)
        _greedy_fps(pos, k, min_d, idx)
        return pos[np.arange(b)[:, None], idx]
    raise ValueError(f"unknown latent FPS variant {variant!r}")


def loss_targets(positions, level_counts):
    """FPS-downsampled copies of (B,N,3) input for the intermediate CD terms."""
    pos = np.ascontiguousarray(positions, dtype=np.float32)
    b, n, _ = pos.shape
    targets = []
    for m in level_counts:
        if m == n:
            targets.append(pos)
            continue
        centroid = pos.mean(axis=1, keepdims=True)
        min_d = np.einsum("bnd,bnd->bn", pos - centroid, pos - centroid)
        idx = np.empty((b, m), dtype=np.int64)
        _greedy_fps(pos, m, min_d, idx)
        targets.append(pos[np.arange(b)[:, None], idx])
    return targets


def _chamfer_term(target, pred, b, m_t, m_p):
    """Differentiable CD between constant targets (b,m_t,3) and pred tensor rows."""
    pred3 = pred.data.reshape(b, m_p, 3)
    nn_tp = knn_batched(target, pred3, 1)[:, :, 0]  # (b, m_t) nearest pred per target
    nn_pt = knn_batched(pred3, target, 1)[:, :, 0]  # (b, m_p) nearest target per pred
    off_p = (np.arange(b, dtype=np.int64) * m_p)[:, None]
    t_flat = Tensor(target.reshape(-1, 3))
    d1 = ad.sub(ad.gather_rows(pred, (nn_tp + off_p).reshape(-1)), t_flat)
    side1 = ad.reduce_mean(ad.reduce_sum(ad.mul(d1, d1), axis=1))
    t_nn = target[np.arange(b)[:, None], nn_pt].reshape(-1, 3)
    d2 = ad.sub(pred, Tensor(t_nn))
    side2 = ad.reduce_mean(ad.reduce_sum(ad.mul(d2, d2), axis=1))
    return ad.add(side1, side2)


def _nc_term(positions, normals, pred_pos, pred_nrm, b, n):
    """Differentiable normal-consistency distance vs constant oriented targets."""
    pred3 = pred_pos.data.reshape(b, n, 3)
    nn_tp = knn_batched(positions, pred3, 1)[:, :, 0]
    nn_pt = knn_batched(pred3, positions, 1)[:, :, 0]
    off = (np.arange(b, dtype=np.int64) * n)[:, None]
    n_flat = Tensor(normals.reshape(-1, 3))
    pick = ad.gather_rows(pred_nrm, (nn_tp + off).reshape(-1))
    side1 = ad.reduce_mean(ad.absval(ad.reduce_sum(ad.mul(pick, n_flat), axis=1)))
    t_nn = Tensor(normals[np.arange(b)[:, None], nn_pt].reshape(-1, 3))
    side2 = ad.reduce_mean(ad.absval(ad.reduce_sum(ad.mul(pred_nrm, t_nn), axis=1)))
    return ad.sadd(ad.smul(-0.5, ad.add(side1, side2)), 1.0)


def ae_loss(
    positions,
    normals,
    level_positions,
    pred_normals,
    posterior: LatentPosterior,
    w_nc=0.1,
    w_kl=1e-5,
    targets=None,
):
    """Multi-scale CD + weighted NC + weighted KL.

    positions/normals: (b,N,3) constants. level_positions: decoder output
    tensors coarse-to-fine, the last at full resolution. Returns (total
    tensor, float components dict); the components sum to the total.
    """
    b, n, _ = positions.shape
    counts = [p.data.shape[0] // b for p in level_positions]
    if counts[-1] != n:
        raise ValueError(f"final level has {counts[-1]} points, input has {n}")
    if targets is None:
        targets = loss_targets(positions, counts)
    total = None
    comps = {}
    for i, (tgt, pred) in enumerate(zip(targets, level_positions)):
        term = _chamfer_term(tgt, pred, b, tgt.shape[1], counts[i])
        comps[f"cd{i + 2}"] = float(term.data)
        total = term if total is None else ad.add(total, term)
    nc = _nc_term(positions, normals, level_positions[-1], pred_normals, b, n)
    kl = kl_divergence(posterior)
    comps["nc"] = w_nc * float(nc.data)
    comps["kl"] = w_kl * float(kl.data)
    total = ad.add(total, ad.add(ad.smul(w_nc, nc), ad.smul(w_kl, kl)))
    comps["total"] = float(total.data)
    return total, comps


def _stack(clouds):
    pos = np.stack([c.positions for c in clouds])
    nrm = np.stack([c.normals for c in clouds])
    return pos, nrm


def train_autoencoder(dataset, model_cfg: AutoencoderConfig, cfg: TrainConfig):
    """Adam-train the autoencoder; deterministic under cfg.seed."""
    if not dataset.train:
        raise TrainError("empty training set")
    ae = AutoEncoder(model_cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = ad.Adam(ae.parameters(), lr=cfg.lr)
    pos_all, nrm_all = _stack(dataset.train)
    n_total = pos_all.shape[0]
    k = model_cfg.n_latent
    plans = ae.encoder.plan(pos_all)
    targets_all = loss_targets(pos_all, model_cfg.level_counts[1:])

    report = TrainReport(stage="ae")
    t0 = time.time()
    step = 0
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        order = rng.permutation(n_total)
        sums, batches = {}, 0
        for start in range(0, n_total, cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            b = len(sel)
            pos, nrm = pos_all[sel], nrm_all[sel]
            plan = [(c[sel], nb[sel]) for c, nb in plans]
            targets = [t[sel] for t in targets_all]
            if cfg.latent_strategy == "mixed":
                variant = "centroid-start" if step % 2 == 0 else "random-start"
            else:
                variant = cfg.latent_strategy
            step += 1
            latent = latent_fps_batched(pos, k, variant, rng)
            if cfg.jitter > 0:
                latent = latent + rng.normal(0, cfg.jitter, latent.shape).astype(np.float32)
            post = ae.encode_batch(pos, nrm, latent, b, plan=plan)
            z = post.sample(rng.standard_normal(post.mean.data.shape).astype(np.float32))
            levels, pred_nrm = ae.decode_batch(Tensor(latent.reshape(-1, 3)), z, b)
            total, comps = ae_loss(
                pos, nrm, levels, pred_nrm, post, w_nc=cfg.w_nc, w_kl=cfg.w_kl,
                targets=targets,
            )
            ad.backward(total)
            opt.step()
            opt.zero_grad()
            for key, v in comps.items():
                sums[key] = sums.get(key, 0.0) + v
            batches += 1
        report.append({key: v / batches for key, v in sums.items()})
    report.wall_clock = time.time() - t0
    return report, ae


def extract_latents(dataset, ae: AutoEncoder, cfg: TrainConfig, rng, chunk=32, plans=None):
    """Latent (positions, features) per training cloud, clean positions.

    Features are the posterior mean of the frozen encoder. FPS strategy
    follows cfg.latent_strategy (alternating per chunk when "mixed").
    plans caches the encoder's input-geometry indices across epochs.
    """
    pos_all, nrm_all = _stack(dataset.train)
    k = ae.cfg.n_latent
    if plans is None:
        plans = ae.encoder.plan(pos_all)
    xs, fs = [], []
    for ci, start in enumerate(range(0, pos_all.shape[0], chunk)):
        sel = slice(start, start + chunk)
        pos, nrm = pos_all[sel], nrm_all[sel]
        b = pos.shape[0]
        plan = [(c[sel], nb[sel]) for c, nb in plans]
        if cfg.latent_strategy == "mixed":
            variant = "centroid-start" if ci % 2 == 0 else "random-start"
        else:
            variant = cfg.latent_strategy
        latent = latent_fps_batched(pos, k, variant, rng)
        with ad.no_grad():
            post = ae.encode_batch(pos, nrm, latent, b, plan=plan)
        xs.append(latent)
        fs.append(post.mean.data.reshape(b, k, -1))
    return np.concatenate(xs), np.concatenate(fs)


def _checksum(module):
    return np.sum([np.abs(p.data).sum() for p in module.parameters()])


def train_position_ddpm(dataset, ae: AutoEncoder, denoiser_cfg: DenoiserConfig, cfg: TrainConfig):
    """Train the latent-position DDPM with the autoencoder frozen."""
    rng = np.random.default_rng(cfg.seed)
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = PositionDenoiser(denoiser_cfg)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    report = TrainReport(stage="pos")
    t0 = time.time()
    frozen = _checksum(ae)
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        xs, _ = _positions_only(dataset, ae.cfg.n_latent, rng, strategy=cfg.latent_strategy)
        if epoch == 0:
            model.set_normalization(xs)
        loss_sum, batches = 0.0, 0
        for start in range(0, xs.shape[0], cfg.batch_size):
            batch = xs[start : start + cfg.batch_size]
            loss = ddpm_position_loss(batch, sched, model, rng)
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            loss_sum += float(loss.data)
            batches += 1
        report.append({"loss": loss_sum / batches})
    if _checksum(ae) != frozen:
        raise TrainError("autoencoder parameters changed during DDPM training")
    report.wall_clock = time.time() - t0
    return report, model


def _positions_only(dataset, k, rng, strategy="mixed", chunk=64):
    pos_all = np.stack([c.positions for c in dataset.train])
    xs = []
    for ci, start in enumerate(range(0, pos_all.shape[0], chunk)):
        pos = pos_all[start : start + chunk]
        if strategy == "mixed":
            variant = "centroid-start" if ci % 2 == 0 else "random-start"
        else:
            variant = strategy
        xs.append(latent_fps_batched(pos, k, variant, rng))
    return np.concatenate(xs), None


def train_feature_ddpm(dataset, ae: AutoEncoder, denoiser_cfg: DenoiserConfig, cfg: TrainConfig):
    """Train the conditional feature DDPM on frozen-encoder posterior means."""
    rng = np.random.default_rng(cfg.seed)
    sched = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model = FeatureDenoiser(denoiser_cfg)
    opt = ad.Adam(model.parameters(), lr=cfg.lr)
    report = TrainReport(stage="feat")
    t0 = time.time()
    frozen = _checksum(ae)
    plans = ae.encoder.plan(np.stack([c.positions for c in dataset.train]))
    for epoch in range(cfg.epochs):
        opt.lr = cfg.lr_at(epoch)
        xs, fs = extract_latents(dataset, ae, cfg, rng, plans=plans)
        if epoch == 0:
            model.set_normalization(fs)
        order = rng.permutation(xs.shape[0])
        loss_sum, batches = 0.0, 0
        for start in range(0, xs.shape[0], cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            loss = feature_loss(xs[sel], fs[sel], sched, model, rng)
            ad.backward(loss)
            opt.step()
            opt.zero_grad()
            loss_sum += float(loss.data)
            batches += 1
        report.append({"loss": loss_sum / batches})
    if _checksum(ae) != frozen:
        raise TrainError("autoencoder parameters changed during DDPM training")
    report.wall_clock = time.time() - t0
    return report, model
