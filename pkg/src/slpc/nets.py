"""Attention point-cloud blocks and the sparse-latent autoencoder.

Layout convention: a batch of B clouds with n points each is flattened to
(B*n, D) row-major tensors ("shape-major": rows [b*n, (b+1)*n) belong to
cloud b). Neighbor/subset selection happens on raw position values and
enters the tape as gather ops, so gradients flow through selected rows
only. Positions are constants in the encoder but differentiable in the
decoder (they are sums of predicted displacements).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import fps_indices_batched, knn_batched

__all__ = [
    "Module",
    "Linear",
    "Mlp",
    "SaConfig",
    "SetAbstraction",
    "FeatureTransfer",
    "MiniPointNet",
    "SparseLatent",
    "LatentPosterior",
    "AutoencoderConfig",
    "Encoder",
    "Decoder",
    "AutoEncoder",
    "kl_divergence",
    "unit_rows",
    "flat_index",
]


def flat_index(local_idx, n):
    """Local per-cloud indices (B,...) -> flat row indices into (B*n, D)."""
    b = local_idx.shape[0]
    off = (np.arange(b, dtype=np.int64) * n).reshape((b,) + (1,) * (local_idx.ndim - 1))
    return (local_idx + off).reshape(-1)


def unit_rows(x, eps=1e-12):
    """Normalize each row of a 2-D tensor to unit length."""
    s = ad.reduce_sum(ad.mul(x, x), axis=1)
    return ad.scale_rows(x, ad.rsqrt(ad.sadd(s, eps)))


class Module:
    """Tiny parameter container: explicit registration, named state dicts."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def param(self, name, data):
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def buffer(self, name, data):
        arr = np.asarray(data, dtype=np.float32)
        self._buffers[name] = arr
        return arr

    def child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self):
        out = list(self._params.values())
        for c in self._children.values():
            out.extend(c.parameters())
        return out

    def named_state(self, prefix=""):
        """All parameters and buffers as {dotted_name: float32 array}."""
        out = {prefix + k: t.data for k, t in self._params.items()}
        out.update({prefix + k: v for k, v in self._buffers.items()})
        for name, c in self._children.items():
            out.update(c.named_state(prefix + name + "."))
        return out

    def load_state(self, state, prefix=""):
        for k, t in self._params.items():
            t.data = np.asarray(state[prefix + k], dtype=np.float32).reshape(t.data.shape)
        for k in self._buffers:
            self._buffers[k] = np.asarray(state[prefix + k], dtype=np.float32).reshape(
                self._buffers[k].shape
            )
        for name, c in self._children.items():
            c.load_state(state, prefix + name + ".")


class Linear(Module):
    def __init__(self, d_in, d_out, rng, gain="relu", scale=1.0):
        super().__init__()
        std = np.sqrt(2.0 / d_in) if gain == "relu" else np.sqrt(1.0 / d_in)
        self.w = self.param("w", rng.normal(0.0, std * scale, size=(d_in, d_out)))
        self.b = self.param("b", np.zeros(d_out))

    def __call__(self, x):
        return ad.add_row(ad.matmul(x, self.w), self.b)


class Mlp(Module):
    """Linear stack with leaky-relu between layers (none after the last).

    out_scale shrinks the last layer's init, keeping early outputs small.
    """

    def __init__(self, widths, rng, slope=0.1, out_scale=1.0):
        super().__init__()
        self.slope = slope
        last = len(widths) - 2
        self.layers = [
            self.child(f"l{i}", Linear(widths[i], widths[i + 1], rng,
                                       gain="relu" if i < last else "linear",
                                       scale=out_scale if i == last else 1.0))
            for i in range(len(widths) - 1)
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ad.leaky_relu(x, self.slope)
        return x


@dataclass(frozen=True)
class SaConfig:
    out_points: int
    k: int
    mlp_widths: tuple[int, ...]
    attention_width: int = 16

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"SA neighbor count must be >= 1, got {self.k}")


class SetAbstraction(Module):
    """FPS-subsample then aggregate K-neighborhood features by attention.

    Neighbor features concatenated with relative coordinates pass a shared
    MLP; a score MLP + softmax over the K neighbors yields the weights.
    """

    def __init__(self, d_in, cfg: SaConfig, rng):
        super().__init__()
        self.cfg = cfg
        widths = (d_in + 3,) + cfg.mlp_widths
        self.mlp = self.child("mlp", Mlp(widths, rng))
        self.score = self.child("score", Mlp((cfg.mlp_widths[-1], cfg.attention_width, 1), rng))

    @property
    def d_out(self):
        return self.cfg.mlp_widths[-1]

    def plan(self, pos3):
        """Precompute (centers, neighbors) local indices for fixed positions."""
        m, k = self.cfg.out_points, self.cfg.k
        n = pos3.shape[1]
        if m > n:
            raise ValueError(f"SA out_points {m} exceeds input points {n}")
        if k > n:
            raise ValueError(f"SA neighbor count {k} exceeds input points {n}")
        centers = fps_indices_batched(pos3, m)
        b = pos3.shape[0]
        cpos3 = pos3[np.arange(b)[:, None], centers]
        return centers, knn_batched(cpos3, pos3, k)

    def __call__(self, pos, feat, b, n, idx=None):
        m, k = self.cfg.out_points, self.cfg.k
        centers, nb = idx if idx is not None else self.plan(pos.data.reshape(b, n, 3))
        cpos = ad.gather_rows(pos, flat_index(centers, n))  # (b*m, 3)
        nb_flat = flat_index(nb, n)
        nb_feat = ad.gather_rows(feat, nb_flat)
        rel = ad.sub(ad.gather_rows(pos, nb_flat), ad.repeat_rows(cpos, k))
        h = self.mlp(ad.concat([nb_feat, rel], axis=1))  # (b*m*k, d_out)
        s = ad.reshape(self.score(h), (b * m, k))
        w = ad.softmax(s, axis=1)
        out = ad.weighted_sum(ad.reshape(h, (b * m, k, self.d_out)), w)
        return cpos, out


class FeatureTransfer(Module):
    """Map source features onto target points; target features act as queries."""

    def __init__(self, d_src, d_query, d_out, rng, k=8, attention_width=32):
        super().__init__()
        self.k = k
        self.d_out = d_out
        self.value = self.child("value", Mlp((d_src + 3, d_out, d_out), rng))
        self.score = self.child("score", Mlp((d_out + d_query, attention_width, 1), rng))

    def __call__(self, src_pos, src_feat, tgt_pos, queries, b, n_src, n_tgt):
        if n_src < 1:
            raise ValueError("feature transfer requires a nonempty source")
        k = min(self.k, n_src)
        src3 = src_pos.data.reshape(b, n_src, 3)
        tgt3 = tgt_pos.data.reshape(b, n_tgt, 3)
        nb = flat_index(knn_batched(tgt3, src3, k), n_src)  # (b*n_tgt*k,)
        rel = ad.sub(ad.gather_rows(src_pos, nb), ad.repeat_rows(tgt_pos, k))
        h = self.value(ad.concat([ad.gather_rows(src_feat, nb), rel], axis=1))
        q = ad.repeat_rows(queries, k)
        s = ad.reshape(self.score(ad.concat([h, q], axis=1)), (b * n_tgt, k))
        w = ad.softmax(s, axis=1)
        return ad.weighted_sum(ad.reshape(h, (b * n_tgt, k, self.d_out)), w)


class MiniPointNet(Module):
    """One SA-style grouping at every point plus a global max-pool descriptor.

    Input features default to the absolute coordinates; relative offsets to
    each neighbor are always appended, so translating the whole set touches
    only the absolute-coordinate channels.
    """

    def __init__(self, d_feat, d_out, rng, k=8, width=None, attention_width=16):
        super().__init__()
        self.k = k
        self.d_out = d_out
        width = width or d_out
        d_in = (3 + d_feat) + 3  # abs coords (+ extra features) + rel offsets
        self.local = self.child("local", Mlp((d_in, width, width), rng))
        self.score = self.child("score", Mlp((width, attention_width, 1), rng))
        self.glob = self.child("glob", Mlp((width, width), rng))
        self.out = self.child("out", Linear(2 * width, d_out, rng))
        self.width = width

    def __call__(self, pos, feat, b, n, return_parts=False):
        if n < 2:
            raise ValueError(f"mini pointnet needs at least 2 points, got {n}")
        k = min(self.k, n)
        base = pos if feat is None else ad.concat([pos, feat], axis=1)
        pos3 = pos.data.reshape(b, n, 3)
        nb = flat_index(knn_batched(pos3, pos3, k), n)
        rel = ad.sub(ad.gather_rows(pos, nb), ad.repeat_rows(pos, k))
        h = self.local(ad.concat([ad.gather_rows(base, nb), rel], axis=1))
        s = ad.reshape(self.score(h), (b * n, k))
        w = ad.softmax(s, axis=1)
        local = ad.weighted_sum(ad.reshape(h, (b * n, k, self.width)), w)  # (b*n, width)
        g = self.glob(local)
        gmax = ad.reduce_max(ad.reshape(g, (b, n, self.width)), axis=1)  # (b, width)
        tiled = ad.repeat_rows(gmax, n)
        out = self.out(ad.concat([local, tiled], axis=1))
        if return_parts:
            return out, local, gmax
        return out


@dataclass
class SparseLatent:
    """k latent point positions with a feature vector per point."""

    positions: np.ndarray  # (k, 3)
    features: np.ndarray  # (k, d)

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32)
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3:
            raise ValueError(f"latent positions must be (k,3), got {self.positions.shape}")
        if self.positions.shape[0] < 2:
            raise ValueError("need at least 2 latent points")
        if self.features.shape[0] != self.positions.shape[0]:
            raise ValueError("latent feature/position row counts differ")
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("latent positions must be finite")

    @property
    def k(self):
        return self.positions.shape[0]


@dataclass
class LatentPosterior:
    """Diagonal-Gaussian posterior over latent features (tape tensors)."""

    mean: Tensor  # (rows, d)
    logvar: Tensor  # (rows, d)

    def sample(self, eps):
        """Reparameterized draw mean + exp(logvar/2) * eps; eps is a constant."""
        std = ad.exp(ad.smul(0.5, self.logvar))
        return ad.add(self.mean, ad.mul(std, Tensor(eps)))


def kl_divergence(posterior: LatentPosterior):
    """Mean over entries of KL(N(mean, var) || N(0, 1))."""
    mu2 = ad.mul(posterior.mean, posterior.mean)
    var = ad.exp(posterior.logvar)
    inner = ad.sub(ad.add(mu2, var), posterior.logvar)
    return ad.smul(0.5, ad.reduce_mean(ad.sadd(inner, -1.0)))


@dataclass(frozen=True)
class AutoencoderConfig:
    n_points: int = 512
    n_latent: int = 16
    feature_dim: int = 48
    sa_points: tuple[int, ...] = (256, 128, 64, 32)
    sa_dims: tuple[int, ...] = (32, 48, 64, 64)
    sa_k: tuple[int, ...] = (16, 12, 8, 8)
    ft_dim: int = 64
    mini_dim: int = 64
    head_hidden: int = 96
    pu_gammas: tuple[int, ...] = (8, 8, 4)
    pu_hidden: tuple[int, ...] = (128, 128)
    pu_mini_dim: int = 32
    pu_ft_dim: int = 32
    mini_k: int = 8
    ft_k: int = 8
    init_seed: int = 0

    def __post_init__(self):
        counts = [self.n_latent]
        for g in self.pu_gammas:
            up = counts[-1] * g
            if up % 2:
                raise ValueError(f"upsample factor {g} at {counts[-1]} points is not halvable")
            counts.append(up // 2)
        if counts[-1] != self.n_points:
            raise ValueError(
                f"decoder chain {counts} does not reach n_points={self.n_points}"
            )
        prev = self.n_points
        for m in self.sa_points:
            if m >= prev:
                raise ValueError(f"SA chain must strictly decrease, got {self.sa_points}")
            prev = m

    @property
    def level_counts(self):
        counts = [self.n_latent]
        for g in self.pu_gammas:
            counts.append(counts[-1] * g // 2)
        return tuple(counts)


def paper_config(**overrides) -> AutoencoderConfig:
    """Full-scale variant: 2048-point clouds, SA to 1024/256/64/32, PU 16->2048."""
    base = dict(
        n_points=2048,
        sa_points=(1024, 256, 64, 32),
        pu_gammas=(32, 8, 4),
    )
    base.update(overrides)
    return AutoencoderConfig(**base)


class Encoder(Module):
    def __init__(self, cfg: AutoencoderConfig, rng):
        super().__init__()
        self.cfg = cfg
        d = 6  # xyz + normals
        self.sa = []
        for i, (m, dim, k) in enumerate(zip(cfg.sa_points, cfg.sa_dims, cfg.sa_k)):
            sa = SetAbstraction(d, SaConfig(m, k, (dim, dim)), rng)
            self.sa.append(self.child(f"sa{i}", sa))
            d = dim
        self.mini = self.child(
            "mini", MiniPointNet(0, cfg.mini_dim, rng, k=min(cfg.mini_k, cfg.n_latent))
        )
        self.ft = self.child(
            "ft", FeatureTransfer(d, cfg.mini_dim, cfg.ft_dim, rng, k=cfg.ft_k)
        )
        self.head = self.child(
            "head",
            Mlp((cfg.ft_dim + cfg.mini_dim, cfg.head_hidden, 2 * cfg.feature_dim), rng),
        )
        # start the posterior quiet: reconstruction gradients barely move
        # logvar (the KL weight is tiny), so a noisy init lingers for epochs
        self.head.layers[-1].b.data[cfg.feature_dim :] = -10.0

    def plan(self, positions):
        """Per-level (centers, neighbors) indices for a fixed (b,N,3) cloud batch.

        The SA chain's geometry depends only on the input positions, so this
        can be computed once per cloud and reused across epochs.
        """
        p = np.asarray(positions, dtype=np.float32)
        plans = []
        for sa in self.sa:
            centers, nb = sa.plan(p)
            plans.append((centers, nb))
            p = p[np.arange(p.shape[0])[:, None], centers]
        return plans

    def __call__(self, pos, normals, latent_pos, b, plan=None):
        """pos/normals (b*N, 3), latent_pos (b*k, 3) -> posterior over (b*k, d)."""
        cfg = self.cfg
        feat = ad.concat([pos, normals], axis=1)
        p, f, n = pos, feat, cfg.n_points
        for i, sa in enumerate(self.sa):
            p, f = sa(p, f, b, n, idx=None if plan is None else plan[i])
            n = sa.cfg.out_points
        q = self.mini(latent_pos, None, b, cfg.n_latent)
        mapped = self.ft(p, f, latent_pos, q, b, n, cfg.n_latent)
        h = self.head(ad.concat([mapped, q], axis=1))
        mean = ad.slice_cols(h, 0, cfg.feature_dim)
        logvar = ad.clip(ad.slice_cols(h, cfg.feature_dim, 2 * cfg.feature_dim), -14.0, 6.0)
        return LatentPosterior(mean, logvar)


class Decoder(Module):
    """Cascade of point-upsampling levels with feature rebuilding in between.

    Each level maps every point's feature to gamma displacement vectors,
    clones the point gamma times, adds the displacements, and FPS-halves
    the result. The next level's features are [mini-pointnet of the new
    points | feature-transfer from the previous level], so latent content
    propagates down the chain. The last level also emits per-clone normals.
    """

    def __init__(self, cfg: AutoencoderConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.levels = []
        self.minis = []
        self.fts = []
        d = cfg.feature_dim
        n_levels = len(cfg.pu_gammas)
        for i, g in enumerate(cfg.pu_gammas):
            last = i == n_levels - 1
            per_clone = 6 if last else 3
            widths = (d + 3,) + cfg.pu_hidden + (g * per_clone,)
            self.levels.append(self.child(f"pu{i}", Mlp(widths, rng, out_scale=0.1)))
            if not last:
                mini = MiniPointNet(0, cfg.pu_mini_dim, rng, k=cfg.mini_k)
                ft = FeatureTransfer(d, cfg.pu_mini_dim, cfg.pu_ft_dim, rng, k=cfg.ft_k)
                self.minis.append(self.child(f"mini{i}", mini))
                self.fts.append(self.child(f"ft{i}", ft))
                d = cfg.pu_mini_dim + cfg.pu_ft_dim

    def __call__(self, latent_pos, latent_feat, b):
        """(b*k, 3) and (b*k, d) tensors -> list of level positions + normals.

        Returns ([X2, X3, X4] as (b*m_l, 3) tensors, F4 normals tensor).
        """
        cfg = self.cfg
        p, f, n = latent_pos, latent_feat, cfg.n_latent
        positions = []
        normals = None
        n_levels = len(cfg.pu_gammas)
        for i, g in enumerate(cfg.pu_gammas):
            last = i == n_levels - 1
            out = self.levels[i](ad.concat([f, p], axis=1))
            per_clone = 6 if last else 3
            out = ad.reshape(out, (out.data.shape[0] * g, per_clone))
            disp = ad.slice_cols(out, 0, 3) if last else out
            up = ad.add(ad.repeat_rows(p, g), disp)  # (b*n*g, 3)
            m = n * g // 2
            sel = flat_index(fps_indices_batched(up.data.reshape(b, n * g, 3), m), n * g)
            newp = ad.gather_rows(up, sel)
            positions.append(newp)
            if last:
                normals = unit_rows(ad.gather_rows(ad.slice_cols(out, 3, 6), sel))
            else:
                f1 = self.minis[i](newp, None, b, m)
                f2 = self.fts[i](p, f, newp, f1, b, n, m)
                f = ad.concat([f1, f2], axis=1)
            p, n = newp, m
        return positions, normals


class AutoEncoder(Module):
    def __init__(self, cfg: AutoencoderConfig):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.init_seed)
        self.encoder = self.child("encoder", Encoder(cfg, rng))
        self.decoder = self.child("decoder", Decoder(cfg, rng))

    def encode_batch(self, positions, norms, latent_positions, b, plan=None) -> LatentPosterior:
        """Raw arrays (b, N, 3) / (b, k, 3) -> posterior tensors (b*k, d)."""
        if latent_positions.shape[-2] != self.cfg.n_latent:
            raise ValueError(
                f"latent count {latent_positions.shape[-2]} != config {self.cfg.n_latent}"
            )
        return self.encoder(
            Tensor(positions.reshape(-1, 3)),
            Tensor(norms.reshape(-1, 3)),
            Tensor(latent_positions.reshape(-1, 3)),
            b,
            plan=plan,
        )

    def decode_batch(self, latent_pos, latent_feat, b):
        k, d = self.cfg.n_latent, self.cfg.feature_dim
        if latent_pos.data.shape != (b * k, 3) or latent_feat.data.shape != (b * k, d):
            raise ValueError(
                f"latent shapes {latent_pos.data.shape}/{latent_feat.data.shape} do not "
                f"match config ({b * k},3)/({b * k},{d})"
            )
        return self.decoder(latent_pos, latent_feat, b)

    def encode(self, cloud_positions, cloud_normals, latent_positions) -> LatentPosterior:
        """Single-cloud convenience; inputs are plain (N,3)/(k,3) arrays."""
        return self.encode_batch(
            np.asarray(cloud_positions)[None], np.asarray(cloud_normals)[None],
            np.asarray(latent_positions)[None], 1,
        )

    def encode_mean(self, cloud_positions, cloud_normals, latent_positions) -> np.ndarray:
        with ad.no_grad():
            return self.encode(cloud_positions, cloud_normals, latent_positions).mean.data

    def decode(self, latent: SparseLatent):
        """SparseLatent -> (X2, X3, X4, F4) numpy arrays, no tape."""
        with ad.no_grad():
            positions, normals = self.decode_batch(
                Tensor(latent.positions), Tensor(latent.features), 1
            )
        return (*[p.data for p in positions], normals.data)
