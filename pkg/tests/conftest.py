import numpy as np
import pytest

from slpc.diffusion import DenoiserConfig, make_schedule
from slpc.edit import ModelBundle
from slpc.nets import AutoencoderConfig
from slpc.shapes import DatasetConfig, make_dataset
from slpc.train import TrainConfig, train_autoencoder, train_feature_ddpm, train_position_ddpm

# Small-but-real configuration used by unit tests that need trained models.
TINY_MODEL = AutoencoderConfig(
    n_points=128,
    n_latent=8,
    feature_dim=16,
    sa_points=(64, 32, 16),
    sa_dims=(24, 32, 48),
    sa_k=(8, 8, 8),
    ft_dim=32,
    mini_dim=32,
    head_hidden=48,
    pu_gammas=(4, 8, 4),
    pu_hidden=(48, 48),
    pu_mini_dim=16,
    pu_ft_dim=16,
)
TINY_T = 20


def rel_err(analytic, fd, floor=1e-2):
    """Max elementwise relative error with a floor against near-zero grads."""
    a = np.asarray(analytic, dtype=np.float64)
    f = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return float((np.abs(a - f) / denom).max())


def fd_grad(fn, arrays, wrt, h=1e-3):
    """Central finite differences of scalar fn(arrays) w.r.t. arrays[wrt].

    Evaluates fn in float64; fn must accept plain numpy arrays.
    """
    base = [np.asarray(a, dtype=np.float64) for a in arrays]
    g = np.zeros_like(base[wrt])
    it = np.nditer(g, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        hi = [a.copy() for a in base]
        lo = [a.copy() for a in base]
        hi[wrt][idx] += h
        lo[wrt][idx] -= h
        g[idx] = (fn(*hi) - fn(*lo)) / (2 * h)
    return g


@pytest.fixture(scope="session")
def tiny_dataset():
    return make_dataset(DatasetConfig(train_per_family=2, val_per_family=1, n_points=128, seed=0))


@pytest.fixture(scope="session")
def tiny_ae(tiny_dataset):
    cfg = TrainConfig(stage="ae", epochs=30, batch_size=4, seed=1)
    report, ae = train_autoencoder(tiny_dataset, TINY_MODEL, cfg)
    return ae, report


@pytest.fixture(scope="session")
def tiny_bundle(tiny_dataset, tiny_ae):
    ae, _ = tiny_ae
    pos_cfg = DenoiserConfig(n_points=8, channels=3, width=48, blocks=1, init_seed=2)
    feat_cfg = DenoiserConfig(n_points=8, channels=16, width=48, blocks=1, init_seed=3)
    _, pos_model = train_position_ddpm(
        tiny_dataset, ae, pos_cfg, TrainConfig(stage="pos", epochs=30, batch_size=8, T=TINY_T, lr=1e-3, seed=2)
    )
    _, feat_model = train_feature_ddpm(
        tiny_dataset, ae, feat_cfg, TrainConfig(stage="feat", epochs=30, batch_size=8, T=TINY_T, lr=1e-3, seed=3)
    )
    return ModelBundle(ae, pos_model, feat_model, make_schedule(TINY_T))
