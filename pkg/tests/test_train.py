"""Training-stage contracts: loss composition, determinism, stage freezing."""

import numpy as np
import pytest

from conftest import TINY_MODEL, TINY_T
from slpc import autodiff as ad
from slpc.autodiff import Tensor
from slpc.diffusion import DenoiserConfig
from slpc.nets import AutoEncoder, LatentPosterior
from slpc.train import (
    TrainConfig,
    TrainError,
    TrainReport,
    ae_loss,
    latent_fps_batched,
    loss_targets,
    train_autoencoder,
    train_feature_ddpm,
    train_position_ddpm,
)


def _cloud_batch(b=2, n=128, seed=0):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(b, n, 3)).astype(np.float32)
    nrm = rng.normal(size=(b, n, 3))
    nrm /= np.linalg.norm(nrm, axis=2, keepdims=True)
    return pos, nrm.astype(np.float32)


def _identity_levels(pos, counts):
    """Decoder-output stand-ins whose last level equals the input exactly."""
    b, n, _ = pos.shape
    levels = []
    for m in counts[:-1]:
        levels.append(Tensor(pos[:, :m].reshape(-1, 3), requires_grad=True))
    levels.append(Tensor(pos.reshape(-1, 3), requires_grad=True))
    return levels


def test_ae_loss_zeroed_terms():
    """Perfect final level + standard-normal posterior leaves only cd2+cd3."""
    pos, nrm = _cloud_batch()
    levels = _identity_levels(pos, [16, 64, 128])
    pred_nrm = Tensor(nrm.reshape(-1, 3))
    post = LatentPosterior(Tensor(np.zeros((16, 8))), Tensor(np.zeros((16, 8))))
    total, comps = ae_loss(pos, nrm, levels, pred_nrm, post)
    assert comps["cd4"] == pytest.approx(0.0, abs=1e-9)
    assert comps["nc"] == pytest.approx(0.0, abs=1e-7)
    assert comps["kl"] == pytest.approx(0.0, abs=1e-9)
    assert comps["total"] == pytest.approx(comps["cd2"] + comps["cd3"], rel=1e-5)


def test_ae_loss_components_nonnegative_and_sum():
    rng = np.random.default_rng(1)
    pos, nrm = _cloud_batch(seed=2)
    levels = [
        Tensor(rng.normal(size=(2 * m, 3)).astype(np.float32), requires_grad=True)
        for m in (16, 64, 128)
    ]
    raw = rng.normal(size=(256, 3)).astype(np.float32)
    pred_nrm = Tensor(raw / np.linalg.norm(raw, axis=1, keepdims=True))
    post = LatentPosterior(Tensor(rng.normal(size=(16, 8))), Tensor(rng.normal(size=(16, 8))))
    total, comps = ae_loss(pos, nrm, levels, pred_nrm, post)
    for key in ("cd2", "cd3", "cd4", "nc", "kl"):
        assert comps[key] >= 0.0, key
    parts = comps["cd2"] + comps["cd3"] + comps["cd4"] + comps["nc"] + comps["kl"]
    assert comps["total"] == pytest.approx(parts, abs=1e-6)
    assert float(total.data) == pytest.approx(comps["total"], abs=1e-7)


def test_ae_loss_count_mismatch_errors():
    pos, nrm = _cloud_batch()
    levels = [
        Tensor(pos[:, :m].reshape(-1, 3), requires_grad=True) for m in (16, 64, 100)
    ]  # final level does not reach the input resolution
    post = LatentPosterior(Tensor(np.zeros((16, 8))), Tensor(np.zeros((16, 8))))
    with pytest.raises(ValueError, match="final level"):
        ae_loss(pos, nrm, levels, Tensor(nrm[:, :100].reshape(-1, 3)), post)


def test_loss_targets_are_fps_subsets():
    pos, _ = _cloud_batch(b=1, seed=3)
    t64, t128 = loss_targets(pos, [64, 128])
    assert t64.shape == (1, 64, 3)
    assert t128.shape == (1, 128, 3)
    as_set = {tuple(p) for p in pos[0]}
    assert all(tuple(p) in as_set for p in t64[0])


def test_latent_fps_centroid_start_emits_centroid():
    pos, _ = _cloud_batch(b=3, seed=4)
    lat = latent_fps_batched(pos, 8, "centroid-start")
    assert lat.shape == (3, 8, 3)
    assert np.allclose(lat[:, 0], pos.mean(axis=1), atol=1e-5)


def test_latent_fps_random_start_is_data_point():
    pos, _ = _cloud_batch(b=2, seed=5)
    lat = latent_fps_batched(pos, 8, "random-start", np.random.default_rng(0))
    for b in range(2):
        for p in lat[b]:
            assert np.any(np.all(np.isclose(pos[b], p, atol=1e-6), axis=1))


def test_train_autoencoder_deterministic(tiny_dataset):
    cfg = TrainConfig(stage="ae", epochs=3, batch_size=4, seed=9)
    r1, _ = train_autoencoder(tiny_dataset, TINY_MODEL, cfg)
    r2, _ = train_autoencoder(tiny_dataset, TINY_MODEL, cfg)
    assert r1.epochs == r2.epochs


def test_train_epoch0_equals_untrained_loss(tiny_dataset):
    """First recorded loss is the untrained model's loss on batch 0."""
    one = type(tiny_dataset)(
        tiny_dataset.train[:4], tiny_dataset.val, ["x"] * 4, tiny_dataset.val_labels,
        tiny_dataset.config,
    )
    cfg = TrainConfig(stage="ae", epochs=1, batch_size=4, seed=3)
    report, _ = train_autoencoder(one, TINY_MODEL, cfg)

    # replay the first batch with a fresh model and identical rng stream
    ae = AutoEncoder(TINY_MODEL)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(4)
    pos = np.stack([one.train[i].positions for i in order])
    nrm = np.stack([one.train[i].normals for i in order])
    latent = latent_fps_batched(pos, TINY_MODEL.n_latent, "centroid-start", rng)
    latent = latent + rng.normal(0, cfg.jitter, latent.shape).astype(np.float32)
    post = ae.encode_batch(pos, nrm, latent, 4)
    z = post.sample(rng.standard_normal(post.mean.data.shape).astype(np.float32))
    levels, pred_nrm = ae.decode_batch(Tensor(latent.reshape(-1, 3)), z, 4)
    total, comps = ae_loss(pos, nrm, levels, pred_nrm, post, w_nc=cfg.w_nc, w_kl=cfg.w_kl)
    assert report.epochs[0]["total"] == pytest.approx(comps["total"], rel=1e-6)


def test_train_empty_dataset_errors(tiny_dataset):
    empty = type(tiny_dataset)([], [], [], [], tiny_dataset.config)
    with pytest.raises(TrainError, match="empty"):
        train_autoencoder(empty, TINY_MODEL, TrainConfig(stage="ae", epochs=1))


def test_report_rejects_nonfinite():
    report = TrainReport(stage="ae")
    report.append({"total": 1.0})
    with pytest.raises(TrainError, match="epoch 1"):
        report.append({"total": float("nan")})


def test_train_config_validation():
    with pytest.raises(ValueError, match="stage"):
        TrainConfig(stage="nope")
    with pytest.raises(ValueError, match="nonnegative"):
        TrainConfig(stage="ae", w_kl=-1.0)


def test_ddpm_stages_freeze_autoencoder(tiny_dataset, tiny_ae):
    ae, _ = tiny_ae
    before = {k: v.copy() for k, v in ae.named_state().items()}
    cfg = DenoiserConfig(n_points=8, channels=3, width=32, blocks=1, init_seed=5)
    train_position_ddpm(tiny_dataset, ae, cfg, TrainConfig(stage="pos", epochs=3, T=TINY_T, seed=5))
    fcfg = DenoiserConfig(n_points=8, channels=16, width=32, blocks=1, init_seed=6)
    train_feature_ddpm(tiny_dataset, ae, fcfg, TrainConfig(stage="feat", epochs=2, T=TINY_T, seed=6))
    after = ae.named_state()
    for key, arr in before.items():
        assert np.array_equal(arr, after[key]), f"{key} changed during DDPM training"


def test_ddpm_training_deterministic(tiny_dataset, tiny_ae):
    ae, _ = tiny_ae
    cfg = DenoiserConfig(n_points=8, channels=3, width=32, blocks=1, init_seed=7)
    tc = TrainConfig(stage="pos", epochs=3, T=TINY_T, seed=7)
    r1, m1 = train_position_ddpm(tiny_dataset, ae, cfg, tc)
    r2, m2 = train_position_ddpm(tiny_dataset, ae, cfg, tc)
    assert r1.epochs == r2.epochs
    for a, b in zip(m1.parameters(), m2.parameters()):
        assert np.array_equal(a.data, b.data)


def test_ddpm_loss_decreases(tiny_dataset, tiny_ae):
    """Loss trends down for both DDPM stages on the tiny fixture.

    The quantitative >=50%-over-200-desk-epochs check runs in the
    acceptance suite at desk scale where that figure was recorded.
    """
    ae, _ = tiny_ae
    pos_cfg = DenoiserConfig(n_points=8, channels=3, width=48, blocks=1, init_seed=8)
    rep, _ = train_position_ddpm(
        tiny_dataset, ae, pos_cfg, TrainConfig(stage="pos", epochs=100, T=TINY_T, lr=3e-3, seed=8)
    )
    assert np.mean([e["loss"] for e in rep.epochs[-10:]]) < 0.8 * rep.epochs[0]["loss"]
    feat_cfg = DenoiserConfig(n_points=8, channels=16, width=48, blocks=1, init_seed=9)
    frep, _ = train_feature_ddpm(
        tiny_dataset, ae, feat_cfg, TrainConfig(stage="feat", epochs=60, T=TINY_T, lr=3e-3, seed=9)
    )
    assert np.mean([e["loss"] for e in frep.epochs[-10:]]) < 0.8 * frep.epochs[0]["loss"]


def test_report_jsonl_roundtrip(tmp_path):
    report = TrainReport(stage="ae")
    report.append({"total": 1.5, "cd2": 0.5})
    report.append({"total": 1.0, "cd2": 0.25})
    path = tmp_path / "report.jsonl"
    report.to_jsonl(path)
    import json

    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert lines[0]["epoch"] == 0
    assert lines[1]["total"] == 1.0
