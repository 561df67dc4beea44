"""Calibration run for the cascaded-generation pipeline on the 200-shape set.

Trains AE + both DDPMs at desk scale, then reports 1-NN / MMD / COV of
generated samples against the held-out split, plus the AE-reconstruction
MMD floor and the pure-noise 1-NN baseline. Writes artifacts under
artifacts/cascade for reuse.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from slpc.checkpoint import save_autoencoder, save_denoiser
from slpc.diffusion import DenoiserConfig, make_schedule, sample_features, sample_positions
from slpc.edit import ModelBundle
from slpc.geometry import PointCloud, chamfer
from slpc.metrics import evaluate, mmd, one_nn
from slpc.nets import AutoencoderConfig, SparseLatent
from slpc.shapes import DatasetConfig, make_dataset
from slpc.train import (
    TrainConfig,
    latent_fps_batched,
    train_autoencoder,
    train_feature_ddpm,
    train_position_ddpm,
)


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ae-epochs", type=int, default=80)
    ap.add_argument("--pos-epochs", type=int, default=300)
    ap.add_argument("--feat-epochs", type=int, default=300)
    ap.add_argument("--ddpm-lr", type=float, default=1e-3)
    ap.add_argument("--feat-width", type=int, default=128)
    ap.add_argument("--n-gen", type=int, default=40)
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--out", default="artifacts/cascade")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t_all = time.time()

    ds = make_dataset(DatasetConfig(seed=0))
    log(f"dataset: {len(ds.train)} train / {len(ds.val)} val")

    mcfg = AutoencoderConfig(sa_k=(8, 8, 8, 8))
    t0 = time.time()
    rep, ae = train_autoencoder(
        ds, mcfg, TrainConfig(stage="ae", epochs=args.ae_epochs, batch_size=16, lr=1e-3, seed=1)
    )
    log(f"AE {args.ae_epochs} epochs in {(time.time()-t0)/60:.1f} min; last={rep.epochs[-1]}")
    save_autoencoder(out / "ae.ckpt", ae, seed=1)

    def recon_set(clouds):
        outs = []
        for c in clouds:
            lat = latent_fps_batched(c.positions[None], 16, "centroid-start")[0]
            mean = ae.encode_mean(c.positions, c.normals, lat)
            *_, x4, f4 = ae.decode(SparseLatent(lat, mean))
            outs.append(PointCloud(x4, f4))
        return outs

    recons = recon_set(ds.val)
    recon_cds = [chamfer(a, b) for a, b in zip(ds.val, recons)]
    floor = mmd(recons, ds.val, "cd")
    log(f"val recon CD mean={np.mean(recon_cds):.5f}; recon MMD floor={floor:.5f}")

    sched_params = {"T": args.T, "beta_start": 1e-4, "beta_end": 0.02}
    pos_cfg = DenoiserConfig(n_points=16, channels=3, width=96, blocks=2, init_seed=2)
    t0 = time.time()
    prep, pos_model = train_position_ddpm(
        ds, ae, pos_cfg,
        TrainConfig(stage="pos", epochs=args.pos_epochs, batch_size=16, lr=args.ddpm_lr,
                    T=args.T, seed=2),
    )
    log(f"pos DDPM {args.pos_epochs} epochs in {(time.time()-t0)/60:.1f} min; "
        f"loss {prep.epochs[0]['loss']:.4f} -> {prep.epochs[-1]['loss']:.4f} "
        f"(epoch199 {prep.epochs[min(199, len(prep.epochs)-1)]['loss']:.4f})")
    save_denoiser(out / "pos.ckpt", pos_model, "position_ddpm", sched_params, seed=2)

    feat_cfg = DenoiserConfig(
        n_points=16, channels=48, width=args.feat_width, blocks=2, init_seed=3
    )
    t0 = time.time()
    frep, feat_model = train_feature_ddpm(
        ds, ae, feat_cfg,
        TrainConfig(stage="feat", epochs=args.feat_epochs, batch_size=16, lr=args.ddpm_lr,
                    T=args.T, seed=3),
    )
    log(f"feat DDPM {args.feat_epochs} epochs in {(time.time()-t0)/60:.1f} min; "
        f"loss {frep.epochs[0]['loss']:.4f} -> {frep.epochs[-1]['loss']:.4f} "
        f"(epoch199 {frep.epochs[min(199, len(frep.epochs)-1)]['loss']:.4f})")
    save_denoiser(out / "feat.ckpt", feat_model, "feature_ddpm", sched_params, seed=3)

    sched = make_schedule(args.T, 1e-4, 0.02)
    bundle = ModelBundle(ae, pos_model, feat_model, sched)
    t0 = time.time()
    gen = []
    for i in range(args.n_gen):
        latent = bundle.generate(np.random.default_rng(1000 + i))
        gen.append(bundle.decode_cloud(latent))
    log(f"sampled {args.n_gen} clouds in {(time.time()-t0)/60:.1f} min")

    rng = np.random.default_rng(99)
    noise = [
        PointCloud(rng.normal(0, 0.4, size=(512, 3)).astype(np.float32))
        for _ in range(args.n_gen)
    ]
    noise_nn = one_nn(noise, ds.val, "cd")
    rep_cd = evaluate(gen, ds.val, "cd")
    log(f"noise baseline 1-NN={noise_nn:.3f}")
    log(f"gen vs val: 1-NN={rep_cd.one_nn:.3f} MMD={rep_cd.mmd:.5f} COV={rep_cd.cov:.3f}")
    log(f"MMD ratio vs floor: {rep_cd.mmd / floor:.2f} (need <= 3)")
    log(f"total wall clock {(time.time()-t_all)/60:.1f} min")

    summary = {
        "recon_cd_mean": float(np.mean(recon_cds)),
        "mmd_floor": floor,
        "noise_one_nn": noise_nn,
        "one_nn": rep_cd.one_nn,
        "mmd": rep_cd.mmd,
        "cov": rep_cd.cov,
        "mmd_ratio": rep_cd.mmd / floor,
        "minutes": (time.time() - t_all) / 60,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    log(json.dumps(summary))


if __name__ == "__main__":
    main()
