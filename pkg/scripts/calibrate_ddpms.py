"""DDPM-stage calibration against a fixed pretrained autoencoder.

Reuses artifacts/cascade/ae.ckpt so iterations on schedule/width/epochs
don't pay the autoencoder training cost each time.
"""

import argparse
import json
import time

import numpy as np

from slpc.checkpoint import load_model
from slpc.diffusion import DenoiserConfig, make_schedule
from slpc.edit import ModelBundle
from slpc.geometry import PointCloud
from slpc.metrics import evaluate, mmd, one_nn
from slpc.pipeline import reconstruct
from slpc.shapes import DatasetConfig, make_dataset
from slpc.train import TrainConfig, train_feature_ddpm, train_position_ddpm


def log(msg):
    print(f"[{time.strftime('%H:%M:%S')}] {msg}", flush=True)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--ae", default="artifacts/cascade/ae.ckpt")
    ap.add_argument("--pos-epochs", type=int, default=300)
    ap.add_argument("--feat-epochs", type=int, default=300)
    ap.add_argument("--pos-width", type=int, default=96)
    ap.add_argument("--feat-width", type=int, default=128)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--beta-end", type=float, default=0.02)
    ap.add_argument("--n-gen", type=int, default=40)
    args = ap.parse_args()
    log(f"settings: {vars(args)}")

    ds = make_dataset(DatasetConfig(seed=0))
    ae, _, _ = load_model(args.ae)

    recons = [reconstruct(ae, c) for c in ds.val]
    floor = mmd(recons, ds.val, "cd")
    log(f"floor={floor:.5f}")

    t0 = time.time()
    pos_cfg = DenoiserConfig(n_points=16, channels=3, width=args.pos_width, blocks=2, init_seed=2)
    prep, pos_model = train_position_ddpm(
        ds, ae, pos_cfg,
        TrainConfig(stage="pos", epochs=args.pos_epochs, batch_size=16, lr=args.lr,
                    T=args.T, beta_end=args.beta_end, seed=2),
    )
    log(f"pos {args.pos_epochs}ep {(time.time()-t0)/60:.1f}min "
        f"{prep.epochs[0]['loss']:.3f}->{prep.epochs[-1]['loss']:.3f}")

    t0 = time.time()
    feat_cfg = DenoiserConfig(n_points=16, channels=48, width=args.feat_width, blocks=2, init_seed=3)
    frep, feat_model = train_feature_ddpm(
        ds, ae, feat_cfg,
        TrainConfig(stage="feat", epochs=args.feat_epochs, batch_size=16, lr=args.lr,
                    T=args.T, beta_end=args.beta_end, seed=3),
    )
    log(f"feat {args.feat_epochs}ep {(time.time()-t0)/60:.1f}min "
        f"{frep.epochs[0]['loss']:.3f}->{frep.epochs[-1]['loss']:.3f}")

    sched = make_schedule(args.T, 1e-4, args.beta_end)
    bundle = ModelBundle(ae, pos_model, feat_model, sched)
    t0 = time.time()
    gen = []
    for i in range(args.n_gen):
        latent = bundle.generate(np.random.default_rng(1000 + i))
        gen.append(bundle.decode_cloud(latent))
    log(f"sampled in {(time.time()-t0)/60:.1f} min")
    rep = evaluate(gen, ds.val, "cd")
    log(json.dumps({
        "one_nn": rep.one_nn, "mmd": rep.mmd, "cov": rep.cov,
        "mmd_ratio": rep.mmd / floor,
    }))


if __name__ == "__main__":
    main()
