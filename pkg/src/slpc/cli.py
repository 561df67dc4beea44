"""Command-line interface: data generation, training, sampling, eval, serving.

Every command validates its flags and exits nonzero with a single-line
error on stderr. Config files may be JSON or TOML (chosen by extension).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .checkpoint import load_bundle, load_model, save_autoencoder, save_denoiser
from .diffusion import DenoiserConfig
from .geometry import PointCloud
from .metrics import evaluate
from .nets import AutoEncoder, AutoencoderConfig
from .plyio import read_ply, write_ply
from .shapes import DatasetConfig, load_dataset, make_dataset, save_dataset
from .train import TrainConfig, train_autoencoder, train_feature_ddpm, train_position_ddpm


def _load_config_file(path):
    path = Path(path)
    if path.suffix == ".toml":
        import tomli

        return tomli.loads(path.read_text())
    return json.loads(path.read_text())


def _dataset_config(args):
    cfg = {}
    if args.config:
        cfg = _load_config_file(args.config).get("dataset", {})
    for key in ("train_per_family", "val_per_family", "n_points", "seed"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if "families" in cfg:
        cfg["families"] = tuple(cfg["families"])
    return DatasetConfig(**cfg)


def _model_config(args):
    cfg = {}
    if args.config:
        raw = _load_config_file(args.config).get("model", {})
        tuples = {"sa_points", "sa_dims", "sa_k", "pu_gammas", "pu_hidden"}
        cfg = {k: tuple(v) if k in tuples else v for k, v in raw.items()}
    return AutoencoderConfig(**cfg)


def _train_config(args, stage):
    cfg = {}
    if args.config:
        cfg = _load_config_file(args.config).get("train", {})
    for key in ("epochs", "batch_size", "lr", "seed", "T"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    cfg["stage"] = stage
    return TrainConfig(**cfg)


def cmd_gen_data(args):
    dataset = make_dataset(_dataset_config(args))
    manifest = save_dataset(dataset, args.out)
    print(f"wrote {len(dataset.train)} train + {len(dataset.val)} val clouds; manifest {manifest}")
    return 0


def cmd_train_ae(args):
    dataset = load_dataset(args.data)
    model_cfg = _model_config(args)
    train_cfg = _train_config(args, "ae")
    report, ae = train_autoencoder(dataset, model_cfg, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "ae.ckpt"
    save_autoencoder(ckpt, ae, seed=train_cfg.seed)
    report.checkpoint_path = str(ckpt)
    report.to_jsonl(out / "ae_report.jsonl")
    print(f"final loss {report.epochs[-1]['total']:.6f}; checkpoint {ckpt}")
    return 0


def cmd_train_latent(args):
    dataset = load_dataset(args.data)
    ae, _, _ = load_model(args.ae)
    if not isinstance(ae, AutoEncoder):
        raise ValueError(f"{args.ae} is not an autoencoder checkpoint")
    train_cfg = _train_config(args, args.stage)
    channels = 3 if args.stage == "pos" else ae.cfg.feature_dim
    den_cfg = DenoiserConfig(
        n_points=ae.cfg.n_latent,
        channels=channels,
        width=args.width,
        blocks=args.blocks,
        init_seed=train_cfg.seed,
    )
    trainer = train_position_ddpm if args.stage == "pos" else train_feature_ddpm
    report, model = trainer(dataset, ae, den_cfg, train_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = out / f"{args.stage}.ckpt"
    kind = "position_ddpm" if args.stage == "pos" else "feature_ddpm"
    sched = {"T": train_cfg.T, "beta_start": train_cfg.beta_start, "beta_end": train_cfg.beta_end}
    save_denoiser(ckpt, model, kind, sched, seed=train_cfg.seed)
    report.checkpoint_path = str(ckpt)
    report.to_jsonl(out / f"{args.stage}_report.jsonl")
    print(f"final loss {report.epochs[-1]['loss']:.6f}; checkpoint {ckpt}")
    return 0


def cmd_sample(args):
    bundle = load_bundle(args.ae, args.pos, args.feat)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        latent = bundle.generate(rng)
        cloud = bundle.decode_cloud(latent)
        write_ply(cloud, out / f"sample_{i:04d}.ply")
        if args.latents:
            payload = {
                "positions": latent.positions.tolist(),
                "features": latent.features.tolist(),
            }
            (out / f"sample_{i:04d}.latent.json").write_text(json.dumps(payload))
    print(f"wrote {args.count} samples to {out}")
    return 0


def _read_cloud_dir(path):
    files = sorted(Path(path).glob("*.ply"))
    if not files:
        raise ValueError(f"no .ply files under {path}")
    return [read_ply(f) for f in files]


def cmd_eval(args):
    gen = _read_cloud_dir(args.gen)
    ref = _read_cloud_dir(args.ref)
    report = evaluate(gen, ref, metric=args.metric)
    print(report.table())
    if args.json:
        Path(args.json).write_text(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_export(args):
    src = Path(args.infile)
    if src.suffix == ".ply":
        cloud = read_ply(src)
    elif src.suffix == ".json":
        raw = json.loads(src.read_text())
        cloud = PointCloud(np.asarray(raw["positions"]), np.asarray(raw.get("normals")))
    else:
        raise ValueError(f"cannot read {src}: expected .ply or .json")
    if args.format == "ply":
        write_ply(cloud, args.out)
    else:
        payload = {
            "positions": cloud.positions.tolist(),
            "normals": cloud.normals.tolist() if cloud.normals is not None else None,
        }
        Path(args.out).write_text(json.dumps(payload))
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args):
    import uvicorn

    from .service import create_app

    host, _, port = args.addr.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"--addr must be HOST:PORT, got {args.addr!r}")
    bundle = load_bundle(args.ae, args.pos, args.feat)
    app = create_app(bundle, store_path=args.store)
    uvicorn.run(app, host=host, port=int(port), log_level="warning")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="slpc", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate the synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--train-per-family", type=int, dest="train_per_family")
    g.add_argument("--val-per-family", type=int, dest="val_per_family")
    g.add_argument("--points", type=int, dest="n_points")
    g.add_argument("--seed", type=int)
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train-ae", help="train the point-cloud autoencoder")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--config")
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--seed", type=int)
    t.set_defaults(fn=cmd_train_ae)

    l = sub.add_parser("train-latent", help="train a latent DDPM stage")
    l.add_argument("--stage", choices=("pos", "feat"), required=True)
    l.add_argument("--data", required=True)
    l.add_argument("--ae", required=True)
    l.add_argument("--out", required=True)
    l.add_argument("--config")
    l.add_argument("--epochs", type=int)
    l.add_argument("--batch-size", type=int, dest="batch_size")
    l.add_argument("--lr", type=float)
    l.add_argument("--seed", type=int)
    l.add_argument("--T", type=int, dest="T")
    l.add_argument("--width", type=int, default=96)
    l.add_argument("--blocks", type=int, default=2)
    l.set_defaults(fn=cmd_train_latent)

    s = sub.add_parser("sample", help="generate point clouds from trained models")
    s.add_argument("--count", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ae", required=True)
    s.add_argument("--pos", required=True)
    s.add_argument("--feat", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--latents", action="store_true", help="also write latent JSON files")
    s.set_defaults(fn=cmd_sample)

    e = sub.add_parser("eval", help="compare generated clouds against references")
    e.add_argument("--gen", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--metric", choices=("cd", "emd", "nc"), default="cd")
    e.add_argument("--json", help="also write the report as JSON")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("export", help="convert a cloud between PLY and JSON")
    x.add_argument("--in", dest="infile", required=True)
    x.add_argument("--format", choices=("ply", "json"), required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(fn=cmd_export)

    v = sub.add_parser("serve", help="run the HTTP editing service")
    v.add_argument("--addr", default="127.0.0.1:8008")
    v.add_argument("--ae", required=True)
    v.add_argument("--pos", required=True)
    v.add_argument("--feat", required=True)
    v.add_argument("--store", help="JSON-lines persistence path for shape records")
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
