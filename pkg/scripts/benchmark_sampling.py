"""Time the sparse latent cascade against a dense same-architecture DDPM.

Uses freshly initialized models (timings do not depend on weights); pass
checkpoint paths to measure the trained trio instead.
"""

import argparse
import json

from slpc.bench import benchmark_sampling
from slpc.checkpoint import load_bundle
from slpc.diffusion import DenoiserConfig, FeatureDenoiser, PositionDenoiser, make_schedule


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--T", type=int, default=100)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--feature-dim", type=int, default=48)
    ap.add_argument("--width", type=int, default=128)
    ap.add_argument("--dense-points", type=int, default=512)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--ae")
    ap.add_argument("--pos")
    ap.add_argument("--feat")
    args = ap.parse_args()

    if args.ae and args.pos and args.feat:
        bundle = load_bundle(args.ae, args.pos, args.feat)
        pos_model, feat_model, sched = bundle.position_model, bundle.feature_model, bundle.schedule
    else:
        sched = make_schedule(args.T)
        pos_model = PositionDenoiser(DenoiserConfig(n_points=args.k, channels=3, width=96, blocks=2))
        feat_model = FeatureDenoiser(
            DenoiserConfig(n_points=args.k, channels=args.feature_dim, width=args.width, blocks=2)
        )
    result = benchmark_sampling(
        pos_model, feat_model, sched, dense_points=args.dense_points, repeats=args.repeats
    )
    print(json.dumps(result, indent=2))
    print(f"\nsparse cascade: {result['sparse_seconds']*1e3:.1f} ms per shape")
    print(f"dense chain   : {result['dense_seconds']*1e3:.1f} ms per shape")
    print(f"speedup       : {result['speedup']:.1f}x")


if __name__ == "__main__":
    main()
