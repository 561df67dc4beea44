"""CLI contracts: the full tiny pipeline, determinism, and error behavior."""

import json

import numpy as np
import pytest

from slpc.cli import main

TINY_CFG = {
    "model": {
        "n_points": 128,
        "n_latent": 8,
        "feature_dim": 16,
        "sa_points": [64, 32, 16],
        "sa_dims": [24, 32, 48],
        "sa_k": [8, 8, 8],
        "ft_dim": 32,
        "mini_dim": 32,
        "head_hidden": 48,
        "pu_gammas": [4, 8, 4],
        "pu_hidden": [48, 48],
        "pu_mini_dim": 16,
        "pu_ft_dim": 16,
    },
    "train": {"epochs": 4, "batch_size": 4, "T": 20},
    "dataset": {"train_per_family": 2, "val_per_family": 1, "n_points": 128},
}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train-ae -> train-latent x2 -> sample, all through main()."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(TINY_CFG))
    data, run, gen = root / "data", root / "run", root / "gen"
    assert main(["gen-data", "--out", str(data), "--config", str(cfg)]) == 0
    assert main(["train-ae", "--data", str(data), "--out", str(run), "--config", str(cfg)]) == 0
    for stage in ("pos", "feat"):
        assert (
            main(
                [
                    "train-latent", "--stage", stage, "--data", str(data),
                    "--ae", str(run / "ae.ckpt"), "--out", str(run),
                    "--config", str(cfg), "--width", "32", "--blocks", "1",
                ]
            )
            == 0
        )
    assert (
        main(
            [
                "sample", "--count", "3", "--seed", "7",
                "--ae", str(run / "ae.ckpt"), "--pos", str(run / "pos.ckpt"),
                "--feat", str(run / "feat.ckpt"), "--out", str(gen), "--latents",
            ]
        )
        == 0
    )
    return root


def test_pipeline_outputs_exist(pipeline):
    assert (pipeline / "data" / "manifest.json").exists()
    assert (pipeline / "run" / "ae.ckpt").exists()
    assert (pipeline / "run" / "ae_report.jsonl").exists()
    assert (pipeline / "run" / "pos.ckpt").exists()
    assert (pipeline / "run" / "feat.ckpt").exists()
    plys = sorted((pipeline / "gen").glob("*.ply"))
    assert len(plys) == 3
    assert (pipeline / "gen" / "sample_0000.latent.json").exists()


def test_sample_same_seed_identical_bytes(pipeline):
    run = pipeline / "run"
    out2 = pipeline / "gen2"
    args = [
        "sample", "--count", "2", "--seed", "7",
        "--ae", str(run / "ae.ckpt"), "--pos", str(run / "pos.ckpt"),
        "--feat", str(run / "feat.ckpt"),
    ]
    assert main(args + ["--out", str(out2)]) == 0
    out3 = pipeline / "gen3"
    assert main(args + ["--out", str(out3)]) == 0
    for name in ("sample_0000.ply", "sample_0001.ply"):
        assert (out2 / name).read_bytes() == (out3 / name).read_bytes()


def test_eval_identical_dirs_perfect_scores(pipeline, capsys, tmp_path):
    gen = pipeline / "gen"
    json_out = tmp_path / "report.json"
    assert main(["eval", "--gen", str(gen), "--ref", str(gen), "--json", str(json_out)]) == 0
    table = capsys.readouterr().out
    assert "MMD" in table
    report = json.loads(json_out.read_text())
    assert report["mmd"] == 0.0
    assert report["cov"] == 1.0


def test_eval_runs_all_metrics(pipeline, tmp_path):
    gen, val = pipeline / "gen", pipeline / "data" / "val"
    for metric in ("cd", "emd", "nc"):
        out = tmp_path / f"{metric}.json"
        assert main(["eval", "--gen", str(gen), "--ref", str(val), "--metric", metric, "--json", str(out)]) == 0
        assert json.loads(out.read_text())["metric"] == metric


def test_export_roundtrip(pipeline, tmp_path):
    src = pipeline / "gen" / "sample_0000.ply"
    as_json = tmp_path / "c.json"
    back = tmp_path / "c.ply"
    assert main(["export", "--in", str(src), "--format", "json", "--out", str(as_json)]) == 0
    raw = json.loads(as_json.read_text())
    assert len(raw["positions"]) == 128
    assert main(["export", "--in", str(as_json), "--format", "ply", "--out", str(back)]) == 0
    assert back.read_bytes() == src.read_bytes()


def test_errors_exit_nonzero_with_stderr(tmp_path, capsys):
    assert main(["eval", "--gen", str(tmp_path), "--ref", str(tmp_path)]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
    assert len(err.strip().splitlines()) == 1

    assert main(["train-ae", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == 1
    assert main(["export", "--in", str(tmp_path / "x.txt"), "--format", "ply", "--out", str(tmp_path / "y.ply")]) == 1


def test_serve_rejects_bad_addr(pipeline, capsys):
    run = pipeline / "run"
    rc = main(
        [
            "serve", "--addr", "nonsense",
            "--ae", str(run / "ae.ckpt"), "--pos", str(run / "pos.ckpt"),
            "--feat", str(run / "feat.ckpt"),
        ]
    )
    assert rc == 1
    assert "HOST:PORT" in capsys.readouterr().err
