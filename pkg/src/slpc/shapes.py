"""Synthetic parametric surfaces with exact analytic normals.

Four families stand in for a real shape corpus at desk scale: ellipsoids,
boxes, cylinders, and a three-part lamp (base + pole + shade). Points are
sampled uniformly by surface area; normals are exact outward normals of
the analytic surface, rotated with the pose.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import PointCloud, normalize_cloud
from .plyio import read_ply, write_ply

__all__ = [
    "ShapeSpec",
    "Dataset",
    "DatasetConfig",
    "sample_shape",
    "make_dataset",
    "save_dataset",
    "load_dataset",
    "FAMILIES",
]

FAMILIES = ("ellipsoid", "box", "cylinder", "lamp")


@dataclass
class ShapeSpec:
    family: str
    params: dict[str, float]
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if any(v <= 0 for v in self.params.values()):
            raise ValueError(f"shape params must be positive: {self.params}")
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)


def _sample_ellipsoid(rng, n, a, b, c):
    """Uniform-by-area via rejection on the unit-sphere parameterization.

    A sphere point u maps to p = (a ux, b uy, c uz); the area element scales
    by m(u) = |(bc ux, ac uy, ab uz)|, so accept with probability m/m_max.
    """
    pts = np.empty((0, 3))
    m_max = max(b * c, a * c, a * b)
    while pts.shape[0] < n:
        u = rng.normal(size=(2 * n + 16, 3))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        m = np.linalg.norm(u * [b * c, a * c, a * b], axis=1)
        keep = rng.uniform(size=u.shape[0]) * m_max < m
        pts = np.concatenate([pts, u[keep]], axis=0)
    u = pts[:n]
    p = u * [a, b, c]
    normals = u / [a, b, c]
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return p, normals


def _sample_box(rng, n, w, h, d):
    half = np.array([w, h, d]) / 2.0
    # face order: +x -x +y -y +z -z
    areas = np.array([h * d, h * d, w * d, w * d, w * h, w * h], dtype=np.float64)
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    p = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    others = np.array([[1, 2], [0, 2], [0, 1]])
    for i in range(n):
        ax = axis[i]
        p[i, ax] = sign[i] * half[ax]
        p[i, others[ax]] = uv[i] * half[others[ax]]
        nrm[i, ax] = sign[i]
    return p, nrm


def _sample_cylinder(rng, n, radius, height):
    """Closed cylinder: lateral wall plus two caps, z in [-h/2, h/2]."""
    lat = 2.0 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([lat, cap, cap]) / (lat + 2 * cap))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    p = np.empty((n, 3))
    nrm = np.zeros((n, 3))
    is_lat = part == 0
    p[is_lat, 0] = radius * np.cos(theta[is_lat])
    p[is_lat, 1] = radius * np.sin(theta[is_lat])
    p[is_lat, 2] = rng.uniform(-height / 2, height / 2, size=int(is_lat.sum()))
    nrm[is_lat, 0] = np.cos(theta[is_lat])
    nrm[is_lat, 1] = np.sin(theta[is_lat])
    for cap_part, zsign in ((1, 1.0), (2, -1.0)):
        m = part == cap_part
        r = radius * np.sqrt(rng.uniform(size=int(m.sum())))
        p[m, 0] = r * np.cos(theta[m])
        p[m, 1] = r * np.sin(theta[m])
        p[m, 2] = zsign * height / 2
        nrm[m, 2] = zsign
    return p, nrm


def _sample_lamp(rng, n, base_r, base_h, pole_r, pole_h, shade_r0, shade_r1, shade_h):
    """Base cylinder + thin pole + open conical shade, stacked along z."""
    base_area = 2 * np.pi * base_r * base_h + 2 * np.pi * base_r**2
    pole_area = 2 * np.pi * pole_r * pole_h
    slant = np.hypot(shade_r0 - shade_r1, shade_h)
    shade_area = np.pi * (shade_r0 + shade_r1) * slant
    areas = np.array([base_area, pole_area, shade_area])
    counts = rng.multinomial(n, areas / areas.sum())

    parts = []
    pb, nb = _sample_cylinder(rng, max(counts[0], 1), base_r, base_h)
    pb[:, 2] += base_h / 2
    parts.append((pb[: counts[0]], nb[: counts[0]]))

    pp, np_ = _sample_cylinder(rng, max(counts[1], 1), pole_r, pole_h)
    pp[:, 2] += base_h + pole_h / 2
    parts.append((pp[: counts[1]], np_[: counts[1]]))

    # Cone frustum wall from radius shade_r0 (bottom) to shade_r1 (top).
    m = max(counts[2], 1)
    u = rng.uniform(size=m)
    # radius pdf proportional to r along the slant -> inverse-CDF sample
    r = np.sqrt(shade_r0**2 + u * (shade_r1**2 - shade_r0**2))
    frac = (r - shade_r0) / (shade_r1 - shade_r0)
    z = base_h + pole_h + frac * shade_h
    theta = rng.uniform(0, 2 * np.pi, size=m)
    ps = np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)
    slope = (shade_r1 - shade_r0) / shade_h
    ns = np.stack([np.cos(theta), np.sin(theta), np.full(m, -slope)], axis=1)
    ns /= np.linalg.norm(ns, axis=1, keepdims=True)
    parts.append((ps[: counts[2]], ns[: counts[2]]))

    p = np.concatenate([a for a, _ in parts], axis=0)
    nrm = np.concatenate([b for _, b in parts], axis=0)
    return p, nrm


def sample_shape(spec: ShapeSpec, n: int) -> PointCloud:
    """Sample n surface points with exact analytic normals, posed by spec."""
    if n < 1:
        raise ValueError(f"need at least one sample point, got {n}")
    rng = np.random.default_rng(spec.seed)
    fam = spec.family
    q = spec.params
    if fam == "ellipsoid":
        p, nrm = _sample_ellipsoid(rng, n, q["a"], q["b"], q["c"])
    elif fam == "box":
        p, nrm = _sample_box(rng, n, q["w"], q["h"], q["d"])
    elif fam == "cylinder":
        p, nrm = _sample_cylinder(rng, n, q["radius"], q["height"])
    else:
        p, nrm = _sample_lamp(
            rng,
            n,
            q["base_r"],
            q["base_h"],
            q["pole_r"],
            q["pole_h"],
            q["shade_r0"],
            q["shade_r1"],
            q["shade_h"],
        )
    p = p @ spec.rotation.T + spec.translation
    nrm = nrm @ spec.rotation.T
    return PointCloud(p.astype(np.float32), nrm.astype(np.float32))


@dataclass
class DatasetConfig:
    families: tuple[str, ...] = FAMILIES
    train_per_family: int = 50
    val_per_family: int = 10
    n_points: int = 512
    seed: int = 0


@dataclass
class Dataset:
    train: list[PointCloud]
    val: list[PointCloud]
    train_labels: list[str]
    val_labels: list[str]
    config: DatasetConfig


def _rot_z(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _random_spec(rng, family, seed):
    u = lambda lo, hi: float(rng.uniform(lo, hi))
    if family == "ellipsoid":
        params = {"a": u(0.4, 1.0), "b": u(0.4, 1.0), "c": u(0.4, 1.0)}
    elif family == "box":
        params = {"w": u(0.5, 1.6), "h": u(0.5, 1.6), "d": u(0.5, 1.6)}
    elif family == "cylinder":
        params = {"radius": u(0.25, 0.7), "height": u(0.8, 2.0)}
    else:
        params = {
            "base_r": u(0.35, 0.6),
            "base_h": u(0.08, 0.2),
            "pole_r": u(0.03, 0.07),
            "pole_h": u(0.8, 1.4),
            "shade_r0": u(0.45, 0.7),
            "shade_r1": u(0.15, 0.35),
            "shade_h": u(0.35, 0.6),
        }
    return ShapeSpec(family, params, rotation=_rot_z(u(0.0, 2 * np.pi)), seed=seed)


def make_dataset(config: DatasetConfig) -> Dataset:
    """Deterministic per (config, seed); train and val draw disjoint specs."""
    rng = np.random.default_rng(config.seed)
    train, val, tl, vl = [], [], [], []
    for family in config.families:
        for i in range(config.train_per_family + config.val_per_family):
            spec = _random_spec(rng, family, seed=int(rng.integers(2**31)))
            cloud = normalize_cloud(sample_shape(spec, config.n_points))
            if i < config.train_per_family:
                train.append(cloud)
                tl.append(family)
            else:
                val.append(cloud)
                vl.append(family)
    return Dataset(train, val, tl, vl, config)


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write per-split PLY files plus a manifest.json describing them."""
    out = Path(out_dir)
    manifest = {
        "config": {
            "families": list(dataset.config.families),
            "train_per_family": dataset.config.train_per_family,
            "val_per_family": dataset.config.val_per_family,
            "n_points": dataset.config.n_points,
            "seed": dataset.config.seed,
        },
        "train": [],
        "val": [],
    }
    for split, clouds, labels in (
        ("train", dataset.train, dataset.train_labels),
        ("val", dataset.val, dataset.val_labels),
    ):
        (out / split).mkdir(parents=True, exist_ok=True)
        for i, (cloud, label) in enumerate(zip(clouds, labels)):
            rel = f"{split}/{label}_{i:04d}.ply"
            write_ply(cloud, out / rel)
            manifest[split].append({"path": rel, "family": label})
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2))
    return path


def load_dataset(root) -> Dataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    cfg = DatasetConfig(
        families=tuple(manifest["config"]["families"]),
        train_per_family=manifest["config"]["train_per_family"],
        val_per_family=manifest["config"]["val_per_family"],
        n_points=manifest["config"]["n_points"],
        seed=manifest["config"]["seed"],
    )
    splits = {}
    labels = {}
    for split in ("train", "val"):
        splits[split] = [read_ply(root / e["path"]) for e in manifest[split]]
        labels[split] = [e["family"] for e in manifest[split]]
    return Dataset(splits["train"], splits["val"], labels["train"], labels["val"], cfg)
