"""Editing-surface contracts: mode paths, correspondence, interpolation,
combination, and the bit-exactness guarantees they promise.
"""

import itertools

import numpy as np
import pytest

from slpc.edit import (
    Correspondence,
    EditMode,
    EditRequest,
    combine,
    correspond,
    edit,
    interpolate,
)
from slpc.geometry import chamfer
from slpc.nets import SparseLatent


def rand_latent(k=8, d=16, seed=0):
    rng = np.random.default_rng(seed)
    return SparseLatent(
        rng.normal(size=(k, 3)).astype(np.float32),
        rng.normal(size=(k, d)).astype(np.float32),
    )


# ---------------------------------------------------------------------------
# edit modes


def test_keep_features_equals_plain_decode(tiny_bundle):
    latent = tiny_bundle.generate(np.random.default_rng(0))
    direct = tiny_bundle.decode_cloud(latent)
    _, via_edit = edit(
        EditRequest(latent, np.zeros(8, bool), EditMode.KEEP_FEATURES, seed=1), tiny_bundle
    )
    assert np.array_equal(direct.positions, via_edit.positions)
    assert np.array_equal(direct.normals, via_edit.normals)


def test_resample_moved_all_fixed_matches_keep(tiny_bundle):
    latent = tiny_bundle.generate(np.random.default_rng(1))
    lat_a, cloud_a = edit(
        EditRequest(latent, np.zeros(8, bool), EditMode.RESAMPLE_MOVED, seed=2), tiny_bundle
    )
    _, cloud_b = edit(
        EditRequest(latent, np.zeros(8, bool), EditMode.KEEP_FEATURES, seed=2), tiny_bundle
    )
    assert np.array_equal(lat_a.features, latent.features)
    assert np.array_equal(cloud_a.positions, cloud_b.positions)


def test_resample_moved_fixed_rows_bit_equal(tiny_bundle):
    latent = tiny_bundle.generate(np.random.default_rng(2))
    mask = np.array([True, True, True, False, False, False, False, False])
    out, _ = edit(EditRequest(latent, mask, EditMode.RESAMPLE_MOVED, seed=3), tiny_bundle)
    assert np.array_equal(out.features[~mask], latent.features[~mask])
    assert not np.array_equal(out.features[mask], latent.features[mask])
    assert np.array_equal(out.positions, latent.positions)


def test_resample_all_diversity(tiny_bundle):
    latent = tiny_bundle.generate(np.random.default_rng(3))
    _, c1 = edit(EditRequest(latent, np.zeros(8, bool), EditMode.RESAMPLE_ALL, seed=10), tiny_bundle)
    _, c2 = edit(EditRequest(latent, np.zeros(8, bool), EditMode.RESAMPLE_ALL, seed=11), tiny_bundle)
    assert chamfer(c1, c2) > 0.0


def test_edit_seed_reproducible(tiny_bundle):
    latent = tiny_bundle.generate(np.random.default_rng(4))
    mask = np.array([True] * 4 + [False] * 4)
    a, _ = edit(EditRequest(latent, mask, EditMode.RESAMPLE_MOVED, seed=42), tiny_bundle)
    b, _ = edit(EditRequest(latent, mask, EditMode.RESAMPLE_MOVED, seed=42), tiny_bundle)
    assert np.array_equal(a.features, b.features)


def test_edit_request_validation():
    latent = rand_latent()
    with pytest.raises(ValueError, match="length"):
        EditRequest(latent, np.zeros(5, bool), EditMode.KEEP_FEATURES)
    with pytest.raises(ValueError, match="at least one fixed"):
        EditRequest(latent, np.ones(8, bool), EditMode.RESAMPLE_MOVED)


def test_edit_dim_mismatch(tiny_bundle):
    wrong = rand_latent(k=5)
    with pytest.raises(ValueError, match="latent count"):
        edit(EditRequest(wrong, np.zeros(5, bool), EditMode.KEEP_FEATURES), tiny_bundle)
    wrong_d = rand_latent(k=8, d=7)
    with pytest.raises(ValueError, match="feature dim"):
        edit(EditRequest(wrong_d, np.zeros(8, bool), EditMode.KEEP_FEATURES), tiny_bundle)


# ---------------------------------------------------------------------------
# correspondence


def test_correspond_identity():
    a = rand_latent(seed=5)
    pi = correspond(a, a)
    assert pi.permutation.tolist() == list(range(8))


def test_correspond_recovers_row_swap():
    a = rand_latent(seed=6)
    perm = np.random.default_rng(7).permutation(8)
    b = SparseLatent(a.positions[perm], a.features[perm])
    pi = correspond(a, b)
    # row i of a matches row pi[i] of b, which must hold a's row i
    assert np.array_equal(b.positions[pi.permutation], a.positions)
    aligned = pi.apply(b)
    assert np.array_equal(aligned.positions, a.positions)
    assert np.array_equal(aligned.features, a.features)


def test_correspond_matches_bruteforce_three_points():
    rng = np.random.default_rng(8)
    a = SparseLatent(rng.normal(size=(3, 3)).astype(np.float32), np.zeros((3, 2), np.float32))
    b = SparseLatent(rng.normal(size=(3, 3)).astype(np.float32), np.zeros((3, 2), np.float32))
    pa = a.positions - a.positions.mean(axis=0)
    pb = b.positions - b.positions.mean(axis=0)
    best, best_cost = None, np.inf
    for perm in itertools.permutations(range(3)):
        cost = sum(np.sum((pa[i] - pb[perm[i]]) ** 2) for i in range(3))
        if cost < best_cost:
            best, best_cost = perm, cost
    assert correspond(a, b).permutation.tolist() == list(best)


def test_correspond_k_mismatch():
    with pytest.raises(ValueError, match="counts differ"):
        correspond(rand_latent(k=4), rand_latent(k=6))


def test_correspondence_must_be_bijection():
    with pytest.raises(ValueError, match="bijection"):
        Correspondence(np.array([0, 0, 1]))


# ---------------------------------------------------------------------------
# interpolation


def test_interpolate_endpoints_exact():
    a, b = rand_latent(seed=9), rand_latent(seed=10)
    s0 = interpolate(a, b, 0.0)
    s1 = interpolate(a, b, 1.0)
    assert np.array_equal(s0.positions, a.positions)
    assert np.array_equal(s0.features, a.features)
    assert np.array_equal(s1.positions, b.positions)
    assert np.array_equal(s1.features, b.features)


def test_interpolate_midpoint():
    a = SparseLatent(np.zeros((2, 3), np.float32), np.zeros((2, 4), np.float32))
    b = SparseLatent(
        np.array([[2.0, 0, 0], [0, 2.0, 0]], np.float32), np.ones((2, 4), np.float32)
    )
    mid = interpolate(a, b, 0.5)
    assert np.allclose(mid.positions, [[1.0, 0, 0], [0, 1.0, 0]])
    assert np.allclose(mid.features, 0.5)


def test_interpolate_mask_keeps_a_rows_across_grid():
    a, b = rand_latent(seed=11), rand_latent(seed=12)
    mask = np.array([True, False, True, False, False, False, False, True])
    for s in np.linspace(0.0, 1.0, 11):
        out = interpolate(a, b, float(s), mask=mask)
        assert np.array_equal(out.positions[mask], a.positions[mask])
        assert np.array_equal(out.features[mask], a.features[mask])


def test_interpolate_s_out_of_range():
    a, b = rand_latent(seed=13), rand_latent(seed=14)
    for bad in (-0.1, 1.1):
        with pytest.raises(ValueError, match="outside"):
            interpolate(a, b, bad)


# Recorded from an oracle run of the tiny fixture: the max CD between decoded
# clouds at adjacent interpolation steps (grid 0..1 by 0.05) stayed under
# 0.08; bound it with 3x headroom against retrain jitter.
INTERP_STEP_CD_BOUND = 0.25


def test_interpolation_continuity_smoke(tiny_bundle):
    a = tiny_bundle.generate(np.random.default_rng(5))
    b = tiny_bundle.generate(np.random.default_rng(6))
    aligned = correspond(a, b).apply(b)
    grid = np.arange(0.0, 1.0001, 0.05)
    decodes = [
        tiny_bundle.decode_cloud(interpolate(a, aligned, float(s))) for s in grid
    ]
    steps = [chamfer(decodes[i], decodes[i + 1]) for i in range(len(decodes) - 1)]
    assert max(steps) < INTERP_STEP_CD_BOUND, f"max adjacent-step CD {max(steps):.4f}"


# ---------------------------------------------------------------------------
# combine


def test_combine_single_source_identity():
    a = rand_latent(seed=15)
    out = combine([(a, np.arange(8))])
    assert np.array_equal(out.positions, a.positions)
    assert np.array_equal(out.features, a.features)


def test_combine_two_halves_verbatim():
    a, b = rand_latent(seed=16), rand_latent(seed=17)
    top, bottom = np.arange(4), np.arange(4, 8)
    out = combine([(a, top), (b, bottom)])
    assert np.array_equal(out.positions[top], a.positions[top])
    assert np.array_equal(out.features[top], a.features[top])
    assert np.array_equal(out.positions[bottom], b.positions[bottom])
    assert np.array_equal(out.features[bottom], b.features[bottom])


def test_combine_three_way_provenance():
    parts = [rand_latent(seed=s) for s in (18, 19, 20)]
    subsets = [np.array([0, 1, 2]), np.array([3, 4, 5]), np.array([6, 7])]
    out = combine(list(zip(parts, subsets)))
    for latent, idx in zip(parts, subsets):
        assert np.array_equal(out.positions[idx], latent.positions[idx])
        assert np.array_equal(out.features[idx], latent.features[idx])


def test_combine_collision_and_coverage_errors():
    a, b = rand_latent(seed=21), rand_latent(seed=22)
    with pytest.raises(ValueError, match="collide"):
        combine([(a, np.arange(5)), (b, np.arange(4, 8))])
    with pytest.raises(ValueError, match="covers"):
        combine([(a, np.arange(4))])
    with pytest.raises(ValueError, match="out of range"):
        combine([(a, np.array([7, 8]))])
