#!/usr/bin/env python3
"""
Pareto core tests: dominance, frontier, exact hypervolume and EHVI
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[2]))

from app.utils.errors import InvalidInputError
from app.utils.pareto import (
    GaussianPosterior,
    ParetoArchive,
    dominates,
    ehvi,
    ehvi_batch,
    hypervolume,
    hypervolume_improvement,
    normalization_bounds,
    pareto_front,
)


def _brute_force_hv(front, ref, n=60):
    """Grid estimate of the dominated volume (cell centres)"""
    ticks = (np.arange(n) + 0.5) / n
    grid = np.stack(np.meshgrid(ticks * ref[0], ticks * ref[1], ticks * ref[2], indexing="ij"), -1).reshape(-1, 3)
    front = np.asarray(front, dtype=float)
    covered = np.any(np.all(front[None, :, :] <= grid[:, None, :], axis=2), axis=1)
    return covered.mean() * np.prod(ref)


def test_dominates():
    print("🧪 dominance relation")
    assert dominates((0.5, 0.5, 0.5), (1, 1, 1))
    assert not dominates((1, 1, 1), (0.5, 0.5, 0.5))
    assert not dominates((0.3, 0.3, 0.3), (0.3, 0.3, 0.3))
    assert not dominates((0.2, 0.8, 0.5), (0.8, 0.2, 0.5))
    assert not dominates((0.8, 0.2, 0.5), (0.2, 0.8, 0.5))
    with pytest.raises(InvalidInputError):
        dominates((1, 2), (1, 2, 3))
    print("✅ dominance relation")


def test_pareto_front():
    assert pareto_front([(1, 1, 1), (0.5, 0.5, 0.5)]) == [1]
    # duplicates are both kept
    assert pareto_front([(0.5, 0.5, 0.5), (0.5, 0.5, 0.5), (0.9, 0.9, 0.9)]) == [0, 1]
    with pytest.raises(InvalidInputError):
        pareto_front([])

    rng = np.random.default_rng(3)
    Y = rng.random((60, 3))
    front = set(pareto_front(Y))
    for i in range(len(Y)):
        dominated = any(dominates(Y[j], Y[i]) for j in range(len(Y)))
        assert (i in front) == (not dominated)


def test_hypervolume_examples():
    print("🧪 exact hypervolume")
    assert hypervolume([(0.5, 0.5, 0.5)], (1, 1, 1)) == pytest.approx(0.125)
    assert hypervolume([(0.2, 0.8, 0.5), (0.8, 0.2, 0.5)], (1, 1, 1)) == pytest.approx(0.14)
    assert hypervolume([], (1, 1, 1)) == 0.0
    # points outside the reference box contribute nothing
    assert hypervolume([(1.2, 0.1, 0.1)], (1, 1, 1)) == 0.0
    print("✅ exact hypervolume")


def test_hypervolume_matches_grid_estimate():
    rng = np.random.default_rng(11)
    pts = rng.random((8, 3)) * 0.9
    front = pts[pareto_front(pts)]
    exact = hypervolume(front, (1, 1, 1))
    assert exact == pytest.approx(_brute_force_hv(front, (1, 1, 1)), abs=0.02)


def test_hypervolume_monotone_and_dominated_points_ignored():
    rng = np.random.default_rng(5)
    pts = rng.random((20, 3))
    hv_prev = 0.0
    for k in range(1, len(pts) + 1):
        hv_k = hypervolume(pts[:k], (1, 1, 1))
        assert hv_k >= hv_prev - 1e-12
        hv_prev = hv_k
    front = pts[pareto_front(pts)]
    assert hypervolume(front, (1, 1, 1)) == pytest.approx(hypervolume(pts, (1, 1, 1)))


def test_hypervolume_improvement_agrees_with_difference():
    rng = np.random.default_rng(7)
    front = rng.random((6, 3))
    front = front[pareto_front(front)]
    samples = rng.random((25, 3))
    gain = hypervolume_improvement(front, (1, 1, 1), samples)
    base = hypervolume(front, (1, 1, 1))
    for s, g in zip(samples, gain):
        assert g == pytest.approx(hypervolume(np.vstack([front, s]), (1, 1, 1)) - base, abs=1e-10)


def test_ehvi_zero_variance_is_exact():
    print("🧪 EHVI with zero variance")
    archive = ParetoArchive()
    archive.add("a", (0.9, 0.9, 0.9))
    post = GaussianPosterior((0.5, 0.5, 0.5), (0.0, 0.0, 0.0))
    assert ehvi(post, archive) == pytest.approx(0.124)
    assert ehvi(GaussianPosterior((0.9, 0.9, 0.9), (0, 0, 0)), archive) == pytest.approx(0.0)
    print("✅ EHVI with zero variance")


def test_ehvi_is_nonnegative_and_seeded():
    front = [(0.3, 0.6, 0.5), (0.6, 0.3, 0.5)]
    means = [(0.4, 0.4, 0.4), (0.95, 0.95, 0.95), (0.1, 0.9, 0.2)]
    variances = [(0.01, 0.02, 0.01)] * 3
    a = ehvi_batch(means, variances, front, (1, 1, 1), n_mc=512, seed=4)
    b = ehvi_batch(means, variances, front, (1, 1, 1), n_mc=512, seed=4)
    assert np.all(a >= 0)
    np.testing.assert_array_equal(a, b)
    assert a[0] > a[1]


def test_ehvi_rejects_bad_posterior():
    with pytest.raises(InvalidInputError):
        GaussianPosterior((0.5, 0.5, 0.5), (-0.1, 0.0, 0.0))
    with pytest.raises(InvalidInputError):
        ehvi(GaussianPosterior((0.5, 0.5, 0.5), (0, 0, 0)), ParetoArchive(), n_mc=0)


def test_archive_normalization():
    archive = ParetoArchive()
    archive.add("a", (2.0, 10.0, 100.0))
    archive.add("b", (4.0, 20.0, 300.0))
    archive.set_normalization((0.0, 0.0, 0.0), (8.0, 40.0, 400.0))
    assert archive.frontier() == [0]
    np.testing.assert_allclose(archive.frontier_points(), [[0.25, 0.25, 0.25]])
    assert archive.hypervolume() == pytest.approx(0.75 ** 3)
    with pytest.raises(InvalidInputError):
        archive.add("neg", (-1.0, 1.0, 1.0))
    with pytest.raises(InvalidInputError):
        archive.set_normalization((1, 1, 1), (1, 2, 2))


def test_normalization_bounds_margin():
    lo, hi = normalization_bounds([(1, 2, 3), (3, 4, 7)], margin=0.1)
    np.testing.assert_allclose(lo, [0.8, 1.8, 2.6])
    np.testing.assert_allclose(hi, [3.2, 4.2, 7.4])


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
