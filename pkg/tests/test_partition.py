import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chi2_contingency

from umlearn.errors import ConfigError
from umlearn.partition import RectilinearGrid, build_uniform_grid, cell_of, cell_probabilities, histogram
from umlearn.truth import TABLE_III, GaussianSpec, sample


def test_uniform_grid_two_cells():
    g = build_uniform_grid([-3, -3], [3, 3], 2)
    assert g.cells == 4 and g.dims == 2
    for c in g.hyperplanes:
        np.testing.assert_array_equal(c, [0.0])


def test_uniform_grid_four_cells():
    g = build_uniform_grid([-3, -3], [3, 3], 4)
    assert g.cells == 16
    np.testing.assert_allclose(g.hyperplanes[0], [-1.5, 0.0, 1.5])


def test_uniform_grid_sixteen_cells():
    g = build_uniform_grid([-3, -3], [3, 3], 16)
    assert g.cells == 256
    assert len(g.hyperplanes[1]) == 15
    np.testing.assert_allclose(np.diff(g.hyperplanes[1]), 0.375)


def test_uniform_grid_rejects_single_cell():
    with pytest.raises(ConfigError):
        build_uniform_grid([0.0], [1.0], 1)
    with pytest.raises(ConfigError):
        build_uniform_grid([1.0], [0.0], 3)


def test_interior_cells_are_congruent():
    g = build_uniform_grid([-2.0, 0.0], [4.0, 1.0], 6)
    widths = [np.diff(c) for c in g.hyperplanes]
    np.testing.assert_allclose(widths[0], 1.0)
    np.testing.assert_allclose(widths[1], 1.0 / 6.0)


def test_cell_of_examples():
    g2 = build_uniform_grid([-3, -3], [3, 3], 2)
    g4 = build_uniform_grid([-3, -3], [3, 3], 4)
    assert cell_of(g2, [0.0, 0.0]) == 3
    assert cell_of(g4, [-5.0, 2.0]) == 3
    assert cell_of(g4, [-1.5, -1.5]) == 5


def test_histogram_examples():
    g2 = build_uniform_grid([-3, -3], [3, 3], 2)
    np.testing.assert_array_equal(histogram(g2, np.zeros((0, 2))), [0, 0, 0, 0])
    pts = [(1, 1), (-1, 1), (1, -1), (-1, -1)]
    np.testing.assert_array_equal(histogram(g2, pts), [1, 1, 1, 1])


def test_mixture_quadrant_counts():
    n = 100_000
    g2 = build_uniform_grid([-3, -3], [3, 3], 2)
    counts = histogram(g2, sample(TABLE_III["Q1"], np.random.default_rng(0), n))
    sigma = np.sqrt(n * 0.25 * 0.75)
    np.testing.assert_array_less(np.abs(counts - 0.25 * n), 3 * sigma)


def test_coarse_grid_cannot_tell_q1_from_q2():
    n = 100_000
    g2 = build_uniform_grid([-3, -3], [3, 3], 2)
    rng = np.random.default_rng(1)
    a = histogram(g2, sample(TABLE_III["Q1"], rng, n))
    b = histogram(g2, sample(TABLE_III["Q2"], rng, n))
    assert chi2_contingency(np.vstack([a, b])).pvalue > 0.01
    np.testing.assert_allclose(cell_probabilities(g2, TABLE_III["Q1"]), 0.25, atol=1e-12)
    np.testing.assert_allclose(cell_probabilities(g2, TABLE_III["Q2"]), 0.25, atol=1e-12)


def test_cell_probabilities_match_sampling():
    g = build_uniform_grid([-3, -3], [3, 3], 8)
    p = cell_probabilities(g, TABLE_III["Q2"])
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    n = 200_000
    freq = histogram(g, sample(TABLE_III["Q2"], np.random.default_rng(2), n)) / n
    np.testing.assert_array_less(np.abs(freq - p), 5 * np.sqrt(p * (1 - p) / n) + 1e-9)


def test_cell_probabilities_correlated_gaussian():
    spec = GaussianSpec([0.2, -0.1], [[1.0, 0.6], [0.6, 1.5]])
    g = build_uniform_grid([-2, -2], [2, 2], 3)
    p = cell_probabilities(g, spec)
    n = 200_000
    freq = histogram(g, sample(spec, np.random.default_rng(3), n)) / n
    assert p.sum() == pytest.approx(1.0, abs=1e-6)
    np.testing.assert_array_less(np.abs(freq - p), 5 * np.sqrt(p * (1 - p) / n) + 1e-5)


def test_grid_json_round_trip():
    g = build_uniform_grid([-3, -1], [3, 1], 5)
    obj = g.to_json()
    assert obj["dims"] == 2
    back = RectilinearGrid.from_json(obj)
    for a, b in zip(back.hyperplanes, g.hyperplanes):
        np.testing.assert_array_equal(a, b)
    box = RectilinearGrid.from_json({"lo": [-3, -1], "hi": [3, 1], "cells": 5})
    np.testing.assert_array_equal(box.hyperplanes[1], g.hyperplanes[1])


def test_grid_rejects_unsorted_hyperplanes():
    with pytest.raises(ConfigError):
        RectilinearGrid(([0.0, -1.0],))


points = st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), max_size=200)


@settings(max_examples=80, deadline=None)
@given(points, st.integers(2, 9))
def test_partition_property(pts, g):
    grid = build_uniform_grid([-3, -3], [3, 3], g)
    x = np.array(pts, dtype=float).reshape(-1, 2)
    h = histogram(grid, x)
    assert h.sum() == len(x) and h.shape == (grid.cells,)
    if len(x):
        idx = cell_of(grid, x)
        assert np.all((idx >= 0) & (idx < grid.cells))
        np.testing.assert_array_equal(np.bincount(idx, minlength=grid.cells), h)


@settings(max_examples=60, deadline=None)
@given(points)
def test_refinement_consistency(pts):
    x = np.array(pts, dtype=float).reshape(-1, 2)
    coarse = histogram(build_uniform_grid([-3, -3], [3, 3], 2), x).reshape(2, 2)
    fine = histogram(build_uniform_grid([-3, -3], [3, 3], 4), x).reshape(4, 4)
    np.testing.assert_array_equal(fine.reshape(2, 2, 2, 2).sum(axis=(1, 3)), coarse)
