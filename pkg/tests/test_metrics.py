import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from modp.dataset import ResponseMatrix, bootstrap_resample, crosstab
from modp.errors import DataValidationError
from modp.metrics import (AggregateAccuracy, MetricConfig, blended_fm, count_deciles, evaluate,
                          export_plot_data, fm_grid, logdev_cell, read_aggregate, write_report,
                          zvalue_cell)

from conftest import random_matrix

counts = st.integers(0, 10_000)


def test_zvalue_examples():
    # pooled 0.4, var 0.4*0.6*0.02 = 0.0048, z = -0.2/sqrt(0.0048)
    assert abs(zvalue_cell(30, 100, 50, 100) - (-2.887)) < 1e-3
    assert zvalue_cell(20, 100, 40, 200) == 0.0
    assert zvalue_cell(0, 100, 0, 100) == 0.0
    assert zvalue_cell(100, 100, 100, 100) == 0.0


def test_zvalue_floor():
    # 1 vs 0 out of 10^6 each: raw variance 1e-12 < 1e-5, so the floor applies
    z = zvalue_cell(1, 10**6, 0, 10**6)
    assert z == pytest.approx(1e-6 / math.sqrt(1e-5), rel=1e-12)


def test_logdev_examples():
    assert abs(logdev_cell(110, 100, 0.5) - 0.0949) < 1e-4
    assert logdev_cell(110, 100, 0.5) == pytest.approx(math.log(110.5 / 100.5), rel=1e-15)
    assert logdev_cell(7, 7) == 0.0
    assert logdev_cell(0, 0, 0.5) == 0.0


def test_blended_fm_examples():
    assert blended_fm(0.1, 1.0) == 1.0
    assert blended_fm(-0.1, -1.0, 0.1, 1.0) == 1.0
    assert blended_fm(0.2, 2.0) == pytest.approx(2.0, rel=1e-15)
    assert blended_fm(0.0, 3.0) == 0.0 and blended_fm(0.4, 0.0) == 0.0


@settings(max_examples=200)
@given(counts, st.integers(1, 10_000), counts, st.integers(1, 10_000))
def test_zvalue_antisymmetric_and_finite(n1, N1, n2, N2):
    assume(n1 <= N1 and n2 <= N2)
    z = zvalue_cell(n1, N1, n2, N2)
    assert math.isfinite(z)
    assert z == -zvalue_cell(n2, N2, n1, N1)


@settings(max_examples=200)
@given(counts, counts, st.floats(0.01, 5))
def test_logdev_symmetric_nonnegative(a, b, c):
    d = logdev_cell(a, b, c)
    assert d >= 0 and d == logdev_cell(b, a, c)


@settings(max_examples=300)
@given(st.floats(1e-6, 10), st.floats(1e-6, 100), st.floats(0.01, 1), st.floats(0.1, 5))
def test_blended_fm_bounds(d, z, d0, z0):
    fm = blended_fm(d, z, d0, z0)
    lo = min(d / d0, z / z0)
    assert fm >= 0
    assert lo * (1 - 1e-12) <= fm <= 2 * lo * (1 + 1e-12)


def test_self_evaluation_is_zero(rng):
    ct = crosstab(random_matrix(rng, [2, 3, 4], 50))
    ev = evaluate(ct, ct)
    assert ev.aggregate == AggregateAccuracy(0.0, 0.0, 0.0)
    assert np.all(ev.cells.z == 0) and np.all(ev.cells.fm == 0)
    assert len(ev.cells) == 9 * 10 // 2
    assert np.all(fm_grid(ev) == 0)


def test_evaluate_uses_full_sizes_and_upper_triangle(rng):
    t = crosstab(random_matrix(rng, [2, 3], 80))
    s = crosstab(random_matrix(rng, [2, 3], 55))
    ev = evaluate(t, s)
    i, j = ev.cells.i, ev.cells.j
    assert np.all(i <= j)
    k = 7
    assert ev.cells.z[k] == zvalue_cell(t.counts[i[k], j[k]], 80, s.counts[i[k], j[k]], 55)
    assert ev.cells.d[k] == logdev_cell(s.counts[i[k], j[k]], t.counts[i[k], j[k]])
    a = ev.aggregate
    assert a.median <= a.mean_absolute <= a.rms
    # within-question off-diagonal cells contribute d = 0
    assert ev.cells.d[(i == 0) & (j == 1)][0] == 0.0


def test_evaluate_rejects_mismatch(rng):
    a = crosstab(random_matrix(rng, [2, 3], 10))
    b = crosstab(random_matrix(rng, [3, 2], 10))
    with pytest.raises(DataValidationError):
        evaluate(a, b)
    c = crosstab(random_matrix(rng, [2, 2], 10))
    with pytest.raises(DataValidationError):
        evaluate(a, c)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(2, 4), min_size=1, max_size=4), st.integers(1, 60), st.integers(0, 2**32 - 1))
def test_mean_absolute_at_most_rms(sizes, n, seed):
    m = random_matrix(np.random.default_rng(seed), sizes, n)
    ev = evaluate(crosstab(m), crosstab(bootstrap_resample(m, seed)))
    a = ev.aggregate
    assert a.mean_absolute <= a.rms * (1 + 1e-12)
    assert np.all(ev.cells.d >= 0) and np.all(ev.cells.fm >= 0)


def test_median_can_exceed_mean_on_short_tailed_cells():
    # median <= mean needs a long right tail; with no tail it can fail
    vals = np.array([0.0, 0.0, 0.3, 0.3, 0.3])
    a = AggregateAccuracy.from_values(vals)
    assert a.median > a.mean_absolute
    assert a.mean_absolute <= a.rms


def test_median_below_mean_on_long_tailed_cells(rng):
    # two independent samples: big cells agree closely, small cells are noisy
    probs = [np.array([0.9, 0.08, 0.02]), np.array([0.7, 0.2, 0.07, 0.03]), np.array([0.5, 0.5])]

    def sample(n):
        cols = [np.eye(len(p), dtype=np.uint8)[rng.choice(len(p), n, p=p)] for p in probs]
        return ResponseMatrix(np.hstack(cols), (0, 3, 7, 9))

    t, s = crosstab(sample(2000)), crosstab(sample(2000))
    a = evaluate(t, s).aggregate
    assert a.median <= a.mean_absolute <= a.rms


def test_report_roundtrip(tmp_path, rng):
    t = crosstab(random_matrix(rng, [2, 3], 40))
    s = crosstab(random_matrix(rng, [2, 3], 40))
    ev = evaluate(t, s, MetricConfig(pseudocount=1.0, d0=0.2, z0=2.0))
    p = tmp_path / "r.tsv"
    write_report(p, ev, seed=9)
    lines = p.read_text().splitlines()
    assert lines[:3] == ["# modp-metrics v1", "# seed=9", "# N_true=40"]
    assert "# c=1.0" in lines and "# d0=0.2" in lines and "# z0=2.0" in lines
    assert read_aggregate(p) == ev.aggregate
    assert lines.count("i\tj\ttrue\tsynth\tz\td\tfm") == 1
    assert sum(1 for ln in lines if ln[:1].isdigit()) == 15


def test_plot_exports(tmp_path, rng):
    t = crosstab(random_matrix(rng, [2, 3, 3], 40))
    s = crosstab(random_matrix(rng, [2, 3, 3], 40))
    ev = evaluate(t, s)
    paths = export_plot_data(ev, tmp_path / "plots")
    names = sorted(p.name for p in paths)
    assert names == ["dz_scatter.tsv", "fm_heatmap.tsv", "fm_histogram.tsv", "scatter_counts.tsv"]
    scatter = np.loadtxt(tmp_path / "plots" / "scatter_counts.tsv", skiprows=1)
    assert len(scatter) == 8 * 9 // 2
    assert np.all(scatter[:, 2:] >= 1)
    grid = np.loadtxt(tmp_path / "plots" / "fm_heatmap.tsv")
    assert grid.shape == (8, 8) and np.array_equal(grid, grid.T)
    hist = np.loadtxt(tmp_path / "plots" / "fm_histogram.tsv", skiprows=1, ndmin=2)
    assert hist[:, 2].sum() == len(ev.cells)


def test_identical_heatmap_is_zero(tmp_path, rng):
    ct = crosstab(random_matrix(rng, [2, 2], 10))
    export_plot_data(evaluate(ct, ct), tmp_path)
    assert not np.loadtxt(tmp_path / "fm_heatmap.tsv").any()


def test_count_deciles():
    d = count_deciles(np.arange(100))
    assert d.min() == 0 and d.max() == 9
    assert np.all(np.diff(d) >= 0)
    assert np.all(np.bincount(d) == 10)
