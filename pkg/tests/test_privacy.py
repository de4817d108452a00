import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modp.dataset import ResponseMatrix, load_matrix
from modp.errors import DataValidationError
from modp.privacy import (effective_multiplicity, export_privacy_plots, hamming_causal_rank,
                          privacy_report, question_hamming, true_multiplicity, write_privacy_report)
from modp.synthesis import SynthesisResult, instantiate

from conftest import random_matrix

BS = (0, 2, 5, 7)


def exact_copy(m):
    """Zero-entropy synthesis that reproduces every true row."""
    return SynthesisResult(m, np.zeros((m.N, m.n_questions)), np.arange(m.N), np.zeros(m.N, dtype=np.int64))


def brute(true_rows, synth_rows, source, ent):
    def h(a, b):
        return sum(1 for s, e in zip(BS[:-1], BS[1:]) if a[s:e] != b[s:e])

    mult = [sum(1 for r in true_rows if r == true_rows[t]) for t in source]
    eff = [m * 2.0 ** e for m, e in zip(mult, ent)]
    rank = [sum(1 for x in true_rows if h(s, x) <= h(s, true_rows[t])) for s, t in zip(synth_rows, source)]
    return mult, eff, rank


def test_five_row_toy_matches_brute_force():
    true_rows = [[1, 0, 1, 0, 0, 1, 0], [0, 1, 0, 1, 0, 1, 0], [1, 0, 1, 0, 0, 1, 0],
                 [1, 0, 0, 0, 1, 0, 1], [0, 1, 0, 1, 0, 0, 1]]
    synth_rows = [[1, 0, 0, 1, 0, 1, 0], [0, 1, 0, 1, 0, 1, 0], [0, 1, 1, 0, 0, 0, 1],
                  [1, 0, 0, 0, 1, 1, 0], [1, 0, 1, 0, 0, 1, 0]]
    ent = np.array([[0.5, 1.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.5, 1.0], [0.0, 0.3, 0.2], [0.9, 0.0, 0.0]])
    true = load_matrix(BS, true_rows)
    synth = SynthesisResult(load_matrix(BS, synth_rows), ent, np.arange(5), np.zeros(5, dtype=np.int64))
    rep = privacy_report(true, synth, sample_size=None)
    mult, eff, rank = brute(true_rows, synth_rows, range(5), ent.sum(axis=1))
    assert rep.true_multiplicity.tolist() == mult
    assert rep.effective_multiplicity.tolist() == eff
    assert rep.causal_rank_count.tolist() == rank


def test_multiplicity_examples():
    a, b = [1, 0, 1, 0, 0, 1, 0], [0, 1, 1, 0, 0, 1, 0]
    assert true_multiplicity(load_matrix(BS, [a, a, b])).tolist() == [2, 2, 1]
    assert true_multiplicity(load_matrix(BS, [a] * 4)).tolist() == [4] * 4
    assert true_multiplicity(load_matrix(BS, [a, b])).tolist() == [1, 1]


def test_effective_multiplicity_examples():
    assert effective_multiplicity([1, 4], [0.0, 3.0]).tolist() == [1.0, 32.0]


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_duplication_doubles_multiplicity(n, seed):
    m = random_matrix(np.random.default_rng(seed), [2, 2, 3], n)
    twice = ResponseMatrix(np.vstack([m.data, m.data]), m.block_starts)
    assert np.array_equal(true_multiplicity(twice), 2 * np.tile(true_multiplicity(m), 2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_exact_copy_rank_equals_multiplicity(n, seed):
    m = random_matrix(np.random.default_rng(seed), [2, 2, 3], n)
    rep = privacy_report(m, exact_copy(m), sample_size=None)
    assert np.array_equal(rep.causal_rank_count, rep.true_multiplicity)
    assert np.array_equal(rep.effective_multiplicity, rep.true_multiplicity.astype(float))


def test_unique_and_duplicated_copies(rng):
    m = random_matrix(rng, [3, 3, 3, 3], 5)
    m = ResponseMatrix(np.vstack([m.data, np.repeat(m.data[:1], 3, axis=0)]), m.block_starts)
    ranks = hamming_causal_rank(m, exact_copy(m))
    mult = true_multiplicity(m)
    assert np.all(ranks[mult == 1] == 1)
    assert np.all(ranks[mult == 4] == 4)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(0, 2**32 - 1))
def test_hamming_metric_properties(n, seed):
    m = random_matrix(np.random.default_rng(seed), [2, 3, 4, 2], n)
    d = question_hamming(m.data, m.data)
    assert np.all(np.diag(d) == 0) and np.array_equal(d, d.T)
    assert np.all((d >= 0) & (d <= 4))
    for a, b, c in itertools.permutations(range(min(n, 5)), 3):
        assert d[a, c] <= d[a, b] + d[b, c]
    # equals half the differing binary columns
    cols = (m.data[:, None, :] != m.data[None, :, :]).sum(axis=2)
    assert np.array_equal(2 * d, cols)


def test_rank_monotone_in_partner_distance(rng):
    true = random_matrix(rng, [3, 3, 3, 3], 60)
    s = true.data[:1].repeat(60, axis=0)
    synth = SynthesisResult(ResponseMatrix(s, true.block_starts), np.zeros((60, 4)), np.arange(60),
                            np.zeros(60, dtype=np.int64))
    rank = hamming_causal_rank(true, synth)
    dist = question_hamming(s[:1], true.data)[0]
    order = np.argsort(dist, kind="stable")
    assert np.all(np.diff(rank[order]) >= 0)
    assert np.all(rank >= 1)


def test_chunking_does_not_change_ranks(rng):
    true = random_matrix(rng, [2, 3, 2], 50)
    synth = instantiate(rng.uniform(0.1, 1, (50, 7)), true.block_starts, 1)
    assert np.array_equal(hamming_causal_rank(true, synth, chunk_rows=3), hamming_causal_rank(true, synth))


def test_sampling_and_empty_sample(rng):
    true = random_matrix(rng, [2, 3], 30)
    synth = instantiate(rng.uniform(0.1, 1, (30, 5)), true.block_starts, 0)
    a = privacy_report(true, synth, sample_size=10, seed=4)
    b = privacy_report(true, synth, sample_size=10, seed=4)
    assert len(a) == 10 and np.array_equal(a.row, b.row)
    assert np.all(np.diff(a.row) > 0)
    empty = privacy_report(true, synth, sample_size=0)
    assert len(empty) == 0


def test_misalignment_rejected(rng):
    true = random_matrix(rng, [2, 3], 5)
    synth = instantiate(rng.uniform(0.1, 1, (8, 5)), true.block_starts, 0)
    with pytest.raises(DataValidationError):
        hamming_causal_rank(true, synth)


def test_report_and_plots(tmp_path, rng):
    true = random_matrix(rng, [2, 3, 2], 40)
    synth = instantiate(rng.uniform(0.1, 1, (40, 7)), true.block_starts, 0)
    rep = privacy_report(true, synth, sample_size=None)
    p = tmp_path / "priv.tsv"
    write_privacy_report(p, rep, seed=5)
    lines = p.read_text().splitlines()
    assert lines[:2] == ["# modp-privacy v1", "# seed=5"]
    assert len(lines) == 3 + 40
    paths = export_privacy_plots(rep, tmp_path / "plots")
    assert len(paths) == 4
    cdf = np.loadtxt(tmp_path / "plots" / "causal_rank_cdf.tsv", skiprows=1, ndmin=2)
    assert cdf[-1, 1] == pytest.approx(1.0) and np.all(np.diff(cdf[:, 1]) > 0)
    hist = np.loadtxt(tmp_path / "plots" / "entropy_histogram.tsv", skiprows=1, ndmin=2)
    assert hist[:, 2].sum() == 40
