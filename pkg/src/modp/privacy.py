"""Empirical privacy measures: multiplicities and Hamming causal rank."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ResponseMatrix
from .errors import DataValidationError
from .synthesis import SynthesisResult


def row_keys(m: ResponseMatrix) -> np.ndarray:
    """Inverse index of each row among the distinct rows (exact byte equality)."""
    if m.N == 0:
        return np.zeros(0, dtype=np.int64)
    packed = np.ascontiguousarray(np.packbits(m.data, axis=1))
    view = packed.view(np.dtype((np.void, packed.shape[1]))).ravel()
    _, inverse = np.unique(view, return_inverse=True)
    return inverse.ravel().astype(np.int64)


def true_multiplicity(m: ResponseMatrix) -> np.ndarray:
    """Number of rows (itself included) identical to each row."""
    keys = row_keys(m)
    return np.bincount(keys)[keys] if m.N else keys


def effective_multiplicity(multiplicity, entropy_bits) -> np.ndarray:
    return np.asarray(multiplicity, dtype=float) * np.exp2(np.asarray(entropy_bits, dtype=float))


def question_hamming(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Differing questions between one-hot rows ``a`` (k, n) and ``b`` (m, n), shape (k, m)."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    Q = int(round(a[0].sum())) if len(a) else 0
    # matching set bits count equal questions; float32 sums of 0/1 are exact here
    return Q - np.rint(a @ b.T).astype(np.int64)


def hamming_causal_rank(true_m: ResponseMatrix, synth: SynthesisResult, sample=None,
                        chunk_rows: int | None = None) -> np.ndarray:
    """For each sampled synthetic row, true rows at least as close as its causal partner.

    The partner itself is counted, so the minimum is 1.
    """
    if true_m.block_starts != synth.rows.block_starts:
        raise DataValidationError("true and synthetic rows have different block structures")
    if synth.N and (synth.source_index.min() < 0 or synth.source_index.max() >= true_m.N):
        raise DataValidationError("synthetic rows are not aligned with the true rows")
    rows = np.arange(synth.N) if sample is None else np.asarray(sample, dtype=np.int64)
    out = np.zeros(len(rows), dtype=np.int64)
    truth = true_m.data.astype(np.float32)
    # keep each (chunk x N) distance block near 4M entries
    chunk_rows = chunk_rows or max(1, (1 << 22) // max(true_m.N, 1))
    for s in range(0, len(rows), chunk_rows):
        r = rows[s:s + chunk_rows]
        syn = synth.rows.data[r]
        dist = question_hamming(syn, truth)
        partner = dist[np.arange(len(r)), synth.source_index[r]]
        out[s:s + chunk_rows] = np.sum(dist <= partner[:, None], axis=1)
    return out


@dataclass(frozen=True)
class PrivacyReport:
    row: np.ndarray  # synthetic row position
    source: np.ndarray  # causal partner (true row index)
    entropy_bits: np.ndarray
    true_multiplicity: np.ndarray
    effective_multiplicity: np.ndarray
    causal_rank_count: np.ndarray

    def __len__(self) -> int:
        return len(self.row)


def sample_rows(n_rows: int, sample_size: int | None, seed: int) -> np.ndarray:
    if sample_size is None or sample_size >= n_rows:
        return np.arange(n_rows)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_rows, size=sample_size, replace=False))


def privacy_report(true_m: ResponseMatrix, synth: SynthesisResult, sample_size: int | None = 10_000,
                   seed: int = 0) -> PrivacyReport:
    rows = sample_rows(synth.N, sample_size, seed)
    src = synth.source_index[rows]
    mult = true_multiplicity(true_m)[src] if len(rows) else np.zeros(0, dtype=np.int64)
    ent = synth.entropy_bits[rows]
    return PrivacyReport(rows, src, ent, mult, effective_multiplicity(mult, ent),
                         hamming_causal_rank(true_m, synth, rows))


def write_privacy_report(path, rep: PrivacyReport, seed: int | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# modp-privacy v1\n")
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("row\tsource\tentropy_bits\tmultiplicity\teffective_multiplicity\tcausal_rank_count\n")
        for vals in zip(rep.row.tolist(), rep.source.tolist(), rep.entropy_bits.tolist(),
                        rep.true_multiplicity.tolist(), rep.effective_multiplicity.tolist(),
                        rep.causal_rank_count.tolist()):
            fh.write("%d\t%d\t%r\t%d\t%r\t%d\n" % vals)


def _write_hist(path: Path, header: str, edges: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(header + "\n")
        for lo, hi, c in zip(edges[:-1].tolist(), edges[1:].tolist(), counts.tolist()):
            fh.write(f"{lo!r}\t{hi!r}\t{c}\n")


def export_privacy_plots(rep: PrivacyReport, destination) -> list[Path]:
    """Entropy histogram, multiplicity scatter, effective-multiplicity histogram, rank CDF."""
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    paths = []

    p = dest / "entropy_histogram.tsv"
    top = max(1.0, float(np.ceil(np.max(rep.entropy_bits, initial=0.0))))
    counts, edges = np.histogram(rep.entropy_bits, bins=np.arange(0.0, top + 1.0, 1.0))
    _write_hist(p, "bits_lo\tbits_hi\tcount", edges, counts)
    paths.append(p)

    p = dest / "multiplicity_scatter.tsv"
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row\tentropy_bits\tmultiplicity\n")
        for r, h, m in zip(rep.row.tolist(), rep.entropy_bits.tolist(), rep.true_multiplicity.tolist()):
            fh.write(f"{r}\t{h!r}\t{m}\n")
    paths.append(p)

    p = dest / "effective_multiplicity_histogram.tsv"
    logm = np.log10(rep.effective_multiplicity) if len(rep) else np.zeros(0)
    top = max(1.0, float(np.ceil(np.max(logm, initial=0.0) * 4) / 4))
    counts, edges = np.histogram(logm, bins=np.arange(0.0, top + 0.25, 0.25))
    _write_hist(p, "log10_lo\tlog10_hi\tcount", edges, counts)
    paths.append(p)

    p = dest / "causal_rank_cdf.tsv"
    ranks, counts = np.unique(rep.causal_rank_count, return_counts=True)
    cdf = np.cumsum(counts) / max(len(rep), 1)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("causal_rank_count\tcumulative_fraction\n")
        for k, c in zip(ranks.tolist(), cdf.tolist()):
            fh.write(f"{k}\t{c!r}\n")
    paths.append(p)
    return paths
