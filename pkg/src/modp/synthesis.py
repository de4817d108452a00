"""Turn predicted probabilities into synthetic rows, plus post-processing.

Random draws come from per-purpose, per-instance numpy streams derived
from the master seed with ``SeedSequence`` spawn keys. Each stream is
consumed in (row, question) row-major order, so draw ``(r, q)`` of an
instance never depends on how many other instances exist.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import Crosstab, ResponseMatrix, crosstab
from .errors import ConfigError, DataValidationError, FormatError
from .metrics import DEFAULT_PSEUDOCOUNT, signed_logdev_matrix

_STREAM_INSTANTIATE = 1
_STREAM_RR = 2
_LOG2 = np.log(2.0)
_ENTROPY_EPS = 1e-10


def uniform_stream(seed: int, purpose: int, instance: int, shape: tuple[int, ...]) -> np.ndarray:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(purpose, instance))
    return np.random.Generator(np.random.PCG64(ss)).random(shape)


@dataclass(frozen=True)
class SynthesisResult:
    """Synthetic rows with bookkeeping.

    ``source_index[r]`` is the true row that generated synthetic row ``r``
    (its causal partner); ``block_entropy`` holds the bits contributed by
    each question's draw, ``entropy_bits`` their row sum.
    """

    rows: ResponseMatrix
    block_entropy: np.ndarray
    source_index: np.ndarray
    instance: np.ndarray

    @property
    def entropy_bits(self) -> np.ndarray:
        return self.block_entropy.sum(axis=1)

    @property
    def N(self) -> int:
        return self.rows.N

    def take(self, keep) -> "SynthesisResult":
        keep = np.asarray(keep, dtype=np.int64)
        return SynthesisResult(self.rows.take(keep), self.block_entropy[keep],
                               self.source_index[keep], self.instance[keep])


def block_entropies(probs: np.ndarray, block_starts: Sequence[int]) -> np.ndarray:
    """Entropy in bits of each block-normalised distribution, shape (N, Q)."""
    out = np.empty((probs.shape[0], len(block_starts) - 1))
    for k, (s, e) in enumerate(zip(block_starts[:-1], block_starts[1:])):
        q = probs[:, s:e] / probs[:, s:e].sum(axis=1, keepdims=True)
        out[:, k] = _entropy_bits(q)
    return out


def _entropy_bits(q: np.ndarray) -> np.ndarray:
    # the stabiliser can push a uniform block ~1e-10 past log2(K); clip to the true range
    h = -np.sum((q + _ENTROPY_EPS) * np.log(q + _ENTROPY_EPS), axis=1) / _LOG2
    return np.clip(h, 0.0, np.log2(q.shape[1]))


def instantiate(probs: np.ndarray, block_starts: Sequence[int], seed: int,
                instance: int = 0) -> SynthesisResult:
    """Draw one category per (row, question) from the block-normalised probabilities."""
    probs = np.asarray(probs, dtype=np.float64)
    block_starts = tuple(int(b) for b in block_starts)
    N, n = probs.shape
    if n != block_starts[-1]:
        raise DataValidationError(f"probabilities have {n} columns, schema has {block_starts[-1]}")
    Q = len(block_starts) - 1
    u = uniform_stream(seed, _STREAM_INSTANTIATE, instance, (N, Q))
    rows = np.zeros((N, n), dtype=np.uint8)
    ent = np.empty((N, Q))
    for k, (s, e) in enumerate(zip(block_starts[:-1], block_starts[1:])):
        q = probs[:, s:e] / probs[:, s:e].sum(axis=1, keepdims=True)
        ent[:, k] = _entropy_bits(q)
        cdf = np.cumsum(q, axis=1)
        cdf[:, -1] = 1.0
        pick = np.minimum((u[:, k:k + 1] >= cdf).sum(axis=1), e - s - 1)
        rows[np.arange(N), s + pick] = 1
    return SynthesisResult(ResponseMatrix(rows, block_starts), ent,
                           np.arange(N, dtype=np.int64), np.full(N, instance, dtype=np.int64))


def randomized_response(true_rows: ResponseMatrix, synth: SynthesisResult, p: float,
                        seed: int) -> SynthesisResult:
    """Per (row, question), pass the true answer through with probability ``p``.

    Replaced questions contribute 0 bits of entropy.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"pass-through probability must be in [0, 1], got {p}")
    if true_rows.block_starts != synth.rows.block_starts:
        raise DataValidationError("true and synthetic rows have different block structures")
    if synth.N and synth.source_index.max() >= true_rows.N:
        raise DataValidationError("synthetic rows are not aligned with the true rows")
    bs = true_rows.block_starts
    Q = len(bs) - 1
    replace_q = uniform_stream(seed, _STREAM_RR, 0, (synth.N, Q)) < p
    src = true_rows.data[synth.source_index]
    out = synth.rows.data.copy()
    ent = synth.block_entropy.copy()
    for k, (s, e) in enumerate(zip(bs[:-1], bs[1:])):
        r = replace_q[:, k]
        out[r, s:e] = src[r, s:e]
        ent[r, k] = 0.0
    return replace(synth, rows=ResponseMatrix(out, bs), block_entropy=ent)


def _pair_gather(table: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """``table[c_a, c_b]`` for every row's pair of set columns, shape (rows, Q, Q)."""
    return table[cols[:, :, None], cols[:, None, :]]


def structural_zero_hits(true_ct: Crosstab, rows: ResponseMatrix, chunk_rows: int = 8192) -> np.ndarray:
    """Boolean per row: does any cross-question pair land on a zero true cell?"""
    cols = rows.set_columns()
    zero = true_ct.counts == 0
    Q = cols.shape[1]
    off = ~np.eye(Q, dtype=bool)
    hits = np.zeros(rows.N, dtype=bool)
    for s in range(0, rows.N, chunk_rows):
        g = _pair_gather(zero, cols[s:s + chunk_rows])
        hits[s:s + chunk_rows] = np.any(g & off, axis=(1, 2))
    return hits


def remove_structural_zero_rows(true_ct: Crosstab, synth: SynthesisResult
                                ) -> tuple[SynthesisResult, np.ndarray]:
    """Drop synthetic rows that populate a cell with zero true count."""
    if true_ct.counts.shape[0] != synth.rows.n_columns:
        raise DataValidationError("crosstab and synthetic rows differ in width")
    hits = structural_zero_hits(true_ct, synth.rows)
    return synth.take(np.flatnonzero(~hits)), np.flatnonzero(hits)


def rowwise_loss(weights: np.ndarray, rows: ResponseMatrix, chunk_rows: int = 8192) -> np.ndarray:
    """Sum of ``weights[i, j]`` over each row's cross-question set-column pairs i < j."""
    cols = rows.set_columns()
    Q = cols.shape[1]
    upper = np.triu(np.ones((Q, Q), dtype=bool), k=1)
    out = np.zeros(rows.N)
    for s in range(0, rows.N, chunk_rows):
        g = _pair_gather(weights, cols[s:s + chunk_rows])
        out[s:s + chunk_rows] = np.sum(np.where(upper, g, 0.0), axis=(1, 2))
    return out


WEIGHT_KINDS = ("signed", "absolute")


def inaccuracy_weights(true_ct: Crosstab, inst1: SynthesisResult,
                       pseudocount: float = DEFAULT_PSEUDOCOUNT, kind: str = "signed") -> np.ndarray:
    """Signed log deviation of the first instance's crosstab from the truth.

    Positive on over-filled cells, negative on under-filled ones, so a high
    row loss means the row mostly feeds cells that already have too many
    counts. Unsigned |d| also rewards leaving under-filled cells, which
    depletes them further. ``kind="absolute"`` gives that unsigned variant.
    """
    if kind not in WEIGHT_KINDS:
        raise ConfigError(f"weight kind must be one of {WEIGHT_KINDS}, got {kind!r}")
    w = signed_logdev_matrix(true_ct, crosstab(inst1.rows), pseudocount)
    return np.abs(w) if kind == "absolute" else w


def threshold_from_quantile(losses: np.ndarray, quantile: float = 0.95) -> float:
    if not 0.0 <= quantile <= 1.0:
        raise ConfigError(f"threshold quantile must be in [0, 1], got {quantile}")
    return float(np.quantile(losses, quantile)) if len(losses) else 0.0


def two_instance_select(true_ct: Crosstab, inst1: SynthesisResult, inst2: SynthesisResult,
                        threshold: float, pseudocount: float = DEFAULT_PSEUDOCOUNT,
                        weight: str = "signed") -> SynthesisResult:
    """Emit the second instance for rows whose first-instance loss exceeds ``threshold``."""
    if inst1.N != inst2.N or not np.array_equal(inst1.source_index, inst2.source_index):
        raise DataValidationError("instances are not row-aligned")
    if inst1.rows.block_starts != inst2.rows.block_starts:
        raise DataValidationError("instances have different block structures")
    losses = rowwise_loss(inaccuracy_weights(true_ct, inst1, pseudocount, weight), inst1.rows)
    return select_by_loss(inst1, inst2, losses, threshold)


def select_by_loss(inst1: SynthesisResult, inst2: SynthesisResult, losses: np.ndarray,
                   threshold: float) -> SynthesisResult:
    second = losses > threshold
    rows = np.where(second[:, None], inst2.rows.data, inst1.rows.data)
    ent = np.where(second[:, None], inst2.block_entropy, inst1.block_entropy)
    inst = np.where(second, inst2.instance, inst1.instance)
    return SynthesisResult(ResponseMatrix(rows, inst1.rows.block_starts), ent,
                           inst1.source_index.copy(), inst)


@dataclass(frozen=True)
class SynthesisConfig:
    seed: int = 0
    instances: int = 1
    rr_p: float = 0.0
    fix_structural_zeros: bool = False
    threshold_quantile: float = 0.95
    pseudocount: float = DEFAULT_PSEUDOCOUNT
    weight: str = "signed"


@dataclass(frozen=True)
class PipelineOutput:
    before_removal: SynthesisResult
    result: SynthesisResult
    removed: np.ndarray
    threshold: float | None


def synthesize(probs: np.ndarray, true_rows: ResponseMatrix, cfg: SynthesisConfig,
               true_ct: Crosstab | None = None) -> PipelineOutput:
    """Instantiate, then (optionally) two-instance selection, randomized response, zero removal."""
    if cfg.instances not in (1, 2):
        raise ConfigError("instances must be 1 or 2")
    bs = true_rows.block_starts
    true_ct = true_ct if true_ct is not None else crosstab(true_rows)
    res = instantiate(probs, bs, cfg.seed, instance=0)
    threshold = None
    if cfg.instances == 2:
        inst2 = instantiate(probs, bs, cfg.seed, instance=1)
        losses = rowwise_loss(inaccuracy_weights(true_ct, res, cfg.pseudocount, cfg.weight), res.rows)
        threshold = threshold_from_quantile(losses, cfg.threshold_quantile)
        res = select_by_loss(res, inst2, losses, threshold)
    if cfg.rr_p > 0:
        res = randomized_response(true_rows, res, cfg.rr_p, cfg.seed)
    if cfg.fix_structural_zeros:
        kept, removed = remove_structural_zero_rows(true_ct, res)
    else:
        kept, removed = res, np.zeros(0, dtype=np.int64)
    return PipelineOutput(res, kept, removed, threshold)


def write_sidecar(path, before_removal: SynthesisResult, removed: np.ndarray,
                  seed: int | None = None) -> None:
    flag = np.zeros(before_removal.N, dtype=np.int64)
    flag[removed] = 1
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write("row\tentropy_bits\tremoved\tinstance\n")
        for r, h, f, k in zip(before_removal.source_index.tolist(), before_removal.entropy_bits.tolist(),
                              flag.tolist(), before_removal.instance.tolist()):
            fh.write(f"{r}\t{h!r}\t{f}\t{k}\n")


def read_sidecar(path) -> dict[str, np.ndarray]:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln and not ln.startswith("#")]
    if not lines or not lines[0].startswith("row\t"):
        raise FormatError(f"{path}: not a synthesis sidecar")
    data = np.array([ln.split("\t") for ln in lines[1:]], dtype=float).reshape(-1, 4)
    return {
        "row": data[:, 0].astype(np.int64),
        "entropy_bits": data[:, 1],
        "removed": data[:, 2].astype(bool),
        "instance": data[:, 3].astype(np.int64),
    }


def result_from_sidecar(rows: ResponseMatrix, sidecar: dict[str, np.ndarray]) -> SynthesisResult:
    """Rebuild the row alignment of a stored synthetic matrix from its sidecar."""
    keep = ~sidecar["removed"]
    if keep.sum() != rows.N:
        raise DataValidationError(f"sidecar lists {int(keep.sum())} surviving rows, matrix has {rows.N}")
    ent = sidecar["entropy_bits"][keep][:, None]
    return SynthesisResult(rows, ent, sidecar["row"][keep], sidecar["instance"][keep])
