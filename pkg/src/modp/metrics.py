"""Cellwise and aggregate accuracy of a synthetic crosstab against the true one."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Crosstab
from .errors import DataValidationError

DEFAULT_PSEUDOCOUNT = 0.5
DEFAULT_D0 = 0.1
DEFAULT_Z0 = 1.0
DEFAULT_VARIANCE_FLOOR = 1e-5


def zvalue_cell(n1, N1, n2, N2, variance_floor: float = DEFAULT_VARIANCE_FLOOR):
    """Pooled two-proportion z statistic; works elementwise on arrays.

    The variance is floored at ``variance_floor`` so cells with a pooled
    proportion of exactly 0 or 1 give z = 0 instead of 0/0.
    """
    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    p1 = n1 / N1
    p2 = n2 / N2
    pooled = (n1 + n2) / (N1 + N2)
    var = pooled * (1.0 - pooled) * (1.0 / N1 + 1.0 / N2)
    z = (p1 - p2) / np.sqrt(np.maximum(var, variance_floor))
    return float(z) if z.ndim == 0 else z


def logdev_cell(c_syn, c_true, pseudocount: float = DEFAULT_PSEUDOCOUNT):
    """Absolute natural-log ratio of pseudocount-regularised counts."""
    # difference of logs rather than log of a ratio keeps d(a, b) == d(b, a) bit-exact
    d = np.abs(np.log(np.asarray(c_syn, dtype=float) + pseudocount)
               - np.log(np.asarray(c_true, dtype=float) + pseudocount))
    return float(d) if d.ndim == 0 else d


def blended_fm(d, z, d0: float = DEFAULT_D0, z0: float = DEFAULT_Z0):
    """``2 / (d0/|d| + z0/|z|)``, taken as 0 when either deviation is 0."""
    d = np.abs(np.asarray(d, dtype=float))
    z = np.abs(np.asarray(z, dtype=float))
    zero = (d == 0) | (z == 0)
    with np.errstate(divide="ignore"):
        fm = np.where(zero, 0.0, 2.0 / (d0 / np.where(zero, 1.0, d) + z0 / np.where(zero, 1.0, z)))
    return float(fm) if fm.ndim == 0 else fm


@dataclass(frozen=True)
class MetricConfig:
    pseudocount: float = DEFAULT_PSEUDOCOUNT
    d0: float = DEFAULT_D0
    z0: float = DEFAULT_Z0
    variance_floor: float = DEFAULT_VARIANCE_FLOOR


@dataclass(frozen=True)
class AggregateAccuracy:
    median: float
    mean_absolute: float
    rms: float

    @classmethod
    def from_values(cls, d: np.ndarray) -> "AggregateAccuracy":
        d = np.abs(np.asarray(d, dtype=float))
        return cls(float(np.median(d)), float(np.mean(d)), float(np.sqrt(np.mean(d * d))))


@dataclass(frozen=True)
class CellMetrics:
    i: np.ndarray
    j: np.ndarray
    true: np.ndarray
    synth: np.ndarray
    z: np.ndarray
    d: np.ndarray
    fm: np.ndarray

    def __len__(self) -> int:
        return len(self.i)


@dataclass(frozen=True)
class Evaluation:
    cells: CellMetrics
    aggregate: AggregateAccuracy
    n_true: int
    n_synth: int
    n_columns: int
    config: MetricConfig


def logdev_matrix(true_ct: Crosstab, synth_ct: Crosstab, pseudocount: float = DEFAULT_PSEUDOCOUNT) -> np.ndarray:
    return logdev_cell(synth_ct.counts, true_ct.counts, pseudocount)


def signed_logdev_matrix(true_ct: Crosstab, synth_ct: Crosstab,
                         pseudocount: float = DEFAULT_PSEUDOCOUNT) -> np.ndarray:
    return np.log(synth_ct.counts + pseudocount) - np.log(true_ct.counts + pseudocount)


def evaluate(true_ct: Crosstab, synth_ct: Crosstab, config: MetricConfig | None = None) -> Evaluation:
    """All upper-triangle cells (diagonal included) and the aggregates of d."""
    config = config or MetricConfig()
    if true_ct.counts.shape != synth_ct.counts.shape:
        raise DataValidationError(
            f"crosstab shapes differ: {true_ct.counts.shape} vs {synth_ct.counts.shape}")
    if true_ct.block_starts and synth_ct.block_starts and true_ct.block_starts != synth_ct.block_starts:
        raise DataValidationError("crosstabs have different block structures")
    if true_ct.N < 1 or synth_ct.N < 1:
        raise DataValidationError("both crosstabs need at least one row")
    iu, ju = np.triu_indices(true_ct.n_columns)
    t = true_ct.counts[iu, ju]
    s = synth_ct.counts[iu, ju]
    z = zvalue_cell(t, true_ct.N, s, synth_ct.N, config.variance_floor)
    d = logdev_cell(s, t, config.pseudocount)
    fm = blended_fm(d, z, config.d0, config.z0)
    cells = CellMetrics(iu, ju, t, s, np.atleast_1d(z), np.atleast_1d(d), np.atleast_1d(fm))
    return Evaluation(cells, AggregateAccuracy.from_values(d), true_ct.N, synth_ct.N,
                      true_ct.n_columns, config)


def _f(x: float) -> str:
    return repr(float(x))


def write_report(path, ev: Evaluation, seed: int | None = None) -> None:
    c = ev.config
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# modp-metrics v1\n")
        if seed is not None:
            fh.write(f"# seed={seed}\n")
        fh.write(f"# N_true={ev.n_true}\n# N_synth={ev.n_synth}\n# c={_f(c.pseudocount)}\n"
                 f"# d0={_f(c.d0)}\n# z0={_f(c.z0)}\n# variance_floor={_f(c.variance_floor)}\n")
        fh.write("i\tj\ttrue\tsynth\tz\td\tfm\n")
        cl = ev.cells
        for row in zip(cl.i.tolist(), cl.j.tolist(), cl.true.tolist(), cl.synth.tolist(),
                       cl.z.tolist(), cl.d.tolist(), cl.fm.tolist()):
            fh.write("%d\t%d\t%d\t%d\t%r\t%r\t%r\n" % row)
        a = ev.aggregate
        fh.write(f"[aggregate]\nmedian\t{_f(a.median)}\nmean_absolute\t{_f(a.mean_absolute)}\nrms\t{_f(a.rms)}\n")


def read_aggregate(path) -> AggregateAccuracy:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    block = lines[lines.index("[aggregate]") + 1:]
    vals = dict(ln.split("\t") for ln in block if ln)
    return AggregateAccuracy(float(vals["median"]), float(vals["mean_absolute"]), float(vals["rms"]))


def count_deciles(counts: np.ndarray) -> np.ndarray:
    """Decile index 0..9 of each count within the distribution of counts."""
    counts = np.asarray(counts, dtype=float)
    if counts.size == 0:
        return np.zeros(0, dtype=np.int64)
    edges = np.quantile(counts, np.arange(1, 10) / 10, method="lower")
    return np.searchsorted(edges, counts, side="left").astype(np.int64)


def fm_histogram(fm: np.ndarray, bin_width: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    top = max(bin_width, float(np.ceil(np.max(fm, initial=0.0) / bin_width) * bin_width))
    edges = np.arange(0.0, top + bin_width / 2, bin_width)
    if len(edges) < 2:
        edges = np.array([0.0, bin_width])
    hist, edges = np.histogram(fm, bins=edges)
    return hist, edges


def fm_grid(ev: Evaluation) -> np.ndarray:
    grid = np.zeros((ev.n_columns, ev.n_columns))
    grid[ev.cells.i, ev.cells.j] = ev.cells.fm
    grid[ev.cells.j, ev.cells.i] = ev.cells.fm
    return grid


def export_plot_data(ev: Evaluation, destination) -> list[Path]:
    """Write the four plot-data tables; returns the paths written."""
    dest = Path(destination)
    dest.mkdir(parents=True, exist_ok=True)
    cl = ev.cells
    paths = []

    p = dest / "scatter_counts.tsv"
    # zeros shown as 1 so they survive a log-log plot
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("i\tj\ttrue\tsynth\n")
        for i, j, t, s in zip(cl.i.tolist(), cl.j.tolist(), np.maximum(cl.true, 1).tolist(),
                              np.maximum(cl.synth, 1).tolist()):
            fh.write(f"{i}\t{j}\t{t}\t{s}\n")
    paths.append(p)

    p = dest / "dz_scatter.tsv"
    dec = count_deciles(cl.true)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("i\tj\tabs_d\tabs_z\tcount_decile\n")
        for i, j, d, z, k in zip(cl.i.tolist(), cl.j.tolist(), np.abs(cl.d).tolist(),
                                 np.abs(cl.z).tolist(), dec.tolist()):
            fh.write(f"{i}\t{j}\t{d!r}\t{z!r}\t{k}\n")
    paths.append(p)

    p = dest / "fm_histogram.tsv"
    hist, edges = fm_histogram(cl.fm)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("bin_lo\tbin_hi\tcount\n")
        for lo, hi, c in zip(edges[:-1].tolist(), edges[1:].tolist(), hist.tolist()):
            fh.write(f"{lo!r}\t{hi!r}\t{c}\n")
    paths.append(p)

    p = dest / "fm_heatmap.tsv"
    grid = fm_grid(ev)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for row in grid.tolist():
            fh.write("\t".join(repr(v) for v in row) + "\n")
    paths.append(p)
    return paths
