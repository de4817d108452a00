"""Block one-hot response matrices, crosstabs and bootstrap resampling."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataValidationError, FormatError, OneHotError

MATRIX_MAGIC = b"MODPMAT\x00"
MATRIX_VERSION = 1
FLAG_PACKED = 1
FLAG_SEED = 2
_HEADER = struct.Struct("<8sIIQIIQ")


def check_onehot(data: np.ndarray, block_starts: Sequence[int]) -> None:
    """Raise :class:`OneHotError` naming the first offending row and block."""
    if data.ndim != 2 or data.shape[1] != block_starts[-1]:
        raise OneHotError(f"expected {block_starts[-1]} columns, got shape {data.shape}")
    if data.size and not np.all((data == 0) | (data == 1)):
        row = int(np.argmax(np.any((data != 0) & (data != 1), axis=1)))
        raise OneHotError(f"row {row}: non-binary value", row=row)
    for q, (s, e) in enumerate(zip(block_starts[:-1], block_starts[1:])):
        sums = data[:, s:e].sum(axis=1, dtype=np.int64)
        bad = np.flatnonzero(sums != 1)
        if bad.size:
            r = int(bad[0])
            what = "no ones" if sums[r] == 0 else f"{int(sums[r])} ones"
            raise OneHotError(f"row {r}: block {q} has {what}", row=r, block=q)


@dataclass(frozen=True)
class ResponseMatrix:
    """N x n binary matrix, one-hot inside every question block."""

    data: np.ndarray
    block_starts: tuple[int, ...]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.uint8)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "block_starts", tuple(int(b) for b in self.block_starts))

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def n_columns(self) -> int:
        return self.data.shape[1]

    @property
    def n_questions(self) -> int:
        return len(self.block_starts) - 1

    def __len__(self) -> int:
        return self.N

    def as_float(self) -> np.ndarray:
        return self.data.astype(np.float64)

    def take(self, rows) -> "ResponseMatrix":
        return ResponseMatrix(self.data[np.asarray(rows, dtype=np.int64)], self.block_starts)

    def category_indices(self) -> np.ndarray:
        """Chosen category per (row, question), shape (N, Q)."""
        bs = self.block_starts
        if self.N == 0:
            return np.zeros((0, self.n_questions), dtype=np.int64)
        return np.stack([np.argmax(self.data[:, s:e], axis=1) for s, e in zip(bs[:-1], bs[1:])],
                        axis=1).astype(np.int64)

    def set_columns(self) -> np.ndarray:
        """Absolute column index of the set bit in each block, shape (N, Q)."""
        return self.category_indices() + np.asarray(self.block_starts[:-1], dtype=np.int64)


def load_matrix(block_starts: Sequence[int], rows) -> ResponseMatrix:
    """Validate encoded rows and wrap them; an empty input gives N = 0."""
    block_starts = tuple(int(b) for b in block_starts)
    data = np.asarray(rows, dtype=np.int64)
    if data.size == 0:
        data = data.reshape(0, block_starts[-1])
    check_onehot(data, block_starts)
    return ResponseMatrix(data.astype(np.uint8), block_starts)


@dataclass(frozen=True)
class Crosstab:
    counts: np.ndarray
    N: int
    block_starts: tuple[int, ...] = ()

    @property
    def n_columns(self) -> int:
        return self.counts.shape[0]

    def univariate(self) -> np.ndarray:
        return np.diag(self.counts).copy()


def crosstab(m: ResponseMatrix, chunk_rows: int = 65536) -> Crosstab:
    """R^T R in int64, accumulated over row chunks in order."""
    n = m.n_columns
    counts = np.zeros((n, n), dtype=np.int64)
    for start in range(0, m.N, chunk_rows):
        # float64 products of 0/1 are exact below 2**53
        block = m.data[start:start + chunk_rows].astype(np.float64)
        counts += np.rint(block.T @ block).astype(np.int64)
    return Crosstab(counts, m.N, m.block_starts)


def univariate_counts(m: ResponseMatrix) -> np.ndarray:
    return m.data.sum(axis=0, dtype=np.int64)


def bootstrap_resample(m: ResponseMatrix, seed: int) -> ResponseMatrix:
    if m.N == 0:
        raise DataValidationError("cannot bootstrap an empty matrix")
    rng = np.random.default_rng(seed)
    return m.take(rng.integers(0, m.N, size=m.N))


# -- files ------------------------------------------------------------------------


def write_matrix(path, m: ResponseMatrix, seed: int | None = None, packed: bool = False) -> None:
    """Write the encoded-matrix file (layout documented in docs/FORMATS.md)."""
    flags = (FLAG_PACKED if packed else 0) | (FLAG_SEED if seed is not None else 0)
    header = _HEADER.pack(MATRIX_MAGIC, MATRIX_VERSION, flags, m.N, m.n_columns,
                          m.n_questions, 0 if seed is None else int(seed))
    starts = struct.pack(f"<{m.n_questions + 1}I", *m.block_starts)
    payload = np.packbits(m.data, axis=1) if packed else m.data
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(starts)
        fh.write(np.ascontiguousarray(payload).tobytes())


def read_matrix_with_seed(path) -> tuple[ResponseMatrix, int | None]:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size or raw[:8] != MATRIX_MAGIC:
        raise FormatError(f"{path}: not an encoded matrix file")
    magic, version, flags, N, n, Q, seed = _HEADER.unpack_from(raw, 0)
    if version != MATRIX_VERSION:
        raise FormatError(f"{path}: unsupported matrix format version {version}")
    off = _HEADER.size
    starts = struct.unpack_from(f"<{Q + 1}I", raw, off)
    off += 4 * (Q + 1)
    if starts[0] != 0 or starts[-1] != n:
        raise FormatError(f"{path}: inconsistent block_starts")
    width = (n + 7) // 8 if flags & FLAG_PACKED else n
    body = np.frombuffer(raw, dtype=np.uint8, offset=off)
    if body.size != N * width:
        raise FormatError(f"{path}: payload has {body.size} bytes, expected {N * width}")
    body = body.reshape(N, width)
    data = np.unpackbits(body, axis=1, count=n) if flags & FLAG_PACKED else body
    check_onehot(data, starts)
    return ResponseMatrix(data, starts), (seed if flags & FLAG_SEED else None)


def read_matrix(path) -> ResponseMatrix:
    return read_matrix_with_seed(path)[0]


def write_crosstab(path, ct: Crosstab) -> None:
    iu, ju = np.triu_indices(ct.n_columns)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# N={ct.N}\n")
        fh.write("# block_starts=" + ",".join(str(b) for b in ct.block_starts) + "\n")
        fh.write("i\tj\tcount\n")
        for i, j, c in zip(iu.tolist(), ju.tolist(), ct.counts[iu, ju].tolist()):
            fh.write(f"{i}\t{j}\t{c}\n")


def read_crosstab(path) -> Crosstab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# N="):
        raise FormatError(f"{path}: missing crosstab header")
    N = int(lines[0][4:])
    starts = tuple(int(b) for b in lines[1].split("=", 1)[1].split(",") if b)
    entries = [tuple(int(x) for x in ln.split("\t")) for ln in lines[3:] if ln]
    n = starts[-1] if starts else (max(i for i, _, _ in entries) + 1 if entries else 0)
    counts = np.zeros((n, n), dtype=np.int64)
    for i, j, c in entries:
        counts[i, j] = counts[j, i] = c
    return Crosstab(counts, N, starts)
