"""Masked logistic blades combined by a softmax gating network.

Each blade maps a response row ``x`` to ``sigmoid(x @ W + c)`` where ``W``
(in x out) has exact zeros on every within-question block, so no output
column can see its own question. A small two-layer gating net produces a
per-row convex combination of the blade outputs.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ResponseMatrix
from .errors import DataValidationError, FormatError

CHECKPOINT_MAGIC = b"MODPCKPT"
CHECKPOINT_VERSION = 1
_CK_HEADER = struct.Struct("<8sIIIIIQI")


def sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(g: np.ndarray) -> np.ndarray:
    g = g - g.max(axis=1, keepdims=True)
    e = np.exp(g)
    return e / e.sum(axis=1, keepdims=True)


def block_mask(block_starts: Sequence[int]) -> np.ndarray:
    """Boolean n x n matrix, True on within-question cells."""
    n = block_starts[-1]
    mask = np.zeros((n, n), dtype=bool)
    for s, e in zip(block_starts[:-1], block_starts[1:]):
        mask[s:e, s:e] = True
    return mask


def _as_input(x) -> np.ndarray:
    if isinstance(x, ResponseMatrix):
        return x.as_float()
    return np.asarray(x, dtype=np.float64)


@dataclass
class MaskedAffine:
    weights: np.ndarray  # (n, n), input index first
    bias: np.ndarray
    block_starts: tuple[int, ...]

    def __post_init__(self):
        self.block_starts = tuple(int(b) for b in self.block_starts)
        n = self.block_starts[-1]
        if self.weights.shape != (n, n) or self.bias.shape != (n,):
            raise DataValidationError("blade parameter shapes do not match block_starts")
        self.apply_mask()

    def apply_mask(self) -> None:
        for s, e in zip(self.block_starts[:-1], self.block_starts[1:]):
            self.weights[s:e, s:e] = 0.0

    def logits(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.weights.shape[0]:
            raise DataValidationError(f"input has {x.shape[1]} columns, blade expects {self.weights.shape[0]}")
        return x @ self.weights + self.bias

    def forward(self, x) -> np.ndarray:
        self.apply_mask()
        return sigmoid(self.logits(_as_input(x)))


def apply_mask(blade: MaskedAffine) -> None:
    blade.apply_mask()


def blade_forward(blade: MaskedAffine, m) -> np.ndarray:
    return blade.forward(m)


@dataclass
class GatingNet:
    w1: np.ndarray  # (n, F)
    b1: np.ndarray
    w2: np.ndarray  # (F, B)
    b2: np.ndarray

    @property
    def n_blades(self) -> int:
        return self.w2.shape[1]

    @property
    def reduced_features(self) -> int:
        return self.w1.shape[1]

    def logits(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.w1.shape[0]:
            raise DataValidationError(f"input has {x.shape[1]} columns, gating expects {self.w1.shape[0]}")
        h = np.maximum(x @ self.w1 + self.b1, 0.0)
        return h @ self.w2 + self.b2

    def forward(self, x) -> np.ndarray:
        return softmax(self.logits(_as_input(x)))


def gating_forward(g: GatingNet, m) -> np.ndarray:
    return g.forward(m)


@dataclass
class ForwardCache:
    x: np.ndarray
    blade_out: np.ndarray  # (B, N, n)
    hidden_pre: np.ndarray  # (N, F)
    weights: np.ndarray  # (N, B)
    output: np.ndarray


@dataclass
class MultiBladeModel:
    blades: list[MaskedAffine]
    gating: GatingNet
    block_starts: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not self.block_starts:
            self.block_starts = self.blades[0].block_starts
        self.block_starts = tuple(int(b) for b in self.block_starts)
        if any(b.block_starts != self.block_starts for b in self.blades):
            raise DataValidationError("all blades must share block_starts")
        if len(self.blades) != self.gating.n_blades:
            raise DataValidationError("gating output width differs from blade count")

    @classmethod
    def initialize(cls, block_starts: Sequence[int], num_blades: int = 5,
                   reduced_features: int = 15, seed: int = 0) -> "MultiBladeModel":
        """Glorot-uniform weights, biases uniform in +-1/sqrt(fan_out), mask applied."""
        rng = np.random.default_rng(seed)
        n = int(block_starts[-1])

        def glorot(fan_in, fan_out):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-bound, bound, size=(fan_in, fan_out))

        def bias(fan_out):
            bound = 1.0 / np.sqrt(fan_out)
            return rng.uniform(-bound, bound, size=fan_out)

        blades = [MaskedAffine(glorot(n, n), bias(n), tuple(block_starts)) for _ in range(num_blades)]
        gating = GatingNet(glorot(n, reduced_features), bias(reduced_features),
                           glorot(reduced_features, num_blades), bias(num_blades))
        return cls(blades, gating, tuple(block_starts))

    @property
    def n_blades(self) -> int:
        return len(self.blades)

    @property
    def reduced_features(self) -> int:
        return self.gating.reduced_features

    @property
    def n_columns(self) -> int:
        return self.block_starts[-1]

    @property
    def name(self) -> str:
        return f"model_{self.n_blades}_{self.reduced_features}"

    def apply_mask(self) -> None:
        for b in self.blades:
            b.apply_mask()

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (shared with gradients and the optimizer)."""
        ps = []
        for b in self.blades:
            ps += [b.weights, b.bias]
        g = self.gating
        return ps + [g.w1, g.b1, g.w2, g.b2]

    def copy(self) -> "MultiBladeModel":
        blades = [MaskedAffine(b.weights.copy(), b.bias.copy(), b.block_starts) for b in self.blades]
        g = self.gating
        return MultiBladeModel(blades, GatingNet(g.w1.copy(), g.b1.copy(), g.w2.copy(), g.b2.copy()),
                               self.block_starts)

    def forward_cached(self, x, gate_weights: np.ndarray | None = None) -> ForwardCache:
        x = _as_input(x)
        if x.ndim != 2 or x.shape[1] != self.n_columns:
            raise DataValidationError(f"input shape {x.shape} does not match {self.n_columns} columns")
        blade_out = np.stack([b.forward(x) for b in self.blades])
        g = self.gating
        hidden_pre = x @ g.w1 + g.b1
        if gate_weights is None:
            gate_weights = softmax(np.maximum(hidden_pre, 0.0) @ g.w2 + g.b2)
        output = np.einsum("bnk,nb->nk", blade_out, gate_weights)
        return ForwardCache(x, blade_out, hidden_pre, gate_weights, output)

    def forward(self, x, gate_weights: np.ndarray | None = None) -> np.ndarray:
        return self.forward_cached(x, gate_weights).output

    def gate_weights(self, x) -> np.ndarray:
        return self.gating.forward(x)


def model_forward(model: MultiBladeModel, m, chunk_rows: int = 65536) -> np.ndarray:
    """Probability matrix for every row of ``m``, evaluated in row chunks."""
    x = _as_input(m)
    if x.shape[0] <= chunk_rows:
        return model.forward(x)
    return np.concatenate([model.forward(x[s:s + chunk_rows]) for s in range(0, x.shape[0], chunk_rows)])


# -- diagnostics ---------------------------------------------------------------------


def dominant_blade(weights: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest blade index
    return np.argmax(weights, axis=1)


def sorted_weight_cdf(weights: np.ndarray) -> np.ndarray:
    """Per-row weights sorted descending; column k holds every row's (k+1)-th largest."""
    return -np.sort(-weights, axis=1)


def responses_by_blade(m: ResponseMatrix, assignment: np.ndarray, n_blades: int,
                       question: int) -> np.ndarray:
    """Percent of each blade's rows choosing each category of ``question``."""
    s, e = m.block_starts[question], m.block_starts[question + 1]
    out = np.zeros((n_blades, e - s))
    for b in range(n_blades):
        rows = m.data[assignment == b, s:e]
        if len(rows):
            out[b] = 100.0 * rows.sum(axis=0) / len(rows)
    return out


def coassignment(assign1: np.ndarray, assign2: np.ndarray, n1: int, n2: int) -> np.ndarray:
    out = np.zeros((n1, n2), dtype=np.int64)
    np.add.at(out, (assign1, assign2), 1)
    return out


@dataclass
class BladeDiagnostics:
    weights: np.ndarray
    dominant: np.ndarray
    sorted_weights: np.ndarray
    responses: dict[int, np.ndarray]
    coassignment: np.ndarray | None


def blade_diagnostics(model: MultiBladeModel, m: ResponseMatrix, other: MultiBladeModel | None = None,
                      questions: Sequence[int] | None = None) -> BladeDiagnostics:
    w = model.gate_weights(m)
    dom = dominant_blade(w)
    qs = range(m.n_questions) if questions is None else questions
    responses = {q: responses_by_blade(m, dom, model.n_blades, q) for q in qs}
    co = None
    if other is not None:
        dom2 = dominant_blade(other.gate_weights(m))
        co = coassignment(dom, dom2, model.n_blades, other.n_blades)
    return BladeDiagnostics(w, dom, sorted_weight_cdf(w), responses, co)


# -- checkpoint ------------------------------------------------------------------------


def save_checkpoint(path, model: MultiBladeModel, seed: int | None = None) -> None:
    """Write the versioned binary checkpoint (layout in docs/FORMATS.md)."""
    name = model.name.encode("utf-8")
    Q = len(model.block_starts) - 1
    parts = [
        _CK_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, model.n_blades, model.reduced_features,
                        model.n_columns, Q, 0 if seed is None else int(seed), 0 if seed is None else 1),
        struct.pack("<H", len(name)),
        name,
        struct.pack(f"<{Q + 1}I", *model.block_starts),
    ]
    for p in model.parameters():
        parts.append(np.ascontiguousarray(p, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint_with_meta(path) -> tuple[MultiBladeModel, dict]:
    raw = Path(path).read_bytes()
    if len(raw) < _CK_HEADER.size or raw[:8] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint")
    _, version, B, F, n, Q, seed, flags = _CK_HEADER.unpack_from(raw, 0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    off = _CK_HEADER.size
    (name_len,) = struct.unpack_from("<H", raw, off)
    off += 2
    name = raw[off:off + name_len].decode("utf-8")
    off += name_len
    starts = struct.unpack_from(f"<{Q + 1}I", raw, off)
    off += 4 * (Q + 1)

    def take(*shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(shape)
        off += 8 * count
        return arr

    try:
        blades = [MaskedAffine(take(n, n), take(n), starts) for _ in range(B)]
        gating = GatingNet(take(n, F), take(F), take(F, B), take(B))
    except ValueError as exc:
        raise FormatError(f"{path}: truncated checkpoint") from exc
    if off != len(raw):
        raise FormatError(f"{path}: trailing bytes in checkpoint")
    meta = {"name": name, "seed": seed if flags & 1 else None}
    return MultiBladeModel(blades, gating, starts), meta


def load_checkpoint(path) -> MultiBladeModel:
    return load_checkpoint_with_meta(path)[0]
