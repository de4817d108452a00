"""Question layout and the raw-value <-> one-hot encoding.

A schema is a list of questions. Each question owns a contiguous block of
binary columns, one per category; ``block_starts`` holds the block
boundaries (length Q+1, first entry 0, last entry the total column count).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, SchemaError

SCHEMA_FORMAT = "modp-schema"
SCHEMA_VERSION = 1

CATEGORICAL = "categorical"
QUANTILE = "quantile"
MERGED = "merged"
SKIP = "skip"
KINDS = (CATEGORICAL, QUANTILE, MERGED)


def _fmt_edge(x: float) -> str:
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def bin_labels(edges: Sequence[float]) -> list[str]:
    """Interval labels for the ``len(edges) + 1`` bins cut at ``edges``."""
    if len(edges) == 0:
        return ["(-inf,inf)"]
    labels = [f"<={_fmt_edge(edges[0])}"]
    for lo, hi in zip(edges[:-1], edges[1:]):
        labels.append(f"({_fmt_edge(lo)},{_fmt_edge(hi)}]")
    labels.append(f">{_fmt_edge(edges[-1])}")
    return labels


@dataclass(frozen=True)
class QuestionSpec:
    name: str
    kind: str
    categories: tuple[str, ...]
    bin_edges: tuple[float, ...] | None = None
    merge_map: tuple[tuple[str, str], ...] | None = None
    missing_codes: tuple[str, ...] = ()
    missing_position: str = "after"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"question {self.name!r}: unknown kind {self.kind!r}")
        if len(self.categories) < 2:
            raise SchemaError(f"question {self.name!r}: needs at least 2 categories")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaError(f"question {self.name!r}: duplicate category labels")
        if (self.bin_edges is not None) != (self.kind == QUANTILE):
            raise SchemaError(f"question {self.name!r}: bin_edges present iff kind is quantile")
        if (self.merge_map is not None) != (self.kind == MERGED):
            raise SchemaError(f"question {self.name!r}: merge_map present iff kind is merged")
        if self.missing_position not in ("before", "after"):
            raise SchemaError(f"question {self.name!r}: missing_position must be before/after")
        if self.kind == QUANTILE:
            edges = np.asarray(self.bin_edges, dtype=float)
            if np.any(np.diff(edges) <= 0):
                raise SchemaError(f"question {self.name!r}: bin edges must be strictly increasing")
            if len(edges) + 1 + len(self.missing_codes) != len(self.categories):
                raise SchemaError(f"question {self.name!r}: bin edge count does not match categories")
        if self.kind == MERGED:
            image = {cat for _, cat in self.merge_map}
            if image != set(self.categories):
                raise SchemaError(f"question {self.name!r}: merge image differs from categories")
        object.__setattr__(self, "_index", {c: k for k, c in enumerate(self.categories)})
        if self.merge_map is not None:
            object.__setattr__(self, "_merge", dict(self.merge_map))

    @property
    def size(self) -> int:
        return len(self.categories)

    @property
    def n_bins(self) -> int:
        return 0 if self.bin_edges is None else len(self.bin_edges) + 1

    def category_index(self, value) -> int:
        """Map a raw value (label or number) to its category index."""
        if self.kind == QUANTILE:
            return self._quantile_index(value)
        label = str(value)
        if self.kind == MERGED:
            if label not in self._merge:
                raise SchemaError(f"question {self.name!r}: raw label {label!r} not in merge map")
            label = self._merge[label]
        try:
            return self._index[label]
        except KeyError:
            raise SchemaError(f"question {self.name!r}: unknown category {label!r}") from None

    def _quantile_index(self, value) -> int:
        offset = len(self.missing_codes) if self.missing_position == "before" else 0
        if isinstance(value, str):
            if value in self.missing_codes:
                k = self.missing_codes.index(value)
                return k if self.missing_position == "before" else self.n_bins + k
            try:
                x = float(value)
            except ValueError:
                raise SchemaError(
                    f"question {self.name!r}: value {value!r} is neither numeric nor a missing code"
                ) from None
        else:
            x = float(value)
        if math.isnan(x):
            raise SchemaError(f"question {self.name!r}: NaN is outside all bins")
        # value equal to an edge goes to the lower bin
        return offset + int(np.searchsorted(np.asarray(self.bin_edges), x, side="left"))

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "categories": list(self.categories)}
        if self.kind == QUANTILE:
            d["bin_edges"] = [float(e) for e in self.bin_edges]
            d["missing_codes"] = list(self.missing_codes)
            d["missing_position"] = self.missing_position
        if self.kind == MERGED:
            d["merge_map"] = [[raw, cat] for raw, cat in self.merge_map]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionSpec":
        return cls(
            name=d["name"],
            kind=d["kind"],
            categories=tuple(d["categories"]),
            bin_edges=tuple(d["bin_edges"]) if "bin_edges" in d else None,
            merge_map=tuple((r, c) for r, c in d["merge_map"]) if "merge_map" in d else None,
            missing_codes=tuple(d.get("missing_codes", ())),
            missing_position=d.get("missing_position", "after"),
        )


@dataclass(frozen=True)
class CategoricalSchema:
    questions: tuple[QuestionSpec, ...]
    block_starts: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        if not self.questions:
            raise SchemaError("schema needs at least one question")
        names = [q.name for q in self.questions]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate question names")
        starts = np.concatenate([[0], np.cumsum([q.size for q in self.questions])])
        object.__setattr__(self, "block_starts", tuple(int(s) for s in starts))

    @classmethod
    def from_sizes(cls, sizes: Iterable[int], prefix: str = "Q") -> "CategoricalSchema":
        """Anonymous schema with categories ``c0, c1, ...`` per question."""
        return cls(
            tuple(
                QuestionSpec(f"{prefix}{i}", CATEGORICAL, tuple(f"c{k}" for k in range(n)))
                for i, n in enumerate(sizes)
            )
        )

    @property
    def n_questions(self) -> int:
        return len(self.questions)

    @property
    def n_columns(self) -> int:
        return self.block_starts[-1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(q.size for q in self.questions)

    def blocks(self) -> list[tuple[int, int]]:
        return list(zip(self.block_starts[:-1], self.block_starts[1:]))

    def column_block(self) -> np.ndarray:
        """Question index of every column."""
        return np.repeat(np.arange(self.n_questions), self.sizes)

    def question(self, name: str) -> QuestionSpec:
        for q in self.questions:
            if q.name == name:
                return q
        raise KeyError(name)

    def column_labels(self) -> list[str]:
        return [f"{q.name}={c}" for q in self.questions for c in q.categories]

    # -- encoding -----------------------------------------------------------

    def encode_indices(self, raw_rows: Iterable[Sequence]) -> np.ndarray:
        """Category index per (row, question), shape (N, Q)."""
        out = [[q.category_index(v) for q, v in zip(self.questions, row, strict=True)] for row in raw_rows]
        return np.asarray(out, dtype=np.int64).reshape(-1, self.n_questions)

    def indices_to_onehot(self, idx: np.ndarray) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64).reshape(-1, self.n_questions)
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.asarray(self.sizes))):
            raise SchemaError("category index out of range")
        out = np.zeros((idx.shape[0], self.n_columns), dtype=np.uint8)
        cols = idx + np.asarray(self.block_starts[:-1])
        np.put_along_axis(out, cols, 1, axis=1)
        return out

    def encode_row(self, raw_row: Sequence) -> np.ndarray:
        if len(raw_row) != self.n_questions:
            raise SchemaError(f"row has {len(raw_row)} values, schema has {self.n_questions} questions")
        return self.indices_to_onehot(self.encode_indices([raw_row]))[0]

    def encode_rows(self, raw_rows: Iterable[Sequence]) -> np.ndarray:
        return self.indices_to_onehot(self.encode_indices(raw_rows))

    def onehot_to_indices(self, bits: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`indices_to_onehot`; raises on any invalid block."""
        from .dataset import check_onehot

        bits = np.asarray(bits).reshape(-1, self.n_columns)
        check_onehot(bits, self.block_starts)
        return np.stack(
            [np.argmax(bits[:, s:e], axis=1) for s, e in self.blocks()], axis=1
        ).astype(np.int64)

    def decode_row(self, bits: Sequence[int]) -> tuple[str, ...]:
        idx = self.onehot_to_indices(np.asarray(bits)[None, :])[0]
        return tuple(q.categories[k] for q, k in zip(self.questions, idx))

    def decode_rows(self, bits: np.ndarray) -> list[tuple[str, ...]]:
        idx = self.onehot_to_indices(bits)
        return [tuple(q.categories[k] for q, k in zip(self.questions, row)) for row in idx]

    # -- serialization --------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": SCHEMA_FORMAT,
            "version": SCHEMA_VERSION,
            "n_questions": self.n_questions,
            "n_columns": self.n_columns,
            "block_starts": list(self.block_starts),
            "questions": [q.to_dict() for q in self.questions],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "CategoricalSchema":
        from .errors import FormatError

        d = json.loads(text)
        if d.get("format") != SCHEMA_FORMAT:
            raise FormatError("not a schema document")
        if d.get("version") != SCHEMA_VERSION:
            raise FormatError(f"unsupported schema version {d.get('version')}")
        schema = cls(tuple(QuestionSpec.from_dict(q) for q in d["questions"]))
        if list(schema.block_starts) != d["block_starts"]:
            raise FormatError("block_starts inconsistent with question sizes")
        return schema

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "CategoricalSchema":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# -- raw tables and directives ------------------------------------------------


@dataclass(frozen=True)
class ColumnDirective:
    name: str
    kind: str = CATEGORICAL
    bins: int | None = None
    missing: tuple[str, ...] = ()
    missing_position: str = "after"
    merge: tuple[tuple[str, str], ...] = ()
    order: tuple[str, ...] = ()


def read_table(path) -> tuple[list[str], list[list[str]]]:
    """Read a comma- or tab-delimited table with a header line."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline()
        delim = "\t" if "\t" in first else ","
        fh.seek(0)
        reader = csv.reader(fh, delimiter=delim)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty table")
        rows = [r for r in reader if r]
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise SchemaError(f"{path}: line {i + 2} has {len(r)} fields, header has {len(header)}")
    return header, rows


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _split_list(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.split(",") if t != "")


def parse_directives(text: str) -> dict[str, ColumnDirective]:
    """Parse the line-oriented directive format.

    One column per line: ``NAME key=value ...``. Keys are ``kind``
    (categorical | quantile | merged | skip), ``bins``, ``missing`` (comma
    list of codes), ``missing_position`` (before | after), ``merge``
    (comma list of ``raw:category``) and ``order`` (comma list fixing the
    category order of a categorical column). ``#`` starts a comment.
    """
    out: dict[str, ColumnDirective] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        name, *pairs = line.split()
        kw: dict = {}
        for p in pairs:
            if "=" not in p:
                raise ConfigError(f"directives line {lineno}: expected key=value, got {p!r}")
            k, v = p.split("=", 1)
            if k == "kind":
                if v not in KINDS + (SKIP,):
                    raise ConfigError(f"directives line {lineno}: unknown kind {v!r}")
                kw["kind"] = v
            elif k == "bins":
                kw["bins"] = int(v)
            elif k == "missing":
                kw["missing"] = _split_list(v)
            elif k == "missing_position":
                kw["missing_position"] = v
            elif k == "merge":
                pairs_ = []
                for item in _split_list(v):
                    raw, sep, cat = item.partition(":")
                    if not sep:
                        raise ConfigError(f"directives line {lineno}: merge item {item!r} lacks ':'")
                    pairs_.append((raw, cat))
                kw["merge"] = tuple(pairs_)
            elif k == "order":
                kw["order"] = _split_list(v)
            else:
                raise ConfigError(f"directives line {lineno}: unknown key {k!r}")
        if name in out:
            raise ConfigError(f"directives line {lineno}: column {name!r} given twice")
        d = ColumnDirective(name, **kw)
        if d.kind == QUANTILE and (d.bins is None or d.bins < 2):
            raise ConfigError(f"directives line {lineno}: quantile column needs bins >= 2")
        if d.kind == MERGED and not d.merge:
            raise ConfigError(f"directives line {lineno}: merged column needs merge=")
        out[name] = d
    return out


def quantile_edges(values: np.ndarray, bins: int) -> np.ndarray:
    """Interior cut points at the ``bins``-quantiles, 'lower' rule, deduplicated."""
    q = np.arange(1, bins) / bins
    return np.unique(np.quantile(np.asarray(values, dtype=float), q, method="lower"))


def _infer_question(name: str, values: list[str], d: ColumnDirective) -> QuestionSpec:
    if not values:
        raise SchemaError(f"column {name!r} is empty")
    if d.kind == QUANTILE:
        numeric = []
        for v in values:
            if v in d.missing:
                continue
            try:
                numeric.append(float(v))
            except ValueError:
                raise SchemaError(f"column {name!r}: non-numeric value {v!r} not declared missing") from None
        if not numeric:
            raise SchemaError(f"column {name!r} has no numeric values")
        x = np.asarray(numeric)
        if np.any(np.isnan(x)):
            raise SchemaError(f"column {name!r}: NaN values must be declared as missing codes")
        if len(np.unique(x)) < d.bins:
            raise SchemaError(
                f"column {name!r}: {len(np.unique(x))} distinct values, fewer than {d.bins} bins"
            )
        edges = quantile_edges(x, d.bins)
        labels = bin_labels(edges)
        missing = tuple(d.missing)
        cats = missing + tuple(labels) if d.missing_position == "before" else tuple(labels) + missing
        return QuestionSpec(name, QUANTILE, cats, bin_edges=tuple(float(e) for e in edges),
                            missing_codes=missing, missing_position=d.missing_position)
    if d.kind == MERGED:
        mapping = dict(d.merge)
        unknown = sorted(set(values) - set(mapping))
        if unknown:
            raise SchemaError(f"column {name!r}: raw labels {unknown[:5]} missing from merge map")
        cats = tuple(dict.fromkeys(cat for _, cat in d.merge))
        return QuestionSpec(name, MERGED, cats, merge_map=tuple(d.merge))
    observed = tuple(dict.fromkeys(values))
    if d.order:
        extra = [v for v in observed if v not in d.order]
        if extra:
            raise SchemaError(f"column {name!r}: values {extra[:5]} not listed in order=")
        observed = tuple(d.order)
    if d.missing:
        # declared missing codes form a contiguous run at the chosen end
        body = tuple(v for v in observed if v not in d.missing)
        missing = tuple(d.missing)
        observed = missing + body if d.missing_position == "before" else body + missing
    return QuestionSpec(name, CATEGORICAL, observed)


def infer_schema(header: Sequence[str], rows: Sequence[Sequence[str]],
                 directives: dict[str, ColumnDirective] | None = None) -> CategoricalSchema:
    """Build a schema from a raw table. Columns without a directive are categorical."""
    directives = directives or {}
    unknown = [n for n in directives if n not in header]
    if unknown:
        raise SchemaError(f"directives name unknown columns: {unknown}")
    questions = []
    for j, name in enumerate(header):
        d = directives.get(name, ColumnDirective(name))
        if d.kind == SKIP:
            continue
        questions.append(_infer_question(name, [r[j] for r in rows], d))
    return CategoricalSchema(tuple(questions))


def select_columns(header: Sequence[str], rows: Sequence[Sequence[str]],
                   schema: CategoricalSchema) -> list[list[str]]:
    """Project raw rows onto the schema's question order."""
    pos = {name: j for j, name in enumerate(header)}
    missing = [q.name for q in schema.questions if q.name not in pos]
    if missing:
        raise SchemaError(f"table lacks schema columns {missing}")
    cols = [pos[q.name] for q in schema.questions]
    return [[r[j] for j in cols] for r in rows]
