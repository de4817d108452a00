"""Synthetic populations with known conditional structure.

A population spec (JSON) declares questions, a set of subpopulations with
mixture weights, and per subpopulation a small dependency DAG. Conditional
tables are drawn from a symmetric Dirichlet unless pinned with ``fixed``
(a probability vector) or ``copy`` (deterministic copy of another question).

Example::

    {"name": "demo", "n_rows": 1000,
     "questions": [{"name": "A", "categories": 3}, {"name": "B", "categories": ["x", "y", "z"]}],
     "subpopulations": [
        {"weight": 1.0, "edges": [["A", "B"]], "concentration": 1.0,
         "fixed": {"A": [0.5, 0.3, 0.2]}}]}
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from graphlib import CycleError, TopologicalSorter
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .schema import CATEGORICAL, CategoricalSchema, QuestionSpec, write_table


@dataclass(frozen=True)
class Subpopulation:
    name: str
    weight: float
    parents: dict[str, tuple[str, ...]]
    concentration: float
    fixed: dict[str, tuple[float, ...]]
    copy: dict[str, str]


@dataclass(frozen=True)
class PopulationSpec:
    name: str
    n_rows: int
    questions: tuple[tuple[str, tuple[str, ...]], ...]
    subpopulations: tuple[Subpopulation, ...]

    @property
    def sizes(self) -> dict[str, int]:
        return {q: len(c) for q, c in self.questions}

    def schema(self) -> CategoricalSchema:
        return CategoricalSchema(tuple(QuestionSpec(q, CATEGORICAL, c) for q, c in self.questions))


def parse_population_spec(d: dict) -> PopulationSpec:
    try:
        questions = []
        for q in d["questions"]:
            cats = q["categories"]
            cats = tuple(f"{q['name'].lower()}{k}" for k in range(cats)) if isinstance(cats, int) else tuple(cats)
            if len(cats) < 2:
                raise ConfigError(f"question {q['name']!r} needs at least 2 categories")
            questions.append((q["name"], cats))
        names = {q for q, _ in questions}
        subs = []
        for k, s in enumerate(d["subpopulations"]):
            parents: dict[str, list[str]] = {q: [] for q, _ in questions}
            for a, b in s.get("edges", []):
                if a not in names or b not in names:
                    raise ConfigError(f"edge {a}->{b} names an unknown question")
                parents[b].append(a)
            copy = dict(s.get("copy", {}))
            for tgt, src in copy.items():
                if src not in parents[tgt]:
                    parents[tgt].append(src)
            subs.append(Subpopulation(
                name=s.get("name", f"sub{k}"),
                weight=float(s.get("weight", 1.0)),
                parents={q: tuple(p) for q, p in parents.items()},
                concentration=float(s.get("concentration", 1.0)),
                fixed={q: tuple(float(x) for x in v) for q, v in s.get("fixed", {}).items()},
                copy=copy,
            ))
    except KeyError as exc:
        raise ConfigError(f"population spec lacks field {exc}") from None
    if not subs:
        raise ConfigError("population spec needs at least one subpopulation")
    return PopulationSpec(d.get("name", "testbed"), int(d["n_rows"]), tuple(questions), tuple(subs))


def load_population_spec(path) -> PopulationSpec:
    return parse_population_spec(json.loads(Path(path).read_text(encoding="utf-8")))


def topological_order(parents: dict[str, tuple[str, ...]]) -> list[str]:
    try:
        return list(TopologicalSorter(parents).static_order())
    except CycleError as exc:
        raise ConfigError(f"dependency graph has a cycle: {exc.args[1]}") from None


@dataclass
class GroundTruth:
    weights: np.ndarray
    orders: list[list[str]]
    # tables[s][q] has shape (prod(parent sizes), K_q); parent configs are row-major
    tables: list[dict[str, np.ndarray]]

    def to_dict(self, spec: PopulationSpec) -> dict:
        subs = []
        for k, sub in enumerate(spec.subpopulations):
            subs.append({
                "name": sub.name,
                "weight": float(self.weights[k]),
                "order": self.orders[k],
                "parents": {q: list(sub.parents[q]) for q in self.orders[k]},
                "tables": {q: self.tables[k][q].tolist() for q in self.orders[k]},
            })
        return {"name": spec.name, "n_rows": spec.n_rows,
                "questions": [{"name": q, "categories": list(c)} for q, c in spec.questions],
                "subpopulations": subs}


def build_ground_truth(spec: PopulationSpec, rng: np.random.Generator) -> GroundTruth:
    sizes = spec.sizes
    w = np.array([s.weight for s in spec.subpopulations], dtype=float)
    if np.any(w < 0) or w.sum() <= 0:
        raise ConfigError("subpopulation weights must be nonnegative with positive sum")
    orders, tables = [], []
    for sub in spec.subpopulations:
        order = topological_order(sub.parents)
        tabs = {}
        for q in order:
            K = sizes[q]
            par = sub.parents[q]
            n_cfg = int(np.prod([sizes[p] for p in par])) if par else 1
            if q in sub.copy:
                src = sub.copy[q]
                if sizes[src] != K or par != (src,):
                    raise ConfigError(f"copy {src}->{q} needs equal sizes and no other parents")
                tab = np.eye(K)
            elif q in sub.fixed:
                vec = np.asarray(sub.fixed[q])
                if len(vec) != K or np.any(vec < 0):
                    raise ConfigError(f"fixed distribution for {q!r} must have {K} nonnegative entries")
                tab = np.tile(vec / vec.sum(), (n_cfg, 1))
            else:
                tab = rng.dirichlet(np.full(K, sub.concentration), size=n_cfg)
            tabs[q] = tab
        orders.append(order)
        tables.append(tabs)
    return GroundTruth(w / w.sum(), orders, tables)


def sample_population(spec: PopulationSpec, truth: GroundTruth, rng: np.random.Generator,
                      n_rows: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Category indices (N, Q) in spec question order, and subpopulation labels."""
    n_rows = spec.n_rows if n_rows is None else n_rows
    sizes = spec.sizes
    qpos = {q: k for k, (q, _) in enumerate(spec.questions)}
    labels = rng.choice(len(truth.weights), size=n_rows, p=truth.weights)
    idx = np.zeros((n_rows, len(spec.questions)), dtype=np.int64)
    for s, sub in enumerate(spec.subpopulations):
        rows = np.flatnonzero(labels == s)
        for q in truth.orders[s]:
            cfg = np.zeros(len(rows), dtype=np.int64)
            for p in sub.parents[q]:
                cfg = cfg * sizes[p] + idx[rows, qpos[p]]
            probs = truth.tables[s][q][cfg]
            cdf = np.cumsum(probs, axis=1)
            cdf[:, -1] = 1.0
            u = rng.random(len(rows))
            idx[rows, qpos[q]] = np.minimum((u[:, None] >= cdf).sum(axis=1), sizes[q] - 1)
    return idx, labels


@dataclass
class Testbed:
    spec: PopulationSpec
    truth: GroundTruth
    indices: np.ndarray
    labels: np.ndarray

    def raw_rows(self) -> list[list[str]]:
        cats = [c for _, c in self.spec.questions]
        return [[cats[k][v] for k, v in enumerate(row)] for row in self.indices.tolist()]

    def header(self) -> list[str]:
        return [q for q, _ in self.spec.questions]


def generate_testbed(spec: PopulationSpec, seed: int, n_rows: int | None = None) -> Testbed:
    rng = np.random.default_rng(seed)
    truth = build_ground_truth(spec, rng)
    idx, labels = sample_population(spec, truth, rng, n_rows)
    return Testbed(spec, truth, idx, labels)


def write_testbed(tb: Testbed, out_dir, seed: int) -> dict[str, Path]:
    """Write ``table.csv``, ``truth.json``, ``labels.tsv`` and ``directives.txt`` into ``out_dir``.

    The directives pin each question's category order, so a schema inferred
    from the table encodes categories in the same order as ``truth.json``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "table.csv", "truth": out / "truth.json", "labels": out / "labels.tsv",
             "directives": out / "directives.txt"}
    lines = [f"{q} kind=categorical order={','.join(c)}" for q, c in tb.spec.questions]
    paths["directives"].write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
    write_table(paths["table"], tb.header(), tb.raw_rows())
    truth = tb.truth.to_dict(tb.spec)
    truth["seed"] = seed
    paths["truth"].write_text(json.dumps(truth, indent=2) + "\n", encoding="utf-8", newline="\n")
    with open(paths["labels"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row\tsubpopulation\n")
        for r, lab in enumerate(tb.labels.tolist()):
            fh.write(f"{r}\t{lab}\n")
    return paths


def bundled_spec_path(name: str) -> Path:
    """Path of a population spec shipped in the package data directory."""
    from importlib.resources import files

    return Path(str(files("modp") / "data" / f"{name}.json"))
