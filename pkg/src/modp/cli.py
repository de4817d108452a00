"""Command-line driver: ``modp <command> ...``.

Exit codes: 0 success, 1 usage/config error, 2 data validation error,
3 numerical failure. Option values come from command-line flags, then the
``[modp]`` section of the ``--config`` INI file, then built-in defaults.
Relative output paths are resolved under ``$MODP_OUTPUT_DIR`` when set.
"""
from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (ResponseMatrix, bootstrap_resample, crosstab, read_matrix, write_crosstab,
                      write_matrix)
from .errors import ConfigError, DataValidationError, ModpError, NumericalError
from .metrics import MetricConfig, evaluate, export_plot_data, write_report
from .model import (MultiBladeModel, blade_diagnostics, load_checkpoint, load_checkpoint_with_meta,
                    model_forward, save_checkpoint)
from .privacy import export_privacy_plots, privacy_report, write_privacy_report
from .schema import CategoricalSchema, infer_schema, parse_directives, read_table, select_columns
from .synthesis import (SynthesisConfig, read_sidecar, result_from_sidecar, synthesize,
                        write_sidecar)
from .testbed import generate_testbed, load_population_spec, write_testbed
from .training import TrainConfig, train, write_history

OUTPUT_DIR_ENV = "MODP_OUTPUT_DIR"
SEED_MAX = 2**64 - 1

DEFAULTS = {
    "seed": 0,
    "blades": 5,
    "reduced_features": 15,
    "mse_epochs": 30,
    "zval_epochs": 100,
    "batch_size": 4096,
    "lr": 1e-3,
    "optimizer": "adam",
    "rr_p": 0.0,
    "fix_structural_zeros": False,
    "instances": 1,
    "threshold_quantile": 0.95,
    "pseudocount": 0.5,
    "two_instance_weight": "signed",
    "d0": 0.1,
    "z0": 1.0,
    "sample": 10_000,
    "log_every": 100,
}
_TYPES = {k: type(v) for k, v in DEFAULTS.items()}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _load_config(path) -> dict:
    if path is None:
        return {}
    if not Path(path).is_file():
        raise ConfigError(f"config file {path} does not exist")
    cp = configparser.ConfigParser()
    cp.read(path, encoding="utf-8")
    if not cp.has_section("modp"):
        return {}
    out = {}
    for key, val in cp.items("modp"):
        k = key.replace("-", "_")
        if k not in DEFAULTS:
            raise ConfigError(f"config file: unknown key {key!r}")
        try:
            out[k] = _bool(val) if _TYPES[k] is bool else _TYPES[k](val)
        except ValueError:
            raise ConfigError(f"config file: bad value for {key}: {val!r}") from None
    return out


def _opt(args, name):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return args._config.get(name, DEFAULTS[name])


def _seed(args) -> int:
    s = int(_opt(args, "seed"))
    if not 0 <= s <= SEED_MAX:
        raise ConfigError("seed must be a 64-bit unsigned integer")
    return s


def _out(path) -> Path:
    p = Path(path)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not p.is_absolute():
        p = Path(base) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _need(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).exists():
            raise ConfigError(f"input {p} does not exist")


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


# -- commands --------------------------------------------------------------------


def cmd_schema(args) -> int:
    _need(args.table, args.directives)
    header, rows = read_table(args.table)
    directives = parse_directives(Path(args.directives).read_text(encoding="utf-8")) if args.directives else {}
    schema = infer_schema(header, rows, directives)
    out = _out(args.output)
    schema.save(out)
    _log(f"schema: {schema.n_questions} questions, {schema.n_columns} columns -> {out}")
    return 0


def cmd_encode(args) -> int:
    _need(args.table, args.schema)
    schema = CategoricalSchema.load(args.schema)
    header, rows = read_table(args.table)
    data = schema.encode_rows(select_columns(header, rows, schema))
    out = _out(args.output)
    write_matrix(out, ResponseMatrix(data, schema.block_starts), packed=args.packed)
    _log(f"encode: {data.shape[0]} rows x {data.shape[1]} columns -> {out}")
    return 0


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        batch_size=int(_opt(args, "batch_size")),
        mse_epochs=int(_opt(args, "mse_epochs")),
        zval_epochs=int(_opt(args, "zval_epochs")),
        learning_rate=float(_opt(args, "lr")),
        optimizer=str(_opt(args, "optimizer")),
        seed=_seed(args),
    )


def cmd_train(args) -> int:
    _need(args.matrix)
    data = read_matrix(args.matrix)
    cfg = _train_config(args)
    model = MultiBladeModel.initialize(data.block_starts, int(_opt(args, "blades")),
                                       int(_opt(args, "reduced_features")), seed=cfg.seed)
    every = int(_opt(args, "log_every"))

    def progress(step, loss):
        if every > 0 and step % every == 0:
            _log(f"step {step}: loss {loss:.6g}")

    result = train(model, data, cfg, progress)
    out = _out(args.checkpoint)
    save_checkpoint(out, result.model, seed=cfg.seed)
    if args.history:
        write_history(_out(args.history), result.history, seed=cfg.seed)
    _log(f"train: {result.model.name}, {len(result.history)} steps -> {out}")
    return 0


def cmd_synthesize(args) -> int:
    _need(args.matrix, args.checkpoint)
    data = read_matrix(args.matrix)
    model = load_checkpoint(args.checkpoint)
    if model.block_starts != data.block_starts:
        raise DataValidationError("checkpoint and matrix have different block structures")
    seed = _seed(args)
    cfg = SynthesisConfig(
        seed=seed,
        instances=int(_opt(args, "instances")),
        rr_p=float(_opt(args, "rr_p")),
        fix_structural_zeros=bool(_opt(args, "fix_structural_zeros")),
        threshold_quantile=float(_opt(args, "threshold_quantile")),
        pseudocount=float(_opt(args, "pseudocount")),
        weight=str(_opt(args, "two_instance_weight")),
    )
    probs = model_forward(model, data)
    res = synthesize(probs, data, cfg)
    out = _out(args.output)
    write_matrix(out, res.result.rows, seed=seed)
    sidecar = _out(args.sidecar) if args.sidecar else out.with_suffix(".sidecar.tsv")
    write_sidecar(sidecar, res.before_removal, res.removed, seed=seed)
    _log(f"synthesize: {res.result.N} rows ({len(res.removed)} removed) -> {out}")
    return 0


def _metric_config(args) -> MetricConfig:
    return MetricConfig(pseudocount=float(_opt(args, "pseudocount")), d0=float(_opt(args, "d0")),
                        z0=float(_opt(args, "z0")))


def cmd_evaluate(args) -> int:
    _need(args.true, args.synth)
    true_m = read_matrix(args.true)
    synth_m = read_matrix(args.synth)
    if true_m.block_starts != synth_m.block_starts:
        raise DataValidationError("true and synthetic matrices have different block structures")
    ev = evaluate(crosstab(true_m), crosstab(synth_m), _metric_config(args))
    out = _out(args.output)
    write_report(out, ev)
    if args.plots:
        export_plot_data(ev, _out(Path(args.plots) / "x").parent)
    if args.crosstab:
        write_crosstab(_out(args.crosstab), crosstab(synth_m))
    a = ev.aggregate
    print(f"median={a.median!r} mean_absolute={a.mean_absolute!r} rms={a.rms!r}")
    return 0


def cmd_privacy(args) -> int:
    _need(args.true, args.synth)
    true_m = read_matrix(args.true)
    synth_m = read_matrix(args.synth)
    sidecar = Path(args.sidecar) if args.sidecar else Path(args.synth).with_suffix(".sidecar.tsv")
    _need(sidecar)
    synth = result_from_sidecar(synth_m, read_sidecar(sidecar))
    seed = _seed(args)
    sample = int(_opt(args, "sample"))
    rep = privacy_report(true_m, synth, sample if sample > 0 else None, seed)
    write_privacy_report(_out(args.output), rep, seed=seed)
    if args.plots:
        export_privacy_plots(rep, _out(Path(args.plots) / "x").parent)
    if len(rep):
        print(f"rows={len(rep)} median_entropy_bits={float(np.median(rep.entropy_bits))!r} "
              f"causal_nearest_fraction={float(np.mean(rep.causal_rank_count == 1))!r}")
    return 0


def cmd_bootstrap(args) -> int:
    _need(args.matrix)
    data = read_matrix(args.matrix)
    seed = _seed(args)
    resampled = bootstrap_resample(data, seed)
    ev = evaluate(crosstab(data), crosstab(resampled), _metric_config(args))
    write_report(_out(args.output), ev, seed=seed)
    if args.resampled:
        write_matrix(_out(args.resampled), resampled, seed=seed)
    a = ev.aggregate
    print(f"median={a.median!r} mean_absolute={a.mean_absolute!r} rms={a.rms!r}")
    return 0


def cmd_testbed(args) -> int:
    _need(args.spec)
    spec = load_population_spec(args.spec)
    seed = _seed(args)
    tb = generate_testbed(spec, seed, args.rows)
    out_dir = _out(Path(args.output) / "x").parent
    paths = write_testbed(tb, out_dir, seed)
    _log(f"testbed: {len(tb.labels)} rows -> {paths['table']}")
    return 0


def cmd_blades(args) -> int:
    _need(args.matrix, args.checkpoint, args.compare)
    data = read_matrix(args.matrix)
    model, meta = load_checkpoint_with_meta(args.checkpoint)
    other = load_checkpoint(args.compare) if args.compare else None
    diag = blade_diagnostics(model, data, other)
    out_dir = _out(Path(args.output) / "x").parent
    with open(out_dir / "blade_weights.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("row\tdominant\t" + "\t".join(f"w{b}" for b in range(model.n_blades)) + "\n")
        for r, (d, w) in enumerate(zip(diag.dominant.tolist(), diag.weights.tolist())):
            fh.write(f"{r}\t{d}\t" + "\t".join(repr(x) for x in w) + "\n")
    with open(out_dir / "sorted_weights.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\t".join(f"rank{k + 1}" for k in range(model.n_blades)) + "\n")
        for w in diag.sorted_weights.tolist():
            fh.write("\t".join(repr(x) for x in w) + "\n")
    with open(out_dir / "responses_by_blade.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("question\tblade\tcategory\tpercent\n")
        for q, table in diag.responses.items():
            for b, row in enumerate(table.tolist()):
                for k, pct in enumerate(row):
                    fh.write(f"{q}\t{b}\t{k}\t{pct!r}\n")
    if diag.coassignment is not None:
        with open(out_dir / "coassignment.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for row in diag.coassignment.tolist():
                fh.write("\t".join(str(x) for x in row) + "\n")
    _log(f"blades: {meta['name']} diagnostics -> {out_dir}")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modp", description="Synthetic categorical microdata by minus-one prediction.")
    p.add_argument("--version", action="version", version=f"modp {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with a [modp] section of option defaults")
    common.add_argument("--seed", type=int)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("schema", parents=[common], help="infer a schema from a raw table")
    s.add_argument("table")
    s.add_argument("--directives")
    s.add_argument("-o", "--output", default="schema.json")
    s.set_defaults(func=cmd_schema)

    s = sub.add_parser("encode", parents=[common], help="encode a raw table into a one-hot matrix")
    s.add_argument("table")
    s.add_argument("--schema", required=True)
    s.add_argument("-o", "--output", default="data.modp")
    s.add_argument("--packed", action="store_true", help="store cells as packed bits")
    s.set_defaults(func=cmd_encode)

    s = sub.add_parser("train", parents=[common], help="train a multi-blade model")
    s.add_argument("matrix")
    s.add_argument("--checkpoint", default="model.ckpt")
    s.add_argument("--history", help="write the loss history here")
    s.add_argument("--blades", type=int)
    s.add_argument("--reduced-features", type=int)
    s.add_argument("--mse-epochs", type=int)
    s.add_argument("--zval-epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--optimizer", choices=["adam", "sgd"])
    s.add_argument("--log-every", type=int)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("synthesize", parents=[common], help="draw synthetic rows from a trained model")
    s.add_argument("matrix")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("-o", "--output", default="synthetic.modp")
    s.add_argument("--sidecar")
    s.add_argument("--instances", type=int, choices=[1, 2])
    s.add_argument("--rr-p", type=float)
    s.add_argument("--fix-structural-zeros", action="store_const", const=True)
    s.add_argument("--threshold-quantile", type=float)
    s.add_argument("--two-instance-weight", choices=["signed", "absolute"])
    s.add_argument("--pseudocount", type=float)
    s.set_defaults(func=cmd_synthesize)

    s = sub.add_parser("evaluate", parents=[common], help="crosstab accuracy of synthetic vs true")
    s.add_argument("true")
    s.add_argument("synth")
    s.add_argument("-o", "--output", default="metrics.tsv")
    s.add_argument("--plots", help="directory for plot-data tables")
    s.add_argument("--crosstab", help="also export the synthetic crosstab here")
    s.add_argument("--pseudocount", type=float)
    s.add_argument("--d0", type=float)
    s.add_argument("--z0", type=float)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("privacy", parents=[common], help="multiplicity and causal-rank audit")
    s.add_argument("true")
    s.add_argument("synth")
    s.add_argument("--sidecar")
    s.add_argument("-o", "--output", default="privacy.tsv")
    s.add_argument("--plots")
    s.add_argument("--sample", type=int, help="rows to audit (0 = all)")
    s.set_defaults(func=cmd_privacy)

    s = sub.add_parser("bootstrap", parents=[common], help="accuracy of a bootstrap resample (ideal floor)")
    s.add_argument("matrix")
    s.add_argument("-o", "--output", default="bootstrap.tsv")
    s.add_argument("--resampled", help="also write the resampled matrix")
    s.add_argument("--pseudocount", type=float)
    s.add_argument("--d0", type=float)
    s.add_argument("--z0", type=float)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("testbed", parents=[common], help="generate a population with known structure")
    s.add_argument("spec")
    s.add_argument("-o", "--output", default="testbed")
    s.add_argument("--rows", type=int)
    s.set_defaults(func=cmd_testbed)

    s = sub.add_parser("blades", parents=[common], help="blade specialisation diagnostics")
    s.add_argument("matrix")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--compare", help="second checkpoint for the co-assignment matrix")
    s.add_argument("-o", "--output", default="blades")
    s.set_defaults(func=cmd_blades)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return 1
        args._config = _load_config(getattr(args, "config", None))
        return args.func(args)
    except ConfigError as exc:
        _log(f"modp: error: {exc}")
        return 1
    except DataValidationError as exc:
        _log(f"modp: data error: {exc}")
        return 2
    except NumericalError as exc:
        _log(f"modp: numerical failure: {exc}")
        return 3
    except ModpError as exc:
        _log(f"modp: error: {exc}")
        return 1
    except (json.JSONDecodeError, KeyError) as exc:
        _log(f"modp: malformed input: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
