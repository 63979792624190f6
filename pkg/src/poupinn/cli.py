"""Command-line entry point.

Exit codes: 0 success, 1 runtime or numerical failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import checks, experiments, jsonio, train
from .numcore.autodiff import NonFiniteError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

log = logging.getLogger("poupinn")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _parse_set(items) -> dict:
    overrides = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise UsageError(f"override {item!r} is not of the form key=value")
        overrides[key.strip()] = value
    return overrides


def _parse_res(text: str) -> tuple[int, int]:
    try:
        nx, ny = (int(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"--res expects NX,NY, got {text!r}") from None
    if nx < 2 or ny < 2:
        raise UsageError("--res needs at least 2 points per axis")
    return nx, ny


def _experiment(name: str) -> experiments.ExperimentSpec:
    try:
        return experiments.get_experiment(name)
    except KeyError as exc:
        raise UsageError(str(exc.args[0])) from None


def _config_from_file(path, exp) -> train.TrainConfig:
    """Load a ``config.json`` from a run directory or a bare training-config dict."""
    try:
        d = jsonio.read(path)
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    if "config" in d:
        if d.get("name", exp.name) != exp.name:
            raise UsageError(f"{path} belongs to experiment {d['name']!r}, not {exp.name!r}")
        d = d["config"]
    try:
        return train.TrainConfig.from_dict(d).validate()
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None


def _resolve_config(exp, args) -> train.TrainConfig:
    base = _config_from_file(args.config, exp) if args.config else exp.config
    try:
        return train.apply_overrides(base, _parse_set(args.set))
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid override: {exc.args[0] if exc.args else exc}") from None


def _progress(every: int):
    def report(row):
        if every and row[0] % every == 0:
            log.info("epoch %d  loss %.6e", row[0], row[1])

    return report


# commands


def cmd_list(args) -> int:
    rows = [e.summary() for e in experiments.registry()]
    if args.json:
        print(json.dumps(rows, indent=2))
        return EXIT_OK
    cols = ("name", "mode", "epochs", "lr", "l2_lambda", "batch_size", "n_partitions")
    print("  ".join(f"{c:<14}" for c in cols).rstrip())
    for r in rows:
        print("  ".join(f"{'-' if r[c] is None else r[c]!s:<14}" for c in cols).rstrip())
    return EXIT_OK


def cmd_run(args) -> int:
    exp = _experiment(args.name)
    cfg = _resolve_config(exp, args)
    run_dir = experiments.run_experiment(exp.name, {}, args.out, config=cfg, progress=_progress(args.log_every))
    metrics = jsonio.read(run_dir / "metrics.json")
    print(f"{exp.name}: final loss {metrics['final_loss']:.6e} -> {run_dir}")
    return EXIT_OK


def cmd_chain(args) -> int:
    exp = _experiment(args.name)
    if args.links < 1:
        raise UsageError("--links must be at least 1")
    overrides = _parse_set(args.set)
    try:
        train.apply_overrides(exp.config, overrides)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid override: {exc.args[0] if exc.args else exc}") from None
    summary = experiments.run_chain(exp.name, args.links, args.out, overrides, progress=_progress(args.log_every))
    for link in summary["links"]:
        print(f"link-{link['link']}: initial {link['initial_loss']:.6e}  final {link['final_loss']:.6e}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _experiment(args.experiment)
    metrics = experiments.evaluate_checkpoint(args.checkpoint, args.experiment)
    print(jsonio.dumps(metrics))
    return EXIT_OK


def cmd_export(args) -> int:
    if args.kind not in experiments.FIELD_KINDS:
        raise UsageError(f"--kind must be one of {', '.join(experiments.FIELD_KINDS)}")
    res = _parse_res(args.res)
    if args.experiment:
        _experiment(args.experiment)
    out = args.out or Path(args.checkpoint).with_name(f"{args.kind}_{res[0]}x{res[1]}.csv")
    experiments.export_checkpoint(args.checkpoint, args.kind, res, out, args.experiment)
    print(out)
    return EXIT_OK


def cmd_check(args) -> int:
    results = checks.run_all()
    for r in results:
        print(r.line())
    for note in checks.forcing_notices():
        print(note)
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="poupinn", description="Partition-of-unity PINN experiments.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("list", help="list registered experiments")
    s.add_argument("--json", action="store_true", help="machine-readable output")
    s.set_defaults(func=cmd_list)

    def training_args(s):
        s.add_argument("name", help="registered experiment name")
        s.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, repeatable")
        s.add_argument("--out", default="runs", help="output root (default: runs)")
        s.add_argument("--log-every", type=int, default=100, help="epochs between progress lines with -v")

    s = sub.add_parser("run", help="train one experiment")
    training_args(s)
    s.add_argument("--config", help="config.json of a previous run, or a training-config file")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("chain", help="warm-started sequence of runs")
    training_args(s)
    s.add_argument("--links", type=int, required=True, help="number of sequential runs")
    s.set_defaults(func=cmd_chain)

    s = sub.add_parser("eval", help="metrics of a saved checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--experiment", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export", help="sample a field of a checkpoint on a grid")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--kind", required=True, help="|".join(experiments.FIELD_KINDS))
    s.add_argument("--res", default="101,101", help="grid size NX,NY (default 101,101)")
    s.add_argument("--experiment", help="experiment name; read from the run's config.json if omitted")
    s.add_argument("--out", help="CSV path (default: next to the checkpoint)")
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("check", help="run the numerical self-checks")
    s.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (train.TrainingError, NonFiniteError, FloatingPointError) as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
