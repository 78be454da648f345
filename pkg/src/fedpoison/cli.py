"""Command-line interface.

Subcommands: run one experiment, validate a config, sweep one parameter
over a value grid, and export a stored per-round update histogram.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

from .config import load_config, parse_config
from .errors import ConfigError, FormatError, InputError
from .experiment import HISTOGRAM_COLUMNS, run_experiment

OUTPUT_ROOT_ENV = "FEDPOISON_OUTPUT_ROOT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedpoison",
                                     description="Federated-learning poisoning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--output", help="output directory (overrides the config)")

    p_val = sub.add_parser("validate", help="schema-check a config and exit")
    p_val.add_argument("config")

    p_sweep = sub.add_parser("sweep", help="grid over one config field")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True,
                         help="dotted path of the field, e.g. attack.boost_factor")
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values for the field")
    p_sweep.add_argument("--output", help="root directory for the sweep runs")

    p_hist = sub.add_parser("export-hist", help="extract one round's update histograms")
    p_hist.add_argument("run_dir")
    p_hist.add_argument("--round", type=int, required=True)
    p_hist.add_argument("--out", help="target CSV path "
                        "(default: <run_dir>/histogram_round_<t>.csv)")
    return parser


def _default_output(config_path: str) -> str:
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    stem = os.path.splitext(os.path.basename(config_path))[0]
    return os.path.join(root, stem)


def _load(path: str):
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    return load_config(path)


def _cmd_run(args) -> int:
    cfg = _load(args.config)
    out_dir = args.output or cfg.output_dir or _default_output(args.config)
    cfg = _with_output(cfg, out_dir)
    result = run_experiment(cfg, persist=True)
    last = result.records[-1] if result.records else None
    acc = f"{last.val_acc_global:.2f}%" if last else "n/a"
    conf = (f", malicious confidence {last.mal_conf_mean:.4f}"
            if last and last.mal_conf_mean is not None else "")
    print(f"run complete: {len(result.records)} rounds, "
          f"final validation accuracy {acc}{conf}")
    print(f"artifacts in {out_dir}")
    return 0


def _with_output(cfg, out_dir):
    from dataclasses import replace
    return replace(cfg, output_dir=out_dir)


def _cmd_validate(args) -> int:
    _load(args.config)
    print("config OK")
    return 0


def _parse_value(token: str):
    try:
        return json.loads(token)
    except json.JSONDecodeError:
        return token


def _set_path(raw: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = raw
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"sweep param {dotted!r}: section {key!r} missing")
        node = node[key]
    node[keys[-1]] = value


def _cmd_sweep(args) -> int:
    if not os.path.exists(args.config):
        raise InputError(f"config file not found: {args.config}")
    with open(args.config, encoding="utf-8") as f:
        base_raw = json.load(f)
    values = [_parse_value(tok) for tok in args.values.split(",") if tok != ""]
    if not values:
        raise InputError("sweep needs at least one value")
    root = args.output or base_raw.get("output_dir") or _default_output(args.config)
    for value in values:
        raw = copy.deepcopy(base_raw)
        _set_path(raw, args.param, value)
        slug = f"{args.param.replace('.', '_')}={value}"
        raw["output_dir"] = os.path.join(root, slug)
        cfg = parse_config(raw)
        result = run_experiment(cfg, persist=True)
        last = result.records[-1] if result.records else None
        acc = f"{last.val_acc_global:.2f}%" if last else "n/a"
        print(f"{slug}: {len(result.records)} rounds, final accuracy {acc}")
    print(f"sweep complete: {len(values)} runs under {root}")
    return 0


def _cmd_export_hist(args) -> int:
    src = os.path.join(args.run_dir, "histograms.csv")
    if not os.path.exists(src):
        raise InputError(f"no histograms.csv under {args.run_dir}")
    with open(src, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != HISTOGRAM_COLUMNS:
            raise FormatError(f"{src}: unexpected header {header}")
        rows = [row for row in reader if int(row[0]) == args.round]
    if not rows:
        raise InputError(f"round {args.round} not present in {src}")
    out = args.out or os.path.join(args.run_dir, f"histogram_round_{args.round}.csv")
    with open(out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(HISTOGRAM_COLUMNS)
        writer.writerows(rows)
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"run": _cmd_run, "validate": _cmd_validate,
                "sweep": _cmd_sweep, "export-hist": _cmd_export_hist}
    try:
        return handlers[args.command](args)
    except (ConfigError, FormatError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(cli_main())
