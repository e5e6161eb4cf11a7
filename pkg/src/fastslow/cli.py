"""Command-line entry point: ``fastslow <experiment> [--config FILE] [overrides]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.  On
failure a JSON error record is printed to stderr and written next to the
artifacts.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    EXPERIMENTS,
    OUTPUT_ENV,
    build_config,
    config_hash,
    load_config_file,
    output_dir,
    parse_assignment,
    resolved_view,
    validate,
)
from .errors import ConfigInvalid, FastSlowError
from .experiments import RUNNERS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _plain(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def header(cfg: dict) -> dict:
    return {"tool": "fastslow", "version": __version__, "config_hash": config_hash(cfg), "seed": cfg["seed"]}


def render_json(cfg: dict, result: dict) -> str:
    doc = {"header": header(cfg), "config": resolved_view(cfg), "result": result}
    return json.dumps(_plain(doc), indent=2) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def render_csv(cfg: dict, columns: list[str], rows: list) -> str:
    buf = io.StringIO()
    for k, v in header(cfg).items():
        buf.write(f"# {k}: {v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(v) for v in r])
    return buf.getvalue()


def run(cfg: dict) -> list[Path]:
    """Run ``cfg['experiment']`` and write its artifacts; returns the written paths."""
    exp = cfg.get("experiment")
    if exp not in RUNNERS:
        raise ConfigInvalid(f"experiment must be one of {EXPERIMENTS}")
    result, table = RUNNERS[exp](cfg)
    out = output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.get("output", {}).get("prefix", "") + exp
    written = []
    p = out / f"{stem}.json"
    p.write_text(render_json(cfg, result))
    written.append(p)
    if table is not None:
        p = out / f"{stem}.csv"
        p.write_text(render_csv(cfg, *table))
        written.append(p)
    return written


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fastslow", description="Fast-slow SDE reduction experiments.")
    ap.add_argument("--version", action="version", version=f"fastslow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS + ("validate",):
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="YAML or JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--paths", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--eps", type=float)
        p.add_argument("--dt", type=float)
        p.add_argument("--horizon-s", type=float, dest="horizon_s")
        p.add_argument("--preset")
        p.add_argument("--output-dir", dest="output_dir", help=f"artifact directory (default ${OUTPUT_ENV})")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key, dotted for nesting (value parsed as YAML)")
    return ap


def _overrides(args) -> dict:
    over: dict = {}
    for key in ("seed", "paths", "workers", "eps", "dt", "horizon_s", "preset"):
        v = getattr(args, key)
        if v is not None:
            over[key] = v
    if args.output_dir:
        over["output"] = {"dir": args.output_dir}
    for item in args.set:
        a = parse_assignment(item)
        for k, v in a.items():
            if isinstance(v, dict) and isinstance(over.get(k), dict):
                over[k].update(v)
            else:
                over[k] = v
    return over


def _error_record(exc: BaseException, code: int, experiment: str | None) -> dict:
    return {"error": type(exc).__name__, "message": str(exc), "exit_code": code, "experiment": experiment}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    cmd = args.command
    raw: dict = {}
    try:
        if args.config:
            raw = load_config_file(args.config)
        over = _overrides(args)
        if cmd == "validate":
            diags = validate(raw, over)
            print(json.dumps(diags, indent=2))
            return EXIT_CONFIG if any(d["level"] == "error" for d in diags) else EXIT_OK
        over["experiment"] = cmd
        cfg = build_config(raw, over)
    except ConfigInvalid as exc:
        print(json.dumps(_error_record(exc, EXIT_CONFIG, cmd)), file=sys.stderr)
        return EXIT_CONFIG
    try:
        paths = run(cfg)
    except ConfigInvalid as exc:
        rec = _error_record(exc, EXIT_CONFIG, cmd)
    except (FastSlowError, ArithmeticError, np.linalg.LinAlgError, ValueError) as exc:
        rec = _error_record(exc, EXIT_NUMERIC, cmd)
    else:
        for p in paths:
            print(p)
        return EXIT_OK
    print(json.dumps(rec), file=sys.stderr)
    try:
        out = output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{cfg.get('output', {}).get('prefix', '')}{cmd}.error.json").write_text(json.dumps(rec, indent=2) + "\n")
    except OSError:
        pass
    return rec["exit_code"]


if __name__ == "__main__":
    raise SystemExit(main())
