"""Command-line front end.

    weifed run    --config exp.toml --out runs/a
    weifed sweep  --config exp.toml --grid grid.toml --out runs/sweep
    weifed report --out runs/sweep

Exit status: 0 on success, 2 for an invalid config or grid (one
``section.key: message`` line per problem on stderr), 1 when a run aborts
or there is nothing to report. ``--workers`` defaults to $WEIFED_WORKERS
(else 1): client threads for ``run``, cell processes for ``sweep``.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import pandas as pd

from ._toml import loads
from .config import ConfigError, ExperimentConfig
from .outputs import ROUNDS_HEADER, dump_json, run_to_dir

logger = logging.getLogger("weifed")

# grid axis name -> config key it overrides
SWEEP_AXES = {
    "poison_ratio": "attack.poison_ratio",
    "attack.kind": "attack.kind",
    "defense.kind": "defense.aggregator",
    "aux.volume_fraction": "defense.aux_volume",
    "target_labels": "attack.target_labels",
}


def _default_workers() -> int:
    try:
        return max(1, int(os.environ.get("WEIFED_WORKERS", "1")))
    except ValueError:
        return 1


def _load_config(path, seed_override):
    cfg = ExperimentConfig.load(path)
    if seed_override is not None:
        cfg = cfg.replace({"seeds.master": seed_override})
    return cfg


def _report_config_error(exc: ConfigError) -> int:
    print("invalid config:", file=sys.stderr)
    for err in exc.errors:
        print(f"  {err}", file=sys.stderr)
    return 2


# ---------------------------------------------------------------------- run


def cmd_run(config_path, out_dir, workers=1, seed_override=None) -> int:
    try:
        cfg = _load_config(config_path, seed_override)
    except ConfigError as exc:
        return _report_config_error(exc)
    try:
        result = run_to_dir(cfg, out_dir, workers)
    except Exception as exc:  # error.json already written
        print(f"run aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result.summary(), sort_keys=True))
    return 0


# -------------------------------------------------------------------- sweep


def _flatten(table, prefix=""):
    out = {}
    for key, value in table.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(_flatten(value, name + "."))
        else:
            out[name] = value
    return out


def load_grid(text: str) -> dict[str, list]:
    """Parse a TOML grid: each allowed axis maps to a list of values."""
    raw = _flatten(loads(text))
    errors = []
    for axis, values in raw.items():
        if axis not in SWEEP_AXES:
            errors.append(f"{axis}: not a sweep axis (allowed: {', '.join(SWEEP_AXES)})")
        elif not isinstance(values, list) or not values:
            errors.append(f"{axis}: must be a non-empty list")
    if errors:
        raise ConfigError(errors)
    return raw


def grid_cells(grid: dict[str, list]) -> list[dict]:
    """Cartesian product of the axes, in the order they appear; {} for no axes."""
    axes = list(grid)
    return [dict(zip(axes, combo)) for combo in itertools.product(*(grid[a] for a in axes))]


def cell_name(index: int, cell: dict) -> str:
    parts = [f"{axis}={_label(value)}" for axis, value in cell.items()]
    slug = re.sub(r"[^A-Za-z0-9_.,=-]+", "", "_".join(parts))
    return f"cell{index:03d}" + (f"_{slug}" if slug else "")


def _run_cell(cfg, out_dir) -> dict:
    try:
        result = run_to_dir(cfg, out_dir)
    except Exception as exc:
        return {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
    return {"status": "ok", **result.summary()}


def cmd_sweep(config_path, grid_path, out_dir, workers=1, seed_override=None) -> int:
    try:
        base = _load_config(config_path, seed_override)
        grid = load_grid(Path(grid_path).read_text()) if grid_path else {}
    except ConfigError as exc:
        return _report_config_error(exc)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs, index = [], []
    for k, cell in enumerate(grid_cells(grid)):
        name = cell_name(k, cell)
        entry = {"dir": name, "axes": cell}
        try:
            cfg = base.replace({SWEEP_AXES[a]: v for a, v in cell.items()})
        except ConfigError as exc:
            (out / name).mkdir(exist_ok=True)
            dump_json(out / name / "error.json", {"error": "ConfigError", "message": str(exc)})
            entry.update(status="failed", error="; ".join(exc.errors))
        else:
            jobs.append((len(index), cfg, out / name))
        index.append(entry)

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [(i, pool.submit(_run_cell, cfg, path)) for i, cfg, path in jobs]
            outcomes = [(i, f.result()) for i, f in futures]
    else:
        outcomes = [(i, _run_cell(cfg, path)) for i, cfg, path in jobs]
    for i, outcome in outcomes:
        index[i].update(outcome)

    dump_json(out / "sweep.json", {"axes": grid, "cells": index})
    failed = [c["dir"] for c in index if c["status"] != "ok"]
    for name in failed:
        print(f"cell failed: {name}", file=sys.stderr)
    tables = combined_tables(index)
    for metric, table in tables.items():
        table.to_csv(out / f"combined_{metric}.csv")
        print(f"\n{metric} (final round)\n{table.to_string()}")
    print(f"\n{len(index) - len(failed)}/{len(index)} cells completed")
    return 0


def combined_tables(cells: list[dict]) -> dict[str, pd.DataFrame]:
    """Rows = poison ratio (within any other swept axes), columns = defense."""
    rows = []
    for c in cells:
        axes = c["axes"]
        row = {a: _label(v) for a, v in axes.items() if a not in ("poison_ratio", "defense.kind")}
        row["poison_ratio"] = axes.get("poison_ratio", "-")
        row["defense"] = axes.get("defense.kind", "-")
        ok = c.get("status") == "ok"
        row["f1"] = c.get("final_f1") if ok else "FAILED"
        row["tcr"] = c.get("final_tcr") if ok else "FAILED"
        rows.append(row)
    df = pd.DataFrame(rows)
    keys = [k for k in df.columns if k not in ("defense", "f1", "tcr")]
    return {
        metric: df.pivot_table(index=keys, columns="defense", values=metric,
                               aggfunc="first", sort=False)
        for metric in ("f1", "tcr")
    }


def _label(v):
    return ",".join(map(str, v)) if isinstance(v, list) else v


# ------------------------------------------------------------------- report


def _read_cell(path: Path):
    """Return (rounds DataFrame, status) or raise ValueError describing the problem."""
    rounds = path / "rounds.csv"
    if not rounds.exists():
        raise ValueError(f"{rounds}: missing")
    try:
        df = pd.read_csv(rounds)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise ValueError(f"{rounds}: unreadable ({exc})") from None
    if list(df.columns) != ROUNDS_HEADER:
        raise ValueError(f"{rounds}: header does not match {','.join(ROUNDS_HEADER)}")
    if (path / "summary.json").exists():
        try:
            json.loads((path / "summary.json").read_text())
        except json.JSONDecodeError:
            raise ValueError(f"{path / 'summary.json'}: corrupt JSON") from None
        status = "ok"
    else:
        status = "failed" if (path / "error.json").exists() else "incomplete"
    return df, status


def cmd_report(out_dir) -> int:
    out = Path(out_dir)
    if not out.is_dir():
        print(f"{out}: not a directory", file=sys.stderr)
        return 1
    if (out / "rounds.csv").exists():
        candidates = [out]
    else:
        candidates = sorted(p for p in out.iterdir() if p.is_dir())
    problems, frames, rows = [], [], []
    for path in candidates:
        name = "." if path == out else path.name
        try:
            df, status = _read_cell(path)
        except ValueError as exc:
            problems.append(str(exc))
            continue
        if status != "ok":
            problems.append(f"{name}: run {status}")
            continue
        frames.append(df.assign(cell=name)[["cell", *ROUNDS_HEADER]])
        last = df.iloc[-1] if len(df) else None
        rows.append({
            "cell": name,
            "aggregator": last["aggregator"] if last is not None else "",
            "attack": last["attack"] if last is not None else "",
            "poison_ratio": last["poison_ratio"] if last is not None else float("nan"),
            "rounds": len(df),
            "final_f1": df["global_f1"].iloc[-1] if len(df) else float("nan"),
            "best_f1": df["global_f1"].max(),
            "final_tcr": df["tcr"].iloc[-1] if len(df) else float("nan"),
            "best_tcr": df["tcr"].max(),
        })
    for p in problems:
        print(f"problem: {p}", file=sys.stderr)
    if not rows:
        print(f"{out}: no completed runs to report", file=sys.stderr)
        return 1

    summary = pd.DataFrame(rows)
    ident = ["cell", "aggregator", "attack", "poison_ratio"]
    with pd.option_context("display.float_format", "{:.4f}".format):
        print("F1\n" + summary[ident + ["final_f1", "best_f1"]].to_string(index=False))
        print("\nTCR\n" + summary[ident + ["final_tcr", "best_tcr"]].to_string(index=False))
    pd.concat(frames, ignore_index=True).to_csv(out / "report_long.csv", index=False, na_rep="nan")
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weifed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="experiment TOML file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=_default_workers())
        p.add_argument("--seed-override", type=int, default=None, help="replace seeds.master")

    common(sub.add_parser("run", help="run one experiment"))
    sweep = sub.add_parser("sweep", help="run the Cartesian product of a grid")
    common(sweep)
    sweep.add_argument("--grid", default=None, help="grid TOML (axes -> value lists)")
    report = sub.add_parser("report", help="tabulate a run or sweep directory")
    report.add_argument("--out", required=True, help="run or sweep directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.out, args.workers, args.seed_override)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.grid, args.out, args.workers, args.seed_override)
    return cmd_report(args.out)


if __name__ == "__main__":
    sys.exit(main())
