"""On-disk artifacts of a run.

    rounds.csv     one row per round, header ROUNDS_HEADER (fixed order)
    manifest.json  resolved config, seeds, dataset fingerprint, version
    summary.json   final/best F1 and TCR
    defense.jsonl  per-round WeiDetect log (WeiDetect runs only)
    params.bin     optional parameter dump, see write_param_record
    error.json     written instead of summary.json when a run aborts
"""

from __future__ import annotations

import csv
import json
import math
import struct
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .federation import ExperimentResult, RoundReport, run_experiment

ROUNDS_HEADER = [
    "round", "aggregator", "attack", "poison_ratio", "global_f1", "tcr", "agg_time_s",
    "selected_count",
]

PARAM_MAGIC = b"WFPV"
_PARAM_HEADER = struct.Struct("<4sIiI")  # magic, round, client id (-1 = global), length


def _fmt(x: float, digits: int) -> str:
    return "nan" if x is None or math.isnan(x) else f"{x:.{digits}f}"


def round_row(report: RoundReport, aggregator: str, attack: str, poison_ratio: float,
              wall_time: bool = True) -> list[str]:
    return [
        str(report.round),
        aggregator,
        attack,
        f"{poison_ratio:g}",
        _fmt(report.global_f1, 6),
        _fmt(report.tcr, 6),
        _fmt(report.agg_wall_time, 3) if wall_time else "nan",
        str(len(report.selected_ids)),
    ]


def write_param_record(fh, round_: int, client_id: int, params: np.ndarray) -> None:
    """Append one record: 16-byte header then ``length`` little-endian float64."""
    values = np.ascontiguousarray(params, dtype="<f8")
    fh.write(_PARAM_HEADER.pack(PARAM_MAGIC, round_, client_id, values.size))
    fh.write(values.tobytes())


def read_param_records(path):
    """Yield ``(round, client_id, params)`` from a dump written by write_param_record."""
    data = Path(path).read_bytes()
    pos = 0
    while pos < len(data):
        magic, rnd, cid, length = _PARAM_HEADER.unpack_from(data, pos)
        if magic != PARAM_MAGIC:
            raise ValueError(f"bad record header at byte {pos}")
        pos += _PARAM_HEADER.size
        values = np.frombuffer(data, dtype="<f8", count=length, offset=pos).copy()
        pos += 8 * length
        yield rnd, cid, values


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def dump_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def manifest(cfg, result_env) -> dict:
    env = result_env
    return {
        "version": __version__,
        "config": cfg.to_dict(),
        "seeds": {"master": cfg.seeds.master},
        "dataset_fingerprint": env.train.fingerprint(),
        "arch": {
            "input_dim": env.setup.arch.input_dim,
            "hidden_dims": list(env.setup.arch.hidden_dims),
            "output_dim": env.setup.arch.output_dim,
            "n_params": env.setup.arch.n_params,
        },
        "aggregator": env.setup.spec.resolved(env.setup.clients_per_round),
        "top_t": env.setup.top_t,
        "client_sizes": [len(c.data) for c in env.state.clients],
        "adversary_ids": sorted(env.state.adversary_ids),
        "flip_map": {str(k): v for k, v in (env.attack.flip_map or {}).items()},
        "aux_size": len(env.setup.aux) if env.setup.aux is not None else 0,
        "test_size": len(env.setup.test),
        "warnings": env.warnings,
    }


def run_to_dir(cfg, out_dir, workers: int = 1) -> ExperimentResult:
    """Run ``cfg`` and stream every artifact into ``out_dir``.

    rounds.csv is flushed after each round, so an aborted run leaves the
    completed rounds on disk next to error.json; the exception is re-raised.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in ("summary.json", "error.json", "defense.jsonl", "params.bin"):
        (out / stale).unlink(missing_ok=True)
    agg = cfg.defense.spec().kind.value
    attack = cfg.attack.kind
    ratio = cfg.attack.poison_ratio
    wall = cfg.output.wall_time

    with open(out / "rounds.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUNDS_HEADER)
        fh.flush()
        defense_fh = None
        param_fh = open(out / "params.bin", "wb") if cfg.output.dump_params else None

        def on_round(report, state, updates):
            nonlocal defense_fh
            writer.writerow(round_row(report, agg, attack, ratio, wall))
            fh.flush()
            if report.defense_log is not None:
                if defense_fh is None:
                    defense_fh = open(out / "defense.jsonl", "w")
                defense_fh.write(json.dumps(report.defense_log, sort_keys=True) + "\n")
                defense_fh.flush()
            if param_fh is not None:
                for cid, params in zip(*updates):
                    write_param_record(param_fh, report.round, cid, params)
                write_param_record(param_fh, report.round, -1, state.global_params)

        try:
            result = run_experiment(cfg, on_round, workers)
        except Exception as exc:
            dump_json(out / "error.json", {
                "error": type(exc).__name__,
                "message": str(exc),
                "traceback": traceback.format_exc(),
            })
            raise
        finally:
            if defense_fh is not None:
                defense_fh.close()
            if param_fh is not None:
                param_fh.close()

    dump_json(out / "manifest.json", manifest(cfg, result.env))
    dump_json(out / "summary.json", result.summary())
    return result
