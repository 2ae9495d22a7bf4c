"""CSV and manifest writers/readers. Floats are written with ``repr`` so they round-trip exactly."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from adaloc import __version__
from adaloc._backend import BACKEND

SUMMARY_HEADER = ["alpha", "prior_mean", "prior_var", "aggregate_rmse", "diverged"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path):
    """Rows as dicts with float/int/bool values where they parse."""
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append({k: _parse(v) for k, v in row.items()})
    return out


def _parse(v: str):
    if v in ("true", "false"):
        return v == "true"
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def write_cycles(record, path):
    return write_csv(path, record.header(), record.rows())


def write_candidates(record, path):
    header = ["cycle"] + [f"r_{r!r}" for r in record.candidate_grid]
    rows = ([k + 1, *map(float, c)] for k, c in enumerate(record.candidates))
    return write_csv(path, header, rows)


def summary_value(values):
    """Scalar prior columns: one number when all groups agree, otherwise ``;``-joined."""
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if v.size == 0:
        return float("nan")
    if np.all(v == v[0]):
        return float(v[0])
    return ";".join(repr(float(x)) for x in v)


def summary_row(cfg, record):
    """``alpha, prior_mean, prior_var, aggregate_rmse, diverged`` for one run.

    Constant runs report their radius as ``prior_mean`` with ``prior_var = 0``.
    """
    mode = cfg.localization.mode
    if mode == "constant":
        mean, var = summary_value(cfg.radii()), 0.0
    elif mode == "adaptive":
        p = cfg.prior()
        mean, var = summary_value(p.mean), summary_value(p.variance)
    else:
        mean, var = float("nan"), float("nan")
    alpha = cfg.filter.inflation if mode != "free" else 1.0
    return [alpha, mean, var, record.aggregate_rmse, record.diverged]


def write_summary(path, rows):
    return write_csv(path, SUMMARY_HEADER, rows)


def write_manifest(path, cfg, record=None, extra=None):
    data = {
        "package_version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
    }
    if record is not None:
        agg = record.aggregate_rmse
        data["result"] = {
            "cycles_completed": record.cycles_done,
            "aggregate_rmse": agg if math.isfinite(agg) else None,
            "diverged": record.diverged,
            "reason": record.reason,
        }
    if extra:
        data.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def write_traces(path, record):
    np.savez(path, truth=np.array(record.truth), analysis_mean=np.array(record.analysis_mean))


def backend_info() -> dict:
    return {"kernel_backend": BACKEND}
