"""Cartesian parameter sweeps over inflation and prior (or constant radius) settings."""

from __future__ import annotations

import dataclasses
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from adaloc.harness import io
from adaloc.harness.config import ExperimentConfig
from adaloc.harness.experiment import run_experiment


@dataclass(frozen=True)
class SweepPoint:
    index: int
    config: ExperimentConfig


def sweep_points(cfg: ExperimentConfig) -> list[SweepPoint]:
    """Expand the ``[sweep]`` lists into one config per point, in row-major order."""
    s = cfg.sweep
    loc = cfg.localization
    alphas = s.inflation or (cfg.filter.inflation,)
    if loc.mode == "constant":
        means = [(r,) for r in s.radius] if s.radius else [loc.radius]
        if s.prior_mean or s.prior_mean_offset or s.prior_var:
            raise ValueError("constant-radius sweeps take sweep.radius, not prior settings")
        variances = [None]
    else:
        if s.radius:
            raise ValueError("sweep.radius only applies to constant localization")
        if s.prior_mean:
            means = [(m,) for m in s.prior_mean]
        elif s.prior_mean_offset:
            means = [tuple(m + off for m in loc.prior_mean) for off in s.prior_mean_offset]
        else:
            means = [loc.prior_mean]
        variances = [(v,) for v in s.prior_var] if s.prior_var else [loc.prior_var]
    points = []
    for i, (a, m, v) in enumerate(itertools.product(alphas, means, variances)):
        new_loc = (dataclasses.replace(loc, radius=m) if loc.mode == "constant"
                   else dataclasses.replace(loc, prior_mean=m, prior_var=v))
        seed = cfg.seed + i if s.seed_policy == "indexed" else cfg.seed
        c = cfg.replace(seed=seed, filter=dataclasses.replace(cfg.filter, inflation=a), localization=new_loc)
        points.append(SweepPoint(i, c))
    return points


def _run_point(args):
    point, out_dir, traces = args
    rec = run_experiment(point.config)
    row = io.summary_row(point.config, rec)
    if out_dir is not None:
        d = Path(out_dir) / f"run_{point.index:03d}"
        io.write_cycles(rec, d / "cycles.csv")
        io.write_manifest(d / "manifest.json", point.config, rec, {"sweep_index": point.index})
        if rec.candidates:
            io.write_candidates(rec, d / "candidates.csv")
        if traces:
            io.write_traces(d / "traces.npz", rec)
    return row


def best_per_alpha(rows) -> list:
    """Lowest aggregate RMSE among non-diverged runs, for each inflation value (first one wins ties)."""
    best = {}
    for row in rows:
        alpha, _, _, rmse, diverged = row
        if diverged or not math.isfinite(rmse):
            continue
        if alpha not in best or rmse < best[alpha][3]:
            best[alpha] = row
    return [best[a] for a in sorted(best)]


def sweep(cfg: ExperimentConfig, out_dir=None, workers: int = 1, traces: bool = False) -> list:
    """Run every sweep point and return the summary rows in sweep-index order.

    Diverged runs are recorded, never fatal. With ``workers > 1`` points run
    in separate processes; rows are merged by index, so output does not
    depend on scheduling.
    """
    points = sweep_points(cfg)
    jobs = [(p, out_dir, traces) for p in points]
    if workers > 1 and len(points) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(points))) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    if out_dir is not None:
        io.write_summary(Path(out_dir) / "summary.csv", rows)
        io.write_summary(Path(out_dir) / "best.csv", best_per_alpha(rows))
        io.write_manifest(Path(out_dir) / "manifest.json", cfg,
                          extra={"sweep_points": len(points), "workers": workers})
    return rows
