"""Command-line entry point: ``adaloc {run,sweep,oracle,check} --config PATH --out DIR``.

Exit status is 0 on success, 1 when the only failure is filter divergence
(or a failed self-check), and 2 on errors such as a bad config.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from adaloc.harness import io
from adaloc.harness.config import ConfigError, bundled_config_path, load

EXIT_OK, EXIT_DIVERGED, EXIT_ERROR = 0, 1, 2

log = logging.getLogger("adaloc")


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("worker count must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adaloc", description="DEnKF twin experiments with adaptive localization")
    p.add_argument("command", choices=("run", "sweep", "oracle", "check"))
    p.add_argument("--config", help="TOML experiment file, or the name of a bundled config")
    p.add_argument("--out", default="runs/latest", help="output directory (default: runs/latest)")
    p.add_argument("--seed", type=_u64, help="override the config seed")
    p.add_argument("--workers", type=_positive, default=1, help="parallel sweep workers")
    p.add_argument("--traces", action="store_true", help="also store truth and analysis traces (npz)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _resolve_config(arg):
    if arg is None:
        raise ConfigError("--config is required for this command")
    path = Path(arg)
    if not path.exists() and not arg.endswith(".toml"):
        path = bundled_config_path(arg)
    return load(path)


def _write_run(cfg, rec, out: Path, traces: bool):
    io.write_cycles(rec, out / "cycles.csv")
    io.write_summary(out / "summary.csv", [io.summary_row(cfg, rec)])
    io.write_manifest(out / "manifest.json", cfg, rec)
    if rec.candidates:
        io.write_candidates(rec, out / "candidates.csv")
    if traces:
        io.write_traces(out / "traces.npz", rec)


def _report(rec) -> int:
    agg = rec.aggregate_rmse
    print(f"cycles completed: {rec.cycles_done}")
    print(f"aggregate RMSE: {agg:.6g}")
    if rec.diverged:
        print(f"DIVERGED: {rec.reason}")
        return EXIT_DIVERGED
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "check":
            from adaloc.check import run_checks

            results = run_checks()
            for r in results:
                print(f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail} ({r.seconds:.2f}s)")
            return EXIT_OK if all(r.passed for r in results) else EXIT_DIVERGED

        cfg = _resolve_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {out}: {exc}") from None

        if args.command == "sweep":
            from adaloc.harness.sweep import best_per_alpha, sweep

            rows = sweep(cfg, out, workers=args.workers, traces=args.traces)
            n_div = sum(1 for r in rows if r[4])
            print(f"{len(rows)} runs, {n_div} diverged")
            for alpha, mean, var, rmse, _ in best_per_alpha(rows):
                print(f"best for alpha={alpha}: prior_mean={mean} prior_var={var} rmse={rmse:.6g}")
            return EXIT_DIVERGED if rows and n_div == len(rows) else EXIT_OK

        from adaloc.harness.experiment import run_experiment

        if args.command == "oracle":
            cfg = cfg.with_mode("oracle")
        rec = run_experiment(cfg)
        _write_run(cfg, rec, out, args.traces)
        return _report(rec)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
