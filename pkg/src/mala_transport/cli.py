"""Command-line entry point: run an experiment from a JSON config, write CSV.

Exit status: 0 on success, 1 for configuration or usage errors, 2 when a
numerical blow-up is detected.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import estimators as est
from . import oracles
from .config import ConfigError, RunConfig, parse_config
from .dynamics import derive_seed
from .ensemble import (BlowupError, run_einstein_ensemble, run_gk_ensemble,
                       run_rejection_scan)
from .model import SingularityError

COMMANDS = ("sim-einstein", "sim-gk", "sweep-dt", "rejection-scan", "oracle")

EXIT_OK, EXIT_CONFIG, EXIT_BLOWUP = 0, 1, 2


def fmt(x) -> str:
    """17 significant digits, locale independent; integers and strings as is."""
    if isinstance(x, str):
        return x
    if isinstance(x, int) and not isinstance(x, bool):
        return str(x)
    return format(float(x), ".17g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="ascii") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def _single_dt(cfg: RunConfig, command: str) -> float:
    if cfg.dt is None:
        raise ConfigError("dt", f"{command} needs a single dt, not dt_list")
    return cfg.dt


def _einstein(cfg: RunConfig, pot, dt: float, seed: int):
    plan = cfg.plan(seed=seed, n_steps=cfg.einstein_steps(dt))
    curve, stats = run_einstein_ensemble(pot, cfg.dynamics(dt), plan)
    if cfg.einstein_tau is not None:
        D = est.einstein_final_time(curve, pot.box, cfg.einstein_tau)
    else:
        D = est.msd_slope_fit(curve, pot.box, (cfg.fit_start, None))
    return curve, D, stats


def _green_kubo(cfg: RunConfig, pot, dt: float, seed: int):
    p = cfg.dynamics(dt)
    curve, stats = run_gk_ensemble(pot, p, cfg.plan(seed=seed), tau=cfg.tau)
    return curve, est.green_kubo_sum(curve, pot.box, p, cfg.quadrature), stats


def _summary_row(D, stats):
    return (D.method, D.dt, D.value, D.stat_err, stats.rate)


SUMMARY_HEADER = ("method", "dt", "D", "stderr", "rejection_rate")


def cmd_sim_einstein(cfg: RunConfig, out: Path):
    dt = _single_dt(cfg, "sim-einstein")
    curve, D, stats = _einstein(cfg, cfg.potential(), dt, cfg.seed)
    write_csv(out / "msd.csv", ("time", "msd", "stderr"),
              zip(curve.times, curve.values, curve.stderr))
    write_csv(out / "summary.csv", SUMMARY_HEADER, [_summary_row(D, stats)])


def cmd_sim_gk(cfg: RunConfig, out: Path):
    dt = _single_dt(cfg, "sim-gk")
    curve, D, stats = _green_kubo(cfg, cfg.potential(), dt, cfg.seed)
    write_csv(out / "corr.csv", ("lag_time", "corr", "stderr"),
              zip(curve.times, curve.values, curve.stderr))
    write_csv(out / "summary.csv", SUMMARY_HEADER, [_summary_row(D, stats)])


def cmd_sweep_dt(cfg: RunConfig, out: Path):
    pot = cfg.potential()
    rows = []
    points = {"einstein": [], "green-kubo": []}
    for i, dt in enumerate(sorted(cfg.dts)):
        _, De, _ = _einstein(cfg, pot, dt, derive_seed(cfg.seed, 3, i, 0))
        _, Dg, _ = _green_kubo(cfg, pot, dt, derive_seed(cfg.seed, 3, i, 1))
        for name, D in (("einstein", De), ("green-kubo", Dg)):
            rows.append((dt, name, D.value, D.stat_err))
            points[name].append((dt, D.value, D.stat_err))
    write_csv(out / "sweep.csv", ("dt", "method", "D", "stderr"), rows)
    fits = []
    if len(cfg.dts) >= 2:
        for name, pts in points.items():
            fit = est.affine_fit(pts, n_smallest=cfg.n_smallest)
            fits.append((name, fit.D0, fit.D1, fit.max_residual))
    write_csv(out / "fit.csv", ("method", "D0", "D1", "max_residual"), fits)


def cmd_rejection_scan(cfg: RunConfig, out: Path):
    pot = cfg.potential()
    scan = run_rejection_scan(pot, cfg.beta, sorted(cfg.dts), cfg.plan())
    rows = [(dt, s.rate) for dt, s in scan]
    write_csv(out / "reject.csv", ("dt", "rate"), rows)
    if len(rows) >= 2 and all(r > 0 for _, r in rows):
        slope = est.loglog_slope(rows)
        write_csv(out / "reject_fit.csv", ("slope",), [(slope,)])
        print(f"log-log slope {fmt(slope)}")


def cmd_oracle(cfg: RunConfig, out: Path):
    if cfg.system != "cosine1d":
        raise ConfigError("system", "oracles exist only for cosine1d")
    V = cfg.potential()
    n = cfg.n_grid
    xb, xb_err = oracles.xi_bar_average(V, cfg.beta, cfg.n_mc, min(n, 1024),
                                        seed=cfg.seed, return_stderr=True)
    rows = [
        ("lifson_jackson", oracles.lifson_jackson_1d(V, cfg.beta, n)),
        ("poisson_gk", oracles.poisson_gk_oracle_1d(V, cfg.beta, n)),
        ("mean_force_sq", oracles.gibbs_average_1d(V, lambda q: V.derivative(q, 1) ** 2,
                                                   cfg.beta, n)),
        ("xi_bar", xb),
        ("xi_bar_stderr", xb_err),
    ]
    write_csv(out / "oracle.csv", ("name", "value"), rows)


HANDLERS = {
    "sim-einstein": cmd_sim_einstein,
    "sim-gk": cmd_sim_gk,
    "sweep-dt": cmd_sweep_dt,
    "rejection-scan": cmd_rejection_scan,
    "oracle": cmd_oracle,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _u64(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2^64)")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="mala-transport", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--seed", type=_u64, help="overrides the config seed")
    ap.add_argument("--workers", type=_positive_int, help="worker processes")
    ap.add_argument("--out", help="output directory (created if missing)")
    return ap


def execute(command: str, cfg: RunConfig) -> int:
    """Run ``command`` and write its CSV files to ``cfg.out``; returns the exit status."""
    if command not in HANDLERS:
        print(f"unknown command {command!r}; choose from {', '.join(COMMANDS)}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        HANDLERS[command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowupError as exc:
        print(f"blow-up at step {exc.step} (replica {exc.replica}): {exc.reason}", file=sys.stderr)
        return EXIT_BLOWUP
    except (SingularityError, FloatingPointError) as exc:
        print(f"blow-up: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(Path(args.config).read_text())
        overrides = {k: v for k, v in (("seed", args.seed), ("workers", args.workers),
                                       ("out", args.out)) if v is not None}
        cfg = replace(cfg, **overrides)
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.progress:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    return execute(args.command, cfg)


if __name__ == "__main__":
    sys.exit(main())
