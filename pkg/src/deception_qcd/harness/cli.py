"""Command-line entry point.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import subprocess
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .. import __version__, kernels
from ..detector import RULES, estimate_metrics
from ..sensing import ObservationModel
from . import io
from .config import ConfigError, ExperimentConfig, default_config_yaml, load_config
from .experiments import (
    SWEEP_PARAMS,
    child_seeds,
    detect,
    monte_carlo,
    resolve_stopping,
    restop,
    simulate,
    sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("deception_qcd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"], cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{__version__}+g{rev.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    # SUPPRESS keeps a subcommand from clobbering values given before it
    common.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS, help="YAML configuration file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override run.seed")
    common.add_argument("--out", metavar="DIR", default=argparse.SUPPRESS, help="override run.out_dir")
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="log progress to stderr")
    common.add_argument("--workers", type=int, default=argparse.SUPPRESS, help="override run.workers")
    common.add_argument("--realizations", type=int, default=argparse.SUPPRESS, help="override run.n_realizations")

    p = _Parser(prog="deception-qcd", parents=[common],
                description="Quickest detection of a deceptive target switch.")
    p.add_argument("--print-default-config", action="store_true", help="print the default YAML config and exit")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="{simulate,detect,sweep}")

    sub.add_parser("simulate", parents=[common], help="simulate one trajectory and its observations")

    d = sub.add_parser("detect", parents=[common], help="Monte Carlo detection runs")
    d.add_argument("--rule", choices=RULES, default="shiryaev")

    s = sub.add_parser("sweep", parents=[common], help="metrics over a parameter grid")
    s.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    s.add_argument("--grid", nargs="*", type=float, required=True)
    s.add_argument("--rule", choices=RULES, default="shiryaev")

    sub.add_parser("oracle-check", parents=[common], help=argparse.SUPPRESS)
    # hide the oracle command from the usage line too
    sub._choices_actions = [a for a in sub._choices_actions if a.dest != "oracle-check"]
    return p


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(getattr(args, "config", None))
    run = {}
    if hasattr(args, "seed"):
        run["seed"] = args.seed
    if hasattr(args, "out"):
        run["out_dir"] = args.out
    if hasattr(args, "workers"):
        run["workers"] = args.workers
    if hasattr(args, "realizations"):
        run["n_realizations"] = args.realizations
    return cfg.replace(run=run) if run else cfg


def _manifest(out: Path, command: str, cfg: ExperimentConfig, files, extra=None):
    cfg_path = out / "config.yaml"
    cfg_path.write_text(cfg.to_yaml())
    io.write_manifest(
        out / "manifest.json", command=command, config_hash=cfg.hash(), seed=cfg.run.seed,
        version=version_string(), backend=kernels.BACKEND, files=[*files, cfg_path], extra=extra,
    )


def cmd_simulate(cfg: ExperimentConfig) -> int:
    scenario = cfg.build()
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    real = simulate(scenario, child_seeds(cfg.run.seed, 0, 1)[0], cfg.run.nu)
    dt = scenario.model.dt
    files = [
        io.write_trajectory(out / "trajectory.csv", real.states, dt),
        io.write_observations(out / "observations.csv", real.observations, real.indicators, dt),
    ]
    _manifest(out, "simulate", cfg, files, {"nu": real.nu})
    print(f"nu = {real.nu}; final state = {np.array2string(real.states[-1], precision=4)}")
    print(f"wrote {len(files)} files to {out}")
    return EXIT_OK


def cmd_detect(cfg: ExperimentConfig, rule: str) -> int:
    scenario = cfg.build()
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stopping, calib = resolve_stopping(cfg)
    records = monte_carlo(cfg)
    restop(records, stopping)
    report = estimate_metrics(records, scenario.prior, stopping, rule, allow_all_censored=True)

    first = simulate(scenario, child_seeds(cfg.run.seed, 0, 1)[0], cfg.run.nu)
    dt = scenario.model.dt
    files = [
        io.write_trajectory(out / "trajectory.csv", first.states, dt),
        io.write_observations(out / "observations.csv", first.observations, first.indicators, dt),
        io.write_stats(out / "stats.csv", detect(scenario, first)),
        io.write_tidy(out / "figure_tidy.csv", records),
        io.write_bands(out / "bands.csv", records),
        io.write_stopping_times(out / "stopping_times.csv", records),
    ]
    metrics = report.to_dict()
    metrics["cusum_calibration"] = calib
    files.append(io.write_json(out / "metrics.json", metrics))
    _manifest(out, f"detect --rule {rule}", cfg, files)
    print(report.summary())
    if calib:
        print(f"calibrated c     {calib['threshold']:.4f} (change-free alarm rate {calib['empirical_pfa']:.4f})")
    return EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, param: str, grid: Sequence[float], rule: str) -> int:
    if not grid:
        raise UsageError("--grid needs at least one value")
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(cfg, param, grid, rule)
    header = list(rows[0].keys())
    files = [io.write_csv(out / f"sweep_{param}.csv", header, ([r[h] for h in header] for r in rows))]
    files.append(io.write_json(out / "metrics.json", {"schema_version": "1.0", "param": param, "rows": rows}))
    _manifest(out, f"sweep --param {param}", cfg, files)
    print("  ".join(f"{h:>14}" for h in header))
    for r in rows:
        print("  ".join(f"{v:>14.6g}" if isinstance(v, (int, float)) else f"{v:>14}" for v in r.values()))
    return EXIT_OK


def cmd_oracle_check(cfg: ExperimentConfig) -> int:
    """Cross-check the filter bank against independent references on linear toys."""
    from ..change_stats import HypothesisBank, run_bank
    from ..dynamics import ChangePrior, simulate_truth
    from ..oracle import exact_linear_change_posterior, kalman_filter, particle_filter_loglik
    from ..robust_filter import FilterSettings, run_filter
    from ..sensing import observe_sequence
    from ..toys import A_ALPHA, linear_pair

    rng = np.random.default_rng(cfg.run.seed)
    model = linear_pair()
    obs = ObservationModel([0.2, 0.3], 1.0, 0.08, matrix=np.eye(2))
    m0, P0 = np.zeros(2), 0.1 * np.eye(2)
    settings = FilterSettings(q_jitter=0.0, initial_var=0.1)
    _, X = simulate_truth(model, m0, 100, rng, nu=40)
    Y, _ = observe_sequence(X[1:], obs, rng)

    results = {}
    modes = ["alpha"] * 100
    means, covs, _ = run_filter(Y, model, obs, modes, m0, settings, P0)
    F = np.eye(2) + model.dt * A_ALPHA
    Q = model.epsilon**2 * model.dt * np.eye(2)
    km, kP, kll = kalman_filter(Y, F, [model.dt, 0.0], Q, obs.matrix, obs.noise_var, m0, P0)
    results["kalman_max_abs_error"] = float(max(np.abs(means - km).max(), np.abs(covs - kP).max()))

    prior = ChangePrior(0.05)
    bank = HypothesisBank(model, obs, prior, m0, settings, window=None, initial_cov=P0)
    rec = run_bank(bank, Y, 40)
    _, p_exact = exact_linear_change_posterior(Y, model, obs, prior, m0, P0)
    results["exact_bayes_max_abs_error"] = float(np.abs(rec.p - p_exact).max())

    pf = particle_filter_loglik(Y[:20], model, obs, modes[:20], m0, P0, n_particles=20_000, seed=cfg.run.seed)
    results["pf_mean_abs_loglik_error"] = float(np.abs(pf - kll[:20]).mean())

    ok = (results["kalman_max_abs_error"] < 1e-8 and results["exact_bayes_max_abs_error"] < 1e-6
          and results["pf_mean_abs_loglik_error"] < 0.05)
    results["passed"] = ok
    out = Path(cfg.run.out_dir)
    f = io.write_json(out / "oracle.json", {"schema_version": "1.0", **results})
    _manifest(out, "oracle-check", cfg, [f])
    for k, v in results.items():
        print(f"{k:28s} {v}")
    return EXIT_OK if ok else EXIT_RUNTIME


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # --help
        return int(exc.code or 0)

    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.print_default_config:
        sys.stdout.write(default_config_yaml())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("error: a command is required", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = _resolve_config(args)
        log.info("backend %s, config hash %s", kernels.BACKEND, cfg.hash()[:12])
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "detect":
            return cmd_detect(cfg, args.rule)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.param, args.grid, args.rule)
        return cmd_oracle_check(cfg)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
