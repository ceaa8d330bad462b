"""Command-line driver: ``condopt solve|optimize``.

Settings are resolved in this order, later sources winning: built-in
defaults, a flat ``key = value`` config file (``--config``), ``CONDOPT_<KEY>``
environment variables, then command-line flags. Exit codes: 0 success,
1 configuration error, 2 no convergence (result files are still written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import output
from .optimizer import OptimizerOptions, run_optimization
from .problems import ProblemSpec, builtin, parse_key_values, spec_from_text
from .solver import TimeStepPolicy, discretize, refresh_boundaries, solve_steady, solve_steady_direct

log = logging.getLogger("condopt")

ENV_PREFIX = "CONDOPT_"
EXIT_OK, EXIT_CONFIG, EXIT_NOT_CONVERGED = 0, 1, 2


class ConfigError(ValueError):
    pass


def _positive(v):
    return v > 0


def _non_negative(v):
    return v >= 0


def _choice(*allowed) -> Callable:
    def check(v):
        return v in allowed
    check.allowed = allowed
    return check


def _number_or(*words) -> Callable:
    """Accept a positive number or one of ``words``."""
    def parse(text):
        if text in words:
            return text
        value = float(text)
        if not value > 0:
            raise ValueError("must be positive")
        return value
    parse.__name__ = "number or " + "/".join(words)
    return parse


@dataclass(frozen=True)
class Option:
    name: str
    type: Callable
    default: object
    help: str
    check: Callable | None = None


def _bool(text) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


OPTIONS = (
    Option("problem", str, "1", "builtin problem id 1-7 or path to a problem file"),
    Option("resolution", int, None, "particles per side (default 100, or the problem file's value)", _positive),
    Option("dummy_layers", int, None, "dummy particle layers (default 4, or the problem file's value)", _positive),
    Option("h_ratio", float, 1.3, "smoothing length over particle spacing", _positive),
    Option("dt_multiplier", float, 10.0, "implicit step in units of the explicit limit 0.5 h^2/k_max", _positive),
    Option("steady_method", str, "sweep", "steady solver: sweep (implicit sweeps) or direct (sparse solve)",
           _choice("sweep", "direct")),
    Option("steady_tol", float, 1e-3, "steady solve: max residual tolerance, K/s", _positive),
    Option("max_steps", int, 200_000, "steady solve: sweep cap", _positive),
    Option("beta0", float, 0.75, "initial target strength, K", _non_negative),
    Option("mu0", float, 1.5, "initial regularization coefficient", _positive),
    Option("beta_min", float, 1e-4, "lower clamp of beta", _positive),
    Option("mu_min", float, 2e-4, "lower clamp of mu", _positive),
    Option("bound_factor", float, 10.0, "beta and mu may grow to this multiple of their start", _positive),
    Option("tol_emax", float, 1e-3, "termination: max residual, K/s", _positive),
    Option("tol_dT", float, 1e-3, "termination: change of average temperature per loop, K", _positive),
    Option("tol_dk", float, 1e-4, "termination: max conductivity change per loop", _positive),
    Option("loop_cap", int, 500, "optimization loop cap", _positive),
    Option("relax_cap", int, 2000, "sweep cap of the temperature relaxation in each loop", _positive),
    Option("evolve_step", float, 0.1, "conductivity pseudo-step in units of the explicit limit", _positive),
    Option("regularization_step", _number_or("pde", "mu"), 0.1,
           "regularization pseudo-step: multiple of the explicit limit, 'pde' or 'mu'"),
    Option("evolve_order", str, "mirrored",
           "conductivity sweep order: mirrored (average of the four reflected orders) or index",
           _choice("mirrored", "index")),
    Option("recovery", str, "intent", "residual recovery sign: intent or literal", _choice("intent", "literal")),
    Option("init", str, "random", "initial temperature: random or uniform", _choice("random", "uniform")),
    Option("presolve", str, "direct", "steady start before optimizing: none, direct or sweep",
           _choice("none", "direct", "sweep")),
    Option("seed", int, 0, "RNG seed of the initial temperature", _non_negative),
    Option("threads", int, 1, "worker threads (1 = deterministic)", _positive),
    Option("output_dir", str, "condopt-out", "directory for fields.csv, history.csv and summary.txt"),
    Option("verbose", _bool, False, "log every optimization loop"),
)
_BY_NAME = {o.name: o for o in OPTIONS}


@dataclass
class RunConfig:
    command: str
    problem: str
    resolution: int | None
    dummy_layers: int | None
    h_ratio: float
    dt_multiplier: float
    steady_method: str
    steady_tol: float
    max_steps: int
    beta0: float
    mu0: float
    beta_min: float
    mu_min: float
    bound_factor: float
    tol_emax: float
    tol_dT: float
    tol_dk: float
    loop_cap: int
    relax_cap: int
    evolve_step: float
    regularization_step: object
    evolve_order: str
    recovery: str
    init: str
    presolve: str
    seed: int
    threads: int
    output_dir: str
    verbose: bool

    def problem_spec(self) -> ProblemSpec:
        overrides = {k: getattr(self, k) for k in ("resolution", "dummy_layers") if getattr(self, k) is not None}
        if self.problem.isdigit():
            pid = int(self.problem)
            if not 1 <= pid <= 7:
                raise ConfigError(f"problem: builtin ids are 1-7, got {pid}")
            return builtin(pid, **overrides)
        path = Path(self.problem)
        if not path.is_file():
            raise ConfigError(f"problem: no such problem file {self.problem!r}")
        try:
            spec = spec_from_text(path.read_text())
            return spec.replace(**overrides) if overrides else spec
        except ValueError as exc:
            raise ConfigError(f"problem: {path}: {exc}") from None

    def optimizer_options(self) -> OptimizerOptions:
        return OptimizerOptions(
            beta0=self.beta0, mu0=self.mu0, h_ratio=self.h_ratio, dt_multiplier=self.dt_multiplier,
            tol_emax=self.tol_emax, tol_dT=self.tol_dT, tol_dk=self.tol_dk, loop_cap=self.loop_cap,
            relax_cap=self.relax_cap, seed=self.seed, init=self.init, presolve=self.presolve,
            recovery=self.recovery, regularization_step=self.regularization_step,
            evolve_step=self.evolve_step, beta_min=self.beta_min, mu_min=self.mu_min,
            bound_factor=self.bound_factor, evolve_order=self.evolve_order, threads=self.threads,
        )


def _convert(name: str, raw, source: str):
    opt = _BY_NAME.get(name)
    if opt is None:
        raise ConfigError(f"{source}: unknown key {name!r}")
    try:
        value = opt.type(raw) if isinstance(raw, str) else raw
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: invalid value {raw!r} from {source} ({exc})") from None
    if opt.check is not None and not opt.check(value):
        allowed = getattr(opt.check, "allowed", None)
        hint = f"one of {', '.join(allowed)}" if allowed else "out of range"
        raise ConfigError(f"{name}: invalid value {raw!r} from {source} ({hint})")
    return value


def _read_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    try:
        entries = parse_key_values(text)
    except ValueError as exc:
        raise ConfigError(f"config: {path}: {exc}") from None
    values = {}
    for lineno, key, value in entries:
        key = key.replace("-", "_")
        values[key] = _convert(key, value, f"{path} line {lineno}")
    return values


def _read_env(environ) -> dict:
    values = {}
    for var, raw in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        key = var[len(ENV_PREFIX):].lower()
        if key == "config":
            continue
        values[key] = _convert(key, raw, f"environment variable {var}")
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condopt",
        description="SPH heat conduction solver and target-driven conductivity optimizer.",
        epilog=f"Every flag can also be set in the --config file (same names) or as {ENV_PREFIX}<NAME>.",
    )
    parser.add_argument("command", choices=("solve", "optimize"))
    parser.add_argument("--config", help=f"flat 'key = value' file with flag names as keys (env {ENV_PREFIX}CONFIG)")
    for opt in OPTIONS:
        flag = "--" + opt.name.replace("_", "-")
        # argparse only sees raw strings so that flag, env and file values share one converter
        parser.add_argument(flag, dest=opt.name, default=None, metavar=opt.name.upper(),
                            help=f"{opt.help} (default: {opt.default})")
    return parser


def parse_config(argv=None, environ=None) -> RunConfig:
    """Resolve a RunConfig from defaults, config file, environment and flags."""
    environ = os.environ if environ is None else environ
    args = build_parser().parse_args(argv)
    values = {o.name: o.default for o in OPTIONS}
    config_path = args.config or environ.get(ENV_PREFIX + "CONFIG")
    if config_path:
        values.update(_read_config_file(config_path))
    values.update(_read_env(environ))
    for opt in OPTIONS:
        raw = getattr(args, opt.name)
        if raw is not None:
            values[opt.name] = _convert(opt.name, raw, "command line")
    return RunConfig(command=args.command, **values)


# --------------------------------------------------------------------------
# commands


def _initial_field(ps) -> None:
    t0 = min(ps.spec.dirichlet_temperatures(), default=300.0)
    ps.temperature[:] = t0
    refresh_boundaries(ps)


def steady_state(spec: ProblemSpec, cfg: RunConfig):
    """Uniform-k steady solve with the configured method; returns (ps, result-like, seconds)."""
    ps, nl = discretize(spec, cfg.h_ratio)
    _initial_field(ps)
    start = time.perf_counter()
    if cfg.steady_method == "direct":
        stats = solve_steady_direct(ps, nl)
        steps, converged = 0, stats.max_abs < cfg.steady_tol
    else:
        policy = TimeStepPolicy(nl.kernel.smoothing_length, cfg.dt_multiplier)
        res = solve_steady(ps, nl, policy, cfg.steady_tol, cfg.max_steps, cfg.threads)
        stats, steps, converged = res.stats, res.steps, res.converged
    return ps, nl, stats, steps, converged, time.perf_counter() - start


def run_solve(cfg: RunConfig) -> int:
    spec = cfg.problem_spec()
    out = output.ensure_writable(cfg.output_dir)
    ps, nl, stats, steps, converged, seconds = steady_state(spec, cfg)
    paths = output.output_paths(out)
    output.write_fields(ps, paths["fields"])
    output.write_summary(output.SolveSummary(
        problem=spec.name, avg_T=ps.average_temperature(), steps=steps, e_max=stats.max_abs,
        e_ave=stats.mean_abs, converged=converged, method=cfg.steady_method, wall_time_s=seconds,
    ), paths["summary"])
    print(f"{spec.name}: average T = {ps.average_temperature():.4f} K after {steps} steps "
          f"(max residual {stats.max_abs:.3g} K/s)")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def run_optimize(cfg: RunConfig) -> int:
    spec = cfg.problem_spec()
    out = output.ensure_writable(cfg.output_dir)
    base_ps, _, base_stats, _, _, steady_seconds = steady_state(spec, cfg)
    original = base_ps.average_temperature()

    def progress(rec):
        log.info("loop %d: T=%.4f e_max=%.3g beta=%.3g mu=%.3g steps=%d",
                 rec.loop, rec.avg_T, rec.e_max, rec.beta, rec.mu, rec.pde_steps)

    report = run_optimization(spec, cfg.optimizer_options(), progress)
    ps = report.ps
    n = ps.n_inner
    paths = output.output_paths(out)
    output.write_fields(ps, paths["fields"])
    output.write_history(report.history, paths["history"])
    final_e = report.history[-1].e_max if report.history else base_stats.max_abs
    summary = output.Summary(
        problem=spec.name,
        original_avg_T=original,
        optimized_avg_T=report.final_avg_T,
        reduction_percent=output.reduction_percent(original, report.final_avg_T),
        loops=report.loops,
        total_pde_steps=report.total_pde_steps,
        wall_time_s=report.wall_time,
        steady_wall_time_s=steady_seconds,
        cost_ratio=report.wall_time / steady_seconds if steady_seconds > 0 else float("nan"),
        converged=report.converged,
        reason=report.reason,
        max_k=float(np.max(ps.conductivity[:n])),
        min_k=float(np.min(ps.conductivity[:n])),
        final_e_max=float(final_e),
    )
    output.write_summary(summary, paths["summary"])
    print(f"{spec.name}: average T {original:.2f} K -> {report.final_avg_T:.2f} K "
          f"({summary.reduction_percent:.2f}% lower) in {report.loops} loops, {report.reason}")
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except ConfigError as exc:
        print(f"condopt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if cfg.verbose else logging.WARNING, format="%(message)s")
    try:
        return run_solve(cfg) if cfg.command == "solve" else run_optimize(cfg)
    except ConfigError as exc:
        print(f"condopt: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print(f"condopt: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
