"""Target-driven all-at-once optimization of the conductivity field.

Each loop lowers every particle's temperature by the target strength
``beta`` inside its own residual, evolves the conductivity so the residual
returns to its previous value, restores the conductivity budget, smooths
the conductivity by pseudo-time diffusion, and then relaxes the temperature
field just far enough that both the maximum and the mean residual improve
on the previous loop.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .particles import NeighborList, ParticleSystem
from .problems import ProblemSpec
from .solver import (
    ResidualStats,
    TimeStepPolicy,
    _refresh_dummies,
    _strang,
    compute_residuals,
    discretize,
    refresh_boundaries,
    relax,
    solve_steady,
    solve_steady_direct,
)

log = logging.getLogger(__name__)

K_FLOOR = 1e-4


@dataclass
class OptimizerOptions:
    beta0: float = 0.75
    mu0: float = 1.5
    h_ratio: float = 1.3
    dt_multiplier: float = 10.0
    tol_emax: float = 1e-3  # K/s
    tol_dT: float = 1e-3  # K per loop
    tol_dk: float = 1e-4  # W/(m K) per loop
    loop_cap: int = 500
    relax_cap: int = 2000
    seed: int = 0
    init: str = "random"  # or "uniform"
    init_span: float = 50.0
    presolve: str = "direct"  # "none", "direct" (sparse solve) or "sweep"
    recovery: str = "intent"  # or "literal"
    regularization_step: object = 0.1  # "pde", "mu" or a multiple of the explicit limit
    evolve_step: float = 0.1  # evolve pseudo-step in units of the explicit limit
    inner_normal: str = "mirror"
    k_floor: float = K_FLOOR
    beta_min: float = 1e-4
    mu_min: float = 2e-4
    grow: float = 1.05
    decay: float = 0.8
    bound_factor: float = 10.0  # beta and mu may grow to this multiple of their start
    evolve_order: str = "mirrored"  # or "index"
    threads: int = 1

    def __post_init__(self):
        if self.init not in ("random", "uniform"):
            raise ValueError(f"init must be 'random' or 'uniform', got {self.init!r}")
        if self.presolve not in ("none", "direct", "sweep"):
            raise ValueError(f"presolve must be 'none', 'direct' or 'sweep', got {self.presolve!r}")
        if self.evolve_order not in ("mirrored", "index"):
            raise ValueError(f"evolve_order must be 'mirrored' or 'index', got {self.evolve_order!r}")
        if self.recovery not in ("intent", "literal"):
            raise ValueError(f"recovery must be 'intent' or 'literal', got {self.recovery!r}")
        if self.regularization_step not in ("pde", "mu") and not isinstance(self.regularization_step, (int, float)):
            raise ValueError(f"regularization_step must be 'pde' or 'mu', got {self.regularization_step!r}")
        if self.beta0 < 0 or self.mu0 <= 0:
            raise ValueError("beta0 must be >= 0 and mu0 > 0")


@dataclass
class OptimizerState:
    beta: float
    mu: float
    k0: float
    domain_volume: float
    beta_bounds: tuple
    mu_bounds: tuple
    prev_avg_T: float = math.nan
    prev_stats: Optional[ResidualStats] = None
    loop_index: int = 0
    inner_step_counts: list = field(default_factory=list)

    @classmethod
    def initial(cls, k0: float, volume: float, beta0: float, mu0: float,
                beta_min: float = 1e-4, mu_min: float = 0.05, bound_factor: float = 10.0) -> "OptimizerState":
        return cls(
            beta=beta0,
            mu=mu0,
            k0=k0,
            domain_volume=volume,
            beta_bounds=(min(beta_min, beta0), bound_factor * beta0),
            mu_bounds=(min(mu_min, mu0), bound_factor * mu0),
        )


@dataclass
class LoopRecord:
    loop: int
    avg_T: float
    e_max: float
    e_ave: float
    beta: float
    mu: float
    pde_steps: int
    k_change: float = math.nan
    relax_capped: bool = False
    k_mean: float = math.nan
    k_min: float = math.nan


@dataclass
class OptimizationReport:
    history: list
    temperature: np.ndarray
    conductivity: np.ndarray
    converged: bool
    reason: str
    initial_avg_T: float
    final_avg_T: float
    wall_time: float
    ps: ParticleSystem = field(repr=False, default=None)
    nl: NeighborList = field(repr=False, default=None)

    @property
    def loops(self) -> int:
        return len(self.history)

    @property
    def total_pde_steps(self) -> int:
        return sum(r.pde_steps for r in self.history)


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _k_step(i, k, T, beta, drive, off, idx, F, n_inner, dtau):
    ki = k[i]
    ti = T[i] - beta
    sc = 0.0
    sc2 = 0.0
    acc = 0.0
    a = off[i]
    b = off[i + 1]
    for p in range(a, b):
        j = idx[p]
        cp = (ti - T[j]) * F[p] * dtau
        sc += cp
        sc2 += cp * cp
        acc += cp * (ki + (k[j] if j < n_inner else ki))
    E = -acc - drive[i] * dtau
    diag = sc - 1.0
    eta = E / (diag * diag + sc2)
    k[i] = ki + eta * diag
    for p in range(a, b):
        j = idx[p]
        if j < n_inner:
            k[j] += eta * (ti - T[j]) * F[p] * dtau
    return eta


@njit(cache=True)
def _k_strang(k, T, beta, drive, off, idx, F, n_inner, dtau, order):
    half = 0.5 * dtau
    for q in range(n_inner):
        _k_step(order[q], k, T, beta, drive, off, idx, F, n_inner, half)
    for q in range(n_inner - 1, -1, -1):
        _k_step(order[q], k, T, beta, drive, off, idx, F, n_inner, half)


# --------------------------------------------------------------------------
# loop steps


def impose_target(ps: ParticleSystem, nl: NeighborList, state: OptimizerState) -> ResidualStats:
    """Residuals with every particle's own temperature lowered by beta.

    The live temperature field is left untouched.
    """
    return compute_residuals(ps, nl, shift=state.beta)


def mirrored_orders(ps: ParticleSystem) -> list:
    """Row-major sweep orders of the inner particles under the four axis reflections."""
    x, y = ps.positions[: ps.n_inner].T
    return [np.lexsort((sx * x, sy * y)) for sy in (1.0, -1.0) for sx in (1.0, -1.0)]


def evolve_k(ps: ParticleSystem, nl: NeighborList, state: OptimizerState, e_star: ResidualStats,
             dtau: float, recovery: str = "intent", k_floor: float = K_FLOOR, orders=None) -> None:
    """One Strang sweep of the local implicit conductivity evolution.

    The local residual of particle i is e_i^c(k) - e_i^* (``"intent"``) or
    e_i^c(k) + e_i^* (``"literal"``), with e^c evaluated at the target
    temperature T_i - beta; afterwards k is clipped to ``k_floor``.

    Without ``orders`` the sweep visits particles in index order. Given a
    list of visiting orders, one sweep is run from the same start for each
    and the results are averaged, which removes the dependence on numbering.
    """
    n = ps.n_inner
    sign = -1.0 if recovery == "intent" else 1.0
    drive = ps.source_rate[:n] + sign * e_star.per_particle
    args = (ps.temperature, float(state.beta), drive, nl.offsets, nl.indices, nl.factor, n, float(dtau))
    if orders is None:
        _k_strang(ps.conductivity, *args, np.arange(n))
    else:
        total = np.zeros(n)
        for order in orders:
            k = ps.conductivity.copy()
            _k_strang(k, *args, np.asarray(order, dtype=np.int64))
            total += k[:n]
        ps.conductivity[:n] = total / len(orders)
    np.maximum(ps.conductivity[:n], k_floor, out=ps.conductivity[:n])


def renormalize_k(ps: ParticleSystem, state: OptimizerState, k_floor: float = K_FLOOR) -> None:
    """Rescale inner conductivities so their volume average equals k0."""
    n = ps.n_inner
    k = ps.conductivity[:n]
    v = ps.volume[:n]
    target = state.k0 * float(v.sum())
    for _ in range(100):
        total = float(np.dot(k, v))
        if not total > 0:
            raise ValueError("conductivity field has no positive mass to rescale")
        k *= target / total
        np.maximum(k, k_floor, out=k)
        if abs(float(np.dot(k, v)) - target) <= 1e-12 * target:
            return
    raise RuntimeError("conductivity floor leaves no room to meet the average constraint")


def regularize_k(ps: ParticleSystem, nl: NeighborList, state: OptimizerState, dtau: float | None = None) -> float:
    """Implicit pseudo-time diffusion of k with coefficient mu.

    ``dtau`` defaults to 10 * 0.5 h^2 / mu. Returns the largest change of any
    inner conductivity.
    """
    n = ps.n_inner
    if dtau is None:
        dtau = 10.0 * 0.5 * nl.kernel.smoothing_length ** 2 / state.mu
    before = ps.conductivity[:n].copy()
    c = 2.0 * state.mu * nl.factor
    zero = np.zeros(n)
    _strang(ps.conductivity, c, zero, nl.offsets, nl.indices, n, ps.role, ps.mirror, ps.boundary_value,
            False, float(dtau))
    return float(np.max(np.abs(ps.conductivity[:n] - before)))


def pde_relax(ps: ParticleSystem, nl: NeighborList, e_prev: ResidualStats, cap: int, dt: float,
              threads: int = 1):
    """Advance the temperature until both residual measures beat ``e_prev``.

    Returns ``(stats, steps, capped)``.
    """
    stats, steps = relax(ps, nl, dt, cap, e_prev.max_abs, e_prev.mean_abs, threads=threads)
    capped = not (stats.max_abs < e_prev.max_abs and stats.mean_abs < e_prev.mean_abs)
    return stats, steps, capped


def update_schedules(state: OptimizerState, new_avg_T: float, grow: float = 1.05, decay: float = 0.8) -> None:
    """Grow beta and mu after a loop that lowered the average temperature,
    decay them otherwise (ties decay)."""
    factor = grow if new_avg_T < state.prev_avg_T else decay
    state.beta = float(np.clip(state.beta * factor, *state.beta_bounds))
    state.mu = float(np.clip(state.mu * factor, *state.mu_bounds))
    state.prev_avg_T = new_avg_T


def initial_temperature(ps: ParticleSystem, opts: OptimizerOptions) -> np.ndarray:
    t_min = min(ps.spec.dirichlet_temperatures(), default=300.0)
    if opts.init == "uniform":
        return np.full(ps.n_inner, t_min + 0.5 * opts.init_span)
    rng = np.random.default_rng(opts.seed)
    return rng.uniform(t_min, t_min + opts.init_span, ps.n_inner)


def run_optimization(spec: ProblemSpec, opts: OptimizerOptions | None = None,
                     callback: Callable[[LoopRecord], None] | None = None) -> OptimizationReport:
    opts = opts or OptimizerOptions()
    start = time.perf_counter()
    ps, nl = discretize(spec, opts.h_ratio, opts.inner_normal)
    n = ps.n_inner
    policy = TimeStepPolicy(nl.kernel.smoothing_length, opts.dt_multiplier)

    ps.temperature[:n] = initial_temperature(ps, opts)
    refresh_boundaries(ps)
    if opts.presolve == "direct":
        solve_steady_direct(ps, nl)
    elif opts.presolve == "sweep":
        solve_steady(ps, nl, policy, opts.tol_emax, threads=opts.threads)
    e_star = compute_residuals(ps, nl)
    state = OptimizerState.initial(spec.k0, float(ps.volume[:n].sum()), opts.beta0, opts.mu0,
                                   opts.beta_min, opts.mu_min, opts.bound_factor)
    state.prev_avg_T = ps.average_temperature()
    state.prev_stats = e_star
    initial_avg = state.prev_avg_T
    orders = mirrored_orders(ps) if opts.evolve_order == "mirrored" else None

    history: list = []
    converged, reason = False, f"loop cap {opts.loop_cap} reached"
    if opts.beta0 == 0:
        converged, reason = True, "zero target strength"
    while not converged and state.loop_index < opts.loop_cap:
        state.loop_index += 1
        dt = policy.step(float(ps.conductivity[:n].max()))
        dtau = dt * opts.evolve_step / opts.dt_multiplier

        impose_target(ps, nl, state)
        evolve_k(ps, nl, state, e_star, dtau, opts.recovery, opts.k_floor, orders)
        renormalize_k(ps, state, opts.k_floor)
        if opts.regularization_step == "pde":
            dtau_reg = dt
        elif opts.regularization_step == "mu":
            dtau_reg = None
        else:
            dtau_reg = dt * opts.regularization_step / opts.dt_multiplier
        k_change = regularize_k(ps, nl, state, dtau_reg)
        renormalize_k(ps, state, opts.k_floor)
        refresh_boundaries(ps)

        dt = policy.step(float(ps.conductivity[:n].max()))
        stats, steps, capped = pde_relax(ps, nl, e_star, opts.relax_cap, dt, opts.threads)
        avg_T = ps.average_temperature()
        dT = abs(avg_T - state.prev_avg_T)
        record = LoopRecord(state.loop_index, avg_T, stats.max_abs, stats.mean_abs, state.beta, state.mu,
                            steps, k_change, capped, ps.average_conductivity(), float(ps.conductivity[:n].min()))
        update_schedules(state, avg_T, opts.grow, opts.decay)
        state.inner_step_counts.append(steps)
        state.prev_stats = e_star = stats
        history.append(record)
        if callback is not None:
            callback(record)
        log.debug("loop %d: T=%.4f emax=%.3g eave=%.3g beta=%.3g mu=%.3g steps=%d dk=%.3g",
                  record.loop, avg_T, stats.max_abs, stats.mean_abs, record.beta, record.mu, steps, k_change)
        if stats.max_abs < opts.tol_emax and dT < opts.tol_dT and k_change < opts.tol_dk:
            converged, reason = True, "residual, temperature and conductivity changes below thresholds"

    refresh_boundaries(ps)
    return OptimizationReport(
        history=history,
        temperature=ps.temperature.copy(),
        conductivity=ps.conductivity.copy(),
        converged=converged,
        reason=reason,
        initial_avg_T=initial_avg,
        final_avg_T=ps.average_temperature(),
        wall_time=time.perf_counter() - start,
        ps=ps,
        nl=nl,
    )
