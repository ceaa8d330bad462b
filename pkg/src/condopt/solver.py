"""SPH heat conduction: boundary treatment, residuals and implicit sweeps.

The conduction operator for inner particle i is

    dT_i/dt = sum_j (k_i + k_j) (T_i - T_j) F_ij + Q_i,   F_ij = W'(r_ij)/r_ij V_j

(the usual 2 * kbar_ij form). Dummy particles borrow the conductivity of
the inner particle they interact with, and their temperatures are
re-derived from their mirror partners instead of being integrated.

The implicit scheme visits particles one at a time. Each visit takes the
exact line-search gradient step on the local implicit residual

    E_i = (sum_j B_j - 1) dT_i - sum_j B_j dT_j,   B_j = (k_i + k_j) F_ij dt

and a full step is a forward half-step sweep followed by a backward one.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .kernel import KernelSpec
from .particles import (
    NeighborList,
    ParticleSystem,
    Role,
    build_cell_grid,
    build_lattice,
    build_neighbor_list,
)
from .problems import NEUMANN, ProblemSpec

log = logging.getLogger(__name__)

_DIRICHLET = int(Role.DIRICHLET)
_NEUMANN = int(Role.NEUMANN)


@dataclass
class ResidualStats:
    per_particle: np.ndarray  # K/s, inner particles only
    max_abs: float
    mean_abs: float

    @classmethod
    def from_values(cls, values: np.ndarray) -> "ResidualStats":
        a = np.abs(values)
        return cls(values, float(a.max()), float(a.mean()))


@dataclass
class TimeStepPolicy:
    smoothing_length: float
    dt_multiplier: float = 10.0

    def diffusive_dt(self, k_max: float) -> float:
        """Explicit stability scale 0.5 h^2 / k_max (rho C = 1)."""
        return 0.5 * self.smoothing_length ** 2 / k_max

    def step(self, k_max: float) -> float:
        return self.dt_multiplier * self.diffusive_dt(k_max)


@dataclass
class LocalImplicitSystem:
    coefficients: np.ndarray
    residual: float
    learning_rate: float
    increment_i: float
    increments_j: np.ndarray


@dataclass
class SteadyResult:
    stats: ResidualStats
    steps: int
    converged: bool


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _refresh_dummies(u, role, mirror, boundary, n_inner, dirichlet_mirror):
    """Mirror dummy values from their inner partners.

    With ``dirichlet_mirror`` set, dirichlet dummies get 2 T_b - T_i and all
    other dummies copy T_i; otherwise every dummy copies its partner.
    """
    for w in range(n_inner, u.shape[0]):
        if dirichlet_mirror and role[w] == _DIRICHLET:
            u[w] = 2.0 * boundary[w] - u[mirror[w]]
        else:
            u[w] = u[mirror[w]]


@njit(cache=True)
def _pair_coefficients(k, off, idx, F, n_inner, out):
    """(k_i + k_j) F_ij per pair, dummies taking the inner particle's k."""
    for i in range(n_inner):
        ki = k[i]
        for p in range(off[i], off[i + 1]):
            j = idx[p]
            out[p] = (ki + (k[j] if j < n_inner else ki)) * F[p]


@njit(cache=True)
def _residuals(T, c, Q, off, idx, n_inner, shift, out):
    for i in range(n_inner):
        ti = T[i] - shift
        acc = 0.0
        for p in range(off[i], off[i + 1]):
            acc += c[p] * (ti - T[idx[p]])
        out[i] = acc + Q[i]


@njit(cache=True)
def _abs_stats(values):
    m = 0.0
    s = 0.0
    for v in values:
        a = abs(v)
        s += a
        if a > m:
            m = a
    return m, s / values.shape[0]


@njit(cache=True)
def _local_step(i, u, c, src, off, idx, n_inner, dt):
    """Exact line-search step for particle i with B_j = c_j dt; returns eta.

    Increments aimed at dummy particles are dropped.
    """
    ui = u[i]
    sc = 0.0
    sc2 = 0.0
    acc = 0.0
    a = off[i]
    b = off[i + 1]
    for p in range(a, b):
        cp = c[p]
        sc += cp
        sc2 += cp * cp
        acc += cp * (ui - u[idx[p]])
    E = -(acc + src[i]) * dt
    diag = sc * dt - 1.0
    eta = E / (diag * diag + sc2 * dt * dt)
    u[i] = ui + eta * diag
    g = eta * dt
    for p in range(a, b):
        j = idx[p]
        if j < n_inner:
            u[j] -= g * c[p]
    return eta


@njit(cache=True)
def _strang(u, c, src, off, idx, n_inner, role, mirror, boundary, dirichlet_mirror, dt):
    half = 0.5 * dt
    _refresh_dummies(u, role, mirror, boundary, n_inner, dirichlet_mirror)
    for i in range(n_inner):
        _local_step(i, u, c, src, off, idx, n_inner, half)
    _refresh_dummies(u, role, mirror, boundary, n_inner, dirichlet_mirror)
    for i in range(n_inner - 1, -1, -1):
        _local_step(i, u, c, src, off, idx, n_inner, half)
    _refresh_dummies(u, role, mirror, boundary, n_inner, dirichlet_mirror)


@njit(parallel=True, cache=True)
def _half_sweep_colored(u, c, src, off, idx, n_inner, dt, color_off, cell_off, members, forward):
    n_colors = color_off.shape[0] - 1
    for cc in range(n_colors):
        col = cc if forward else n_colors - 1 - cc
        for q in prange(color_off[col], color_off[col + 1]):
            a = cell_off[q]
            b = cell_off[q + 1]
            for m in range(b - a):
                pos = a + m if forward else b - 1 - m
                _local_step(members[pos], u, c, src, off, idx, n_inner, dt)


def _strang_colored(u, c, src, nl, ps, dirichlet_mirror, dt):
    color_off, cell_off, members = _color_batches(nl, ps.n_inner)
    args = (ps.role, ps.mirror, ps.boundary_value, ps.n_inner, dirichlet_mirror)
    _refresh_dummies(u, *args)
    _half_sweep_colored(u, c, src, nl.offsets, nl.indices, ps.n_inner, 0.5 * dt,
                        color_off, cell_off, members, True)
    _refresh_dummies(u, *args)
    _half_sweep_colored(u, c, src, nl.offsets, nl.indices, ps.n_inner, 0.5 * dt,
                        color_off, cell_off, members, False)
    _refresh_dummies(u, *args)


def _color_batches(nl: NeighborList, n_inner: int):
    cached = getattr(nl, "_batches", None)
    if cached is not None:
        return cached
    grid = nl.grid
    color_off, cell_off, members = [0], [0], []
    for batch in grid.color_partition:
        for key in batch:
            inner = grid.cells[key]
            inner = inner[inner < n_inner]
            if len(inner):
                members.extend(inner.tolist())
                cell_off.append(len(members))
        color_off.append(len(cell_off) - 1)
    out = (np.array(color_off, np.int64), np.array(cell_off, np.int64), np.array(members, np.int64))
    nl._batches = out
    return out


@njit(cache=True)
def _relax(T, c, Q, off, idx, n_inner, role, mirror, boundary, dt, max_steps, tol_max, tol_ave, res):
    _refresh_dummies(T, role, mirror, boundary, n_inner, True)
    _residuals(T, c, Q, off, idx, n_inner, 0.0, res)
    emax, eave = _abs_stats(res)
    steps = 0
    while not (emax < tol_max and eave < tol_ave) and steps < max_steps:
        _strang(T, c, Q, off, idx, n_inner, role, mirror, boundary, True, dt)
        _residuals(T, c, Q, off, idx, n_inner, 0.0, res)
        emax, eave = _abs_stats(res)
        steps += 1
    return steps, emax, eave


@njit(cache=True)
def _explicit(T, c, Q, off, idx, n_inner, role, mirror, boundary, dt, max_steps, tol, res):
    _refresh_dummies(T, role, mirror, boundary, n_inner, True)
    _residuals(T, c, Q, off, idx, n_inner, 0.0, res)
    emax, _ = _abs_stats(res)
    steps = 0
    while emax >= tol and steps < max_steps:
        for i in range(n_inner):
            T[i] += dt * res[i]
        _refresh_dummies(T, role, mirror, boundary, n_inner, True)
        _residuals(T, c, Q, off, idx, n_inner, 0.0, res)
        emax, _ = _abs_stats(res)
        steps += 1
    return steps, emax


# --------------------------------------------------------------------------
# setup


def neumann_volumetric(ps: ParticleSystem, nl: NeighborList, segment_id: int, outflux: float | None = None,
                       inner_normal: str = "mirror") -> np.ndarray:
    """Volumetric source replacing a prescribed-flux boundary segment.

    Q_i = -q_b sum_{j in segment dummies} (n_i + n_j) . grad_i W_ij V_j with
    q_b the signed outflux (negative for heating). ``inner_normal="mirror"``
    uses n_i = n_j for each summed pair; ``"zero"`` drops n_i.
    """
    seg = ps.spec.segments[segment_id]
    q_b = seg.outflux if outflux is None else outflux
    out = np.zeros(ps.n_inner)
    if q_b == 0.0:
        return out
    if inner_normal not in ("mirror", "zero"):
        raise ValueError(f"inner_normal must be 'mirror' or 'zero', got {inner_normal!r}")
    j = nl.indices
    on_seg = (j >= ps.n_inner) & (ps.segment[j] == segment_id) & (ps.role[j] == _NEUMANN)
    nj = ps.normal[j]
    ndot = np.einsum("pd,pd->p", nj, nl.rij) * nl.factor  # n_j . grad_i W_ij V_j
    weight = 2.0 if inner_normal == "mirror" else 1.0
    owner = np.repeat(np.arange(ps.n_inner), np.diff(nl.offsets))
    np.add.at(out, owner[on_seg], -q_b * weight * ndot[on_seg])
    return out


def discretize(spec: ProblemSpec, h_ratio: float = 1.3, inner_normal: str = "mirror"):
    """Lattice, kernel and neighbor lists for ``spec``, with flux boundaries
    folded into the source term. Returns ``(ps, nl)``."""
    ps = build_lattice(spec)
    kernel = KernelSpec.for_spacing(ps.dx, h_ratio)
    grid = build_cell_grid(ps, kernel.support_radius)
    nl = build_neighbor_list(ps, kernel, grid)
    for s_id, seg in enumerate(spec.segments):
        if seg.kind == NEUMANN:
            ps.source_rate[: ps.n_inner] += neumann_volumetric(ps, nl, s_id, inner_normal=inner_normal)
    _check_mirrors(ps, nl)
    return ps, nl


def _check_mirrors(ps: ParticleSystem, nl: NeighborList) -> None:
    dummies = np.arange(ps.n_inner, ps.n)
    partners = ps.mirror[dummies]
    if np.any(partners < 0) or np.any(partners >= ps.n_inner):
        raise ValueError("dummy particle without an inner mirror partner")


# --------------------------------------------------------------------------
# public operations


def apply_dirichlet(ps: ParticleSystem) -> None:
    w = np.flatnonzero(ps.role == Role.DIRICHLET)
    ps.temperature[w] = 2.0 * ps.boundary_value[w] - ps.temperature[ps.mirror[w]]


def apply_adiabatic(ps: ParticleSystem) -> None:
    """Zero-gradient mirroring for insulated and flux dummies (the flux
    itself enters through the volumetric source)."""
    w = np.flatnonzero((ps.role == Role.ADIABATIC) | (ps.role == Role.NEUMANN))
    ps.temperature[w] = ps.temperature[ps.mirror[w]]


def refresh_boundaries(ps: ParticleSystem) -> None:
    _refresh_dummies(ps.temperature, ps.role, ps.mirror, ps.boundary_value, ps.n_inner, True)


def pair_coefficients(ps: ParticleSystem, nl: NeighborList) -> np.ndarray:
    """2 kbar_ij F_ij for every listed pair at the current conductivities."""
    out = np.empty(len(nl.indices))
    _pair_coefficients(ps.conductivity, nl.offsets, nl.indices, nl.factor, ps.n_inner, out)
    return out


def conduction_rhs(ps: ParticleSystem, nl: NeighborList, i: int) -> float:
    s = nl.of(i)
    j = nl.indices[s]
    k = ps.conductivity
    kj = np.where(j < ps.n_inner, k[j], k[i])
    T = ps.temperature
    return float(np.sum((k[i] + kj) * (T[i] - T[j]) * nl.factor[s]) + ps.source_rate[i])


def compute_residuals(ps: ParticleSystem, nl: NeighborList, shift: float = 0.0,
                      coefficients: np.ndarray | None = None) -> ResidualStats:
    """Residual of every inner particle with boundary values as they stand.

    ``shift`` lowers particle i's own temperature inside its own residual
    (the target-imposed residual); neighbors are not shifted.
    """
    c = pair_coefficients(ps, nl) if coefficients is None else coefficients
    out = np.empty(ps.n_inner)
    _residuals(ps.temperature, c, ps.source_rate, nl.offsets, nl.indices, ps.n_inner, float(shift), out)
    return ResidualStats.from_values(out)


def implicit_local_step(ps: ParticleSystem, nl: NeighborList, i: int, dt: float) -> LocalImplicitSystem:
    """One particle's local implicit solve, applied to ``ps.temperature`` in place."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    c = pair_coefficients(ps, nl)
    s = nl.of(i)
    j = nl.indices[s]
    B = c[s] * dt
    T = ps.temperature
    E = -np.sum(B * (T[i] - T[j])) - ps.source_rate[i] * dt
    before_i, before_j = T[i], T[j].copy()
    eta = _local_step(i, T, c, ps.source_rate, nl.offsets, nl.indices, ps.n_inner, dt)
    return LocalImplicitSystem(B, float(E), float(eta), float(T[i] - before_i), T[j] - before_j)


def _set_threads(threads: int) -> None:
    numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def strang_sweep(ps: ParticleSystem, nl: NeighborList, dt: float, threads: int = 1,
                 coefficients: np.ndarray | None = None) -> None:
    if not dt > 0:
        raise ValueError("dt must be positive")
    c = pair_coefficients(ps, nl) if coefficients is None else coefficients
    if threads > 1:
        _set_threads(threads)
        _strang_colored(ps.temperature, c, ps.source_rate, nl, ps, True, dt)
    else:
        _strang(ps.temperature, c, ps.source_rate, nl.offsets, nl.indices, ps.n_inner, ps.role,
                ps.mirror, ps.boundary_value, True, dt)


def relax(ps: ParticleSystem, nl: NeighborList, dt: float, max_steps: int, tol_max: float,
          tol_ave: float = math.inf, threads: int = 1):
    """Sweep until max |e| < tol_max and mean |e| < tol_ave, or max_steps.

    The residuals are checked before every sweep, so zero sweeps run when
    the targets already hold. Returns ``(stats, steps)``.
    """
    c = pair_coefficients(ps, nl)
    if threads > 1:
        refresh_boundaries(ps)
        stats = compute_residuals(ps, nl, coefficients=c)
        steps = 0
        while not (stats.max_abs < tol_max and stats.mean_abs < tol_ave) and steps < max_steps:
            strang_sweep(ps, nl, dt, threads, coefficients=c)
            stats = compute_residuals(ps, nl, coefficients=c)
            steps += 1
        return stats, steps
    res = np.empty(ps.n_inner)
    steps, _, _ = _relax(ps.temperature, c, ps.source_rate, nl.offsets, nl.indices, ps.n_inner, ps.role,
                         ps.mirror, ps.boundary_value, float(dt), int(max_steps), float(tol_max),
                         float(tol_ave), res)
    return ResidualStats.from_values(res), int(steps)


def solve_steady(ps: ParticleSystem, nl: NeighborList, policy: TimeStepPolicy | None = None,
                 tol: float = 1e-3, max_steps: int = 200_000, threads: int = 1) -> SteadyResult:
    """Implicit sweeps until the max residual drops below ``tol`` (K/s)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    policy = policy or TimeStepPolicy(nl.kernel.smoothing_length)
    dt = policy.step(float(ps.conductivity[: ps.n_inner].max()))
    stats, steps = relax(ps, nl, dt, max_steps, tol, threads=threads)
    converged = stats.max_abs < tol
    if not converged:
        log.warning("steady solve stopped after %d steps with max residual %.3g K/s", steps, stats.max_abs)
    return SteadyResult(stats, steps, converged)


def solve_steady_explicit(ps: ParticleSystem, nl: NeighborList, dt: float | None = None,
                          tol: float = 1e-3, max_steps: int = 2_000_000) -> SteadyResult:
    """Forward-Euler pseudo-time marching to the same steady state.

    The default step is a quarter of h^2 / k_max, inside the stability limit
    of the Wendland operator at h = 1.3 dx.
    """
    if dt is None:
        dt = 0.25 * nl.kernel.smoothing_length ** 2 / float(ps.conductivity[: ps.n_inner].max())
    c = pair_coefficients(ps, nl)
    res = np.empty(ps.n_inner)
    steps, emax = _explicit(ps.temperature, c, ps.source_rate, nl.offsets, nl.indices, ps.n_inner,
                            ps.role, ps.mirror, ps.boundary_value, float(dt), int(max_steps), float(tol), res)
    return SteadyResult(ResidualStats.from_values(res), int(steps), emax < tol)


def steady_matrix(ps: ParticleSystem, nl: NeighborList):
    """Sparse form ``A T = b`` of the steady residual equations of the inner
    particles, with every dummy replaced by its mirror relation."""
    from scipy import sparse

    n = ps.n_inner
    c = pair_coefficients(ps, nl)
    owner = np.repeat(np.arange(n), np.diff(nl.offsets))
    j = nl.indices
    dummy = j >= n
    partner = np.where(dummy, ps.mirror[j], j)
    dirichlet = dummy & (ps.role[j] == Role.DIRICHLET)
    # sum_j c (T_i - T_j) + Q_i = 0, with T_j = 2 T_b - T_m for fixed-temperature dummies
    sign = np.where(dirichlet, 1.0, -1.0)
    rows = np.concatenate([owner, owner])
    cols = np.concatenate([owner, partner])
    vals = np.concatenate([c, sign * c])
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    b = -ps.source_rate[:n].copy()
    np.add.at(b, owner[dirichlet], 2.0 * c[dirichlet] * ps.boundary_value[j[dirichlet]])
    return A, b


def solve_steady_direct(ps: ParticleSystem, nl: NeighborList) -> ResidualStats:
    """Exact steady state of the discrete equations by a sparse direct solve.

    This is the fixed point the implicit sweeps converge to; it is used to
    verify them and as a cheap starting field. Needs at least one
    fixed-temperature segment.
    """
    from scipy.sparse.linalg import spsolve

    if not np.any(ps.role == Role.DIRICHLET):
        raise ValueError("the steady state is only defined with a fixed-temperature boundary segment")
    A, b = steady_matrix(ps, nl)
    ps.temperature[: ps.n_inner] = spsolve(A.tocsc(), b)
    refresh_boundaries(ps)
    return compute_residuals(ps, nl)


def steady_temperature(spec: ProblemSpec, h_ratio: float = 1.3, tol: float = 1e-3,
                       max_steps: int = 200_000, initial: float | None = None,
                       dt_multiplier: float = 10.0):
    """Uniform-k steady state of ``spec``. Returns ``(ps, nl, result)``."""
    ps, nl = discretize(spec, h_ratio)
    t0 = min(spec.dirichlet_temperatures(), default=300.0) if initial is None else initial
    ps.temperature[:] = t0
    result = solve_steady(ps, nl, TimeStepPolicy(nl.kernel.smoothing_length, dt_multiplier), tol, max_steps)
    return ps, nl, result
