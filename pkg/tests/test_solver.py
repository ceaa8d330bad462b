import numpy as np
import pytest

from condopt.particles import Role
from condopt.problems import (
    ADIABATIC,
    DIRICHLET,
    NEUMANN,
    BoundarySegment,
    ProblemSpec,
    UniformSource,
    builtin,
)
from condopt.solver import (
    TimeStepPolicy,
    _local_step,
    apply_adiabatic,
    apply_dirichlet,
    compute_residuals,
    conduction_rhs,
    discretize,
    implicit_local_step,
    neumann_volumetric,
    pair_coefficients,
    refresh_boundaries,
    relax,
    solve_steady,
    solve_steady_direct,
    solve_steady_explicit,
    strang_sweep,
)

from oracles import brute_residuals, random_system, temperature_step


def slab(n, right):
    segs = (BoundarySegment("left", 0.0, 1.0, DIRICHLET, 300.0), right)
    return discretize(ProblemSpec(segs, UniformSource(0.0), resolution=n))


def insulated(n, q=0.0):
    return discretize(ProblemSpec((), UniformSource(q), resolution=n))


def centerline(ps, n):
    row = slice(n * (n // 2), n * (n // 2) + n)
    return ps.positions[row, 0], ps.temperature[row]


# -- boundary treatment -------------------------------------------------------

def test_dirichlet_mirror_formula():
    ps, nl = discretize(builtin(1, resolution=10))
    w = np.flatnonzero(ps.role == Role.DIRICHLET)
    ps.temperature[: ps.n_inner] = 300.0
    apply_dirichlet(ps)
    np.testing.assert_allclose(ps.temperature[w], 300.0)
    ps.temperature[: ps.n_inner] = 310.0
    apply_dirichlet(ps)
    np.testing.assert_allclose(ps.temperature[w], 290.0)


def test_adiabatic_dummies_copy_partner():
    ps, nl = discretize(builtin(1, resolution=10))
    ps.temperature[: ps.n_inner] = 350.0
    apply_adiabatic(ps)
    w = np.flatnonzero(ps.role == Role.ADIABATIC)
    np.testing.assert_allclose(ps.temperature[w], 350.0)
    rng = np.random.default_rng(1)
    ps.temperature[: ps.n_inner] = rng.uniform(300, 400, ps.n_inner)
    apply_adiabatic(ps)
    np.testing.assert_array_equal(ps.temperature[w], ps.temperature[ps.mirror[w]])


def test_every_dummy_has_inner_partner():
    ps, _ = discretize(builtin(7, resolution=12))
    partners = ps.mirror[ps.n_inner:]
    assert np.all((partners >= 0) & (partners < ps.n_inner))


def test_dirichlet_slab_linear_profile():
    n = 20
    ps, nl = slab(n, BoundarySegment("right", 0.0, 1.0, DIRICHLET, 400.0))
    ps.temperature[:] = 350.0
    res = solve_steady(ps, nl, tol=1e-6, max_steps=200_000)
    assert res.converged
    x, T = ps.positions[: ps.n_inner, 0], ps.temperature[: ps.n_inner]
    assert np.max(np.abs(T - (300.0 + 100.0 * x))) < 0.01 * 100.0


def test_neumann_slab_profile():
    n, q = 40, 1000.0
    ps, nl = slab(n, BoundarySegment("right", 0.0, 1.0, NEUMANN, q))
    solve_steady_direct(ps, nl)
    x, T = centerline(ps, n)
    assert np.max(np.abs(T - (300.0 + q * x))) < 0.015 * q


def test_neumann_source_zero_without_flux():
    ps, nl = slab(10, BoundarySegment("right", 0.0, 1.0, NEUMANN, 0.0))
    assert np.all(neumann_volumetric(ps, nl, 1) == 0.0)


def test_neumann_source_compact():
    n = 20
    ps, nl = slab(n, BoundarySegment("right", 0.0, 1.0, NEUMANN, 500.0))
    q = neumann_volumetric(ps, nl, 1)
    x = ps.positions[: ps.n_inner, 0]
    far = (1.0 - x) > nl.kernel.support_radius
    assert np.all(q[far] == 0.0)
    assert np.all(q >= 0.0) and q.sum() > 0.0


def pair_fluxes(ps, nl):
    c = pair_coefficients(ps, nl)
    owner = np.repeat(np.arange(ps.n_inner), np.diff(nl.offsets))
    j = nl.indices
    return j, c * (ps.temperature[owner] - ps.temperature[j]) * ps.volume[owner]


def test_insulated_box_has_no_wall_flux():
    n = 20
    segs = (BoundarySegment("bottom", 0.45, 0.55, DIRICHLET, 300.0),)
    ps, nl = discretize(ProblemSpec(segs, UniformSource(1000.0), resolution=n))
    solve_steady_direct(ps, nl)
    j, flux = pair_fluxes(ps, nl)
    power = float(np.sum(ps.source_rate[: ps.n_inner] * ps.volume[: ps.n_inner]))
    dummy = j >= ps.n_inner
    # the three insulated edges (everything above the sink edge's dummy band)
    walls = dummy & (ps.positions[j, 1] > 0)
    assert abs(flux[walls].sum()) < 1e-9 * power
    assert -flux[dummy].sum() == pytest.approx(power, rel=1e-9)


def test_steady_conservation_problem1():
    errors = []
    for n in (30, 60):
        ps, nl = discretize(builtin(1, resolution=n))
        solve_steady_direct(ps, nl)
        j, flux = pair_fluxes(ps, nl)
        power = float(np.sum(ps.source_rate[: ps.n_inner] * ps.volume[: ps.n_inner]))
        dummy = j >= ps.n_inner
        assert -flux[dummy].sum() == pytest.approx(power, rel=1e-9)
        # pairs reaching sink dummies also trade heat with insulated dummies
        # next to the sink ends; that share shrinks with resolution
        sink = dummy & (ps.role[j] == Role.DIRICHLET)
        errors.append(abs(-flux[sink].sum() - power) / power)
    assert errors[0] < 0.06 and errors[1] < errors[0]


def test_gradient_along_adiabatic_wall_has_no_normal_flux():
    n = 20
    ps, nl = insulated(n)
    ps.temperature[: ps.n_inner] = 5.0 * ps.positions[: ps.n_inner, 0]
    refresh_boundaries(ps)
    c = pair_coefficients(ps, nl)
    owner = np.repeat(np.arange(ps.n_inner), np.diff(nl.offsets))
    j = nl.indices
    below = (j >= ps.n_inner) & (ps.positions[j, 1] < 0)
    x = ps.positions[owner, 0]
    inside = below & (x > nl.kernel.support_radius) & (x < 1 - nl.kernel.support_radius)
    flux = c * (ps.temperature[owner] - ps.temperature[j])
    assert abs(flux[inside].sum()) < 1e-9 * np.abs(flux[inside]).sum()


# -- operator -----------------------------------------------------------------

def test_rhs_zero_for_uniform_field():
    ps, nl = insulated(12)
    ps.temperature[:] = 321.0
    assert all(conduction_rhs(ps, nl, i) == 0.0 for i in range(ps.n_inner))


def test_rhs_zero_for_linear_field():
    n = 20
    ps, nl = insulated(n)
    ps.temperature[:] = 3.0 * ps.positions[:, 0] - 2.0 * ps.positions[:, 1]
    i = (n // 2) * n + n // 2
    assert abs(conduction_rhs(ps, nl, i)) < 1e-9


def test_rhs_laplacian_of_quadratic():
    n = 20
    ps, nl = insulated(n)
    ps.temperature[:] = ps.positions[:, 0] ** 2
    for i in ((n // 2) * n + n // 2, 7 * n + 5):
        assert conduction_rhs(ps, nl, i) == pytest.approx(2.0, rel=0.05)


def test_uniform_field_residual_equals_source():
    ps, nl = insulated(10, q=1000.0)
    ps.temperature[:] = 400.0
    stats = compute_residuals(ps, nl)
    np.testing.assert_allclose(stats.per_particle, 1000.0)
    assert stats.mean_abs == pytest.approx(1000.0) and stats.max_abs == pytest.approx(1000.0)


def test_residuals_match_brute_force():
    ps, nl = discretize(builtin(5, resolution=14))
    rng = np.random.default_rng(2)
    ps.temperature[: ps.n_inner] = rng.uniform(280, 400, ps.n_inner)
    ps.conductivity[: ps.n_inner] = rng.uniform(0.5, 8, ps.n_inner)
    refresh_boundaries(ps)
    stats = compute_residuals(ps, nl)
    ref = brute_residuals(ps)
    np.testing.assert_allclose(stats.per_particle, ref, rtol=1e-10, atol=1e-8)
    a = np.abs(ref)
    assert stats.max_abs == pytest.approx(a.max()) and stats.mean_abs == pytest.approx(a.mean())


def test_residual_shift_only_moves_own_term():
    ps, nl = insulated(10)
    ps.temperature[:] = 300.0
    beta = 0.5
    e0 = compute_residuals(ps, nl).per_particle
    e1 = compute_residuals(ps, nl, shift=beta).per_particle
    c = pair_coefficients(ps, nl)
    owner = np.repeat(np.arange(ps.n_inner), np.diff(nl.offsets))
    expected = -beta * np.bincount(owner, c, ps.n_inner)
    np.testing.assert_allclose(e1 - e0, expected, rtol=1e-12)
    assert np.all(e1 - e0 > 0)


# -- local implicit step ------------------------------------------------------

def test_isolated_particle_is_explicit_euler():
    u = np.array([300.0])
    c = np.zeros(0)
    eta = _local_step(0, u, c, np.array([50.0]), np.array([0, 0]), np.zeros(0, np.int64), 1, 0.1)
    assert eta == pytest.approx(-5.0)
    assert u[0] == pytest.approx(305.0)


def test_zero_residual_means_no_change():
    ps, nl = insulated(10)
    ps.temperature[:] = 300.0
    before = ps.temperature.copy()
    step = implicit_local_step(ps, nl, 33, 0.01)
    assert step.residual == 0.0 and step.increment_i == 0.0
    np.testing.assert_array_equal(ps.temperature, before)


def test_local_step_zeroes_local_residual():
    ps, nl = discretize(builtin(2, resolution=12))
    rng = np.random.default_rng(4)
    ps.temperature[: ps.n_inner] = rng.uniform(280, 400, ps.n_inner)
    refresh_boundaries(ps)
    i = 30
    s = nl.of(i)
    step = implicit_local_step(ps, nl, i, 1e-3)
    B = step.coefficients
    # increments eta * grad E, dummies included
    dT_i = step.learning_rate * (B.sum() - 1.0)
    dT_j = -step.learning_rate * B
    after = step.residual - ((B.sum() - 1.0) * dT_i - np.sum(B * dT_j))
    assert abs(after) < 1e-9 * abs(step.residual)
    assert step.increment_i == pytest.approx(dT_i)
    inner = nl.indices[s] < ps.n_inner
    np.testing.assert_allclose(step.increments_j[inner], dT_j[inner])
    assert np.all(step.increments_j[~inner] == 0.0)


def test_local_step_matches_oracle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        s = random_system(rng)
        k, T, Q = s["k"], s["T"].copy(), s["Q"]
        c = np.empty(len(s["indices"]))
        for i in range(s["n_inner"]):
            for p in range(s["offsets"][i], s["offsets"][i + 1]):
                j = s["indices"][p]
                c[p] = (k[i] + (k[j] if j < s["n_inner"] else k[i])) * s["factor"][p]
        i = int(rng.integers(s["n_inner"]))
        sl = slice(s["offsets"][i], s["offsets"][i + 1])
        ref = temperature_step(T, k, s["factor"][sl], Q, i, s["indices"][sl], s["n_inner"], s["dt"])
        _local_step(i, T, c, Q, s["offsets"], s["indices"], s["n_inner"], s["dt"])
        scale = np.max(np.abs(ref - s["T"])) or 1.0
        assert np.max(np.abs(T - ref)) <= 1e-12 * max(scale, 1e-300) + 1e-12 * np.abs(ref).max() * 1e-3


def test_dt_must_be_positive():
    ps, nl = insulated(10)
    with pytest.raises(ValueError):
        implicit_local_step(ps, nl, 0, 0.0)
    with pytest.raises(ValueError):
        strang_sweep(ps, nl, -1.0)


# -- sweeps and steady solves -------------------------------------------------

def test_time_step_policy():
    p = TimeStepPolicy(0.013)
    assert p.diffusive_dt(2.0) == pytest.approx(0.5 * 0.013 ** 2 / 2.0)
    assert p.step(2.0) == pytest.approx(10 * p.diffusive_dt(2.0))


def test_steady_field_is_fixed_point():
    ps, nl = discretize(builtin(1, resolution=16))
    solve_steady_direct(ps, nl)
    before = ps.temperature.copy()
    strang_sweep(ps, nl, TimeStepPolicy(nl.kernel.smoothing_length).step(1.0))
    np.testing.assert_allclose(ps.temperature, before, rtol=0, atol=1e-9)


def test_insulated_uniform_heating_small_step():
    # for sum |B| << 1 the sweep reduces to forward Euler on the source
    ps, nl = insulated(10, q=100.0)
    ps.temperature[:] = 300.0
    dt = 1e-7
    strang_sweep(ps, nl, dt)
    rise = ps.temperature[: ps.n_inner] - 300.0
    np.testing.assert_allclose(rise, 100.0 * dt, rtol=1e-3)


def test_insulated_uniform_heating_large_step_is_damped():
    ps, nl = insulated(10, q=100.0)
    ps.temperature[:] = 300.0
    strang_sweep(ps, nl, 0.5)
    rise = ps.average_temperature() - 300.0
    assert 0.0 < rise < 100.0 * 0.5


@pytest.mark.parametrize("seed", range(20))
def test_one_sweep_reduces_mean_residual(seed):
    ps, nl = discretize(builtin(1, resolution=20))
    rng = np.random.default_rng(seed)
    ps.temperature[: ps.n_inner] = rng.uniform(300, 700, ps.n_inner)
    refresh_boundaries(ps)
    before = compute_residuals(ps, nl).mean_abs
    strang_sweep(ps, nl, TimeStepPolicy(nl.kernel.smoothing_length).step(1.0))
    assert compute_residuals(ps, nl).mean_abs < before


def test_relax_checks_before_sweeping():
    ps, nl = discretize(builtin(1, resolution=12))
    solve_steady_direct(ps, nl)
    stats, steps = relax(ps, nl, 1e-3, 100, tol_max=1.0)
    assert steps == 0 and stats.max_abs < 1.0


def test_sweep_direct_and_explicit_agree():
    n = 20
    spec = builtin(1, resolution=n)
    direct, nl = discretize(spec)
    solve_steady_direct(direct, nl)

    swept, _ = discretize(spec)
    swept.temperature[:] = 300.0
    res = solve_steady(swept, nl, tol=1e-6, max_steps=400_000)
    assert res.converged

    explicit, _ = discretize(spec)
    explicit.temperature[:] = 300.0
    res_e = solve_steady_explicit(explicit, nl, tol=1e-6)
    assert res_e.converged

    inner = slice(0, direct.n_inner)
    np.testing.assert_allclose(swept.temperature[inner], explicit.temperature[inner], rtol=1e-3)
    np.testing.assert_allclose(swept.temperature[inner], direct.temperature[inner], rtol=1e-6)


def test_steady_solve_reports_non_convergence():
    ps, nl = discretize(builtin(1, resolution=12))
    ps.temperature[:] = 300.0
    res = solve_steady(ps, nl, max_steps=3)
    assert not res.converged and res.steps == 3


def test_steady_solve_rejects_bad_tolerance():
    ps, nl = discretize(builtin(1, resolution=12))
    with pytest.raises(ValueError):
        solve_steady(ps, nl, tol=0.0)


def test_direct_solve_needs_fixed_temperature():
    ps, nl = insulated(10, q=10.0)
    with pytest.raises(ValueError):
        solve_steady_direct(ps, nl)


def test_steady_solve_is_deterministic():
    out = []
    for _ in range(2):
        ps, nl = discretize(builtin(4, resolution=16))
        ps.temperature[:] = 280.0
        solve_steady(ps, nl, max_steps=500)
        out.append(ps.temperature.copy())
    np.testing.assert_array_equal(out[0], out[1])


def test_threaded_sweep_reaches_same_steady_state():
    spec = builtin(1, resolution=20)
    ps, nl = discretize(spec)
    ps.temperature[:] = 300.0
    res = solve_steady(ps, nl, tol=1e-6, max_steps=400_000, threads=2)
    assert res.converged
    ref, _ = discretize(spec)
    solve_steady_direct(ref, nl)
    np.testing.assert_allclose(ps.temperature[: ps.n_inner], ref.temperature[: ps.n_inner], rtol=1e-6)
