"""Acceptance suite: one test per shipped claim, tolerances pinned.

Each test is a single pass/fail check of one end-to-end property of the
solver stack at desk scale, with the tolerance recorded next to the
assertion.  Oracles are closed forms or the characteristics solver;
nothing here depends on stored reference files.
"""

import json
import math
import time

import numpy as np
import pytest

from charstoch import (
    attach_ratios,
    blow_up_time,
    estimate_fields,
    eval_I_u_sigma,
    eval_rho_sigma,
    eval_u_sigma,
    evolve_exact,
    gradient_exact,
    integrate_rho0,
    integrate_rho_sigma,
    load_problem,
    residual_pressureless,
    residual_sigma_system,
    sample_initial,
    solve_implicit,
)

SIGMA_LADDER = (0.2, 0.1, 0.05)


def make(**overrides):
    cfg = {
        "n": 1,
        "a": ["u"],
        "u0": "sin(x1)",
        "rho0": "1",
        "sigma": 0.1,
        "box": [[-2 * math.pi, 2 * math.pi]],
        "space_grid": [41],
        "time_points": [0.25, 0.5, 0.75],
        "rng_seed": 42,
    }
    cfg.update(overrides)
    return load_problem(json.dumps(cfg))


@pytest.fixture(scope="module")
def burgers():
    return make()


def test_01_small_noise_limit_recovers_classical_solution(burgers):
    """u_sigma -> u along sigma = 0.2, 0.1, 0.05; final error <= 0.05."""
    started = time.monotonic()
    grid = np.linspace(-math.pi, math.pi, 41)[:, None]
    t = 0.5
    ref = [solve_implicit(burgers, t, x) for x in grid]
    errs = []
    for s in SIGMA_LADDER:
        sp = burgers.with_sigma(s)
        errs.append(max(abs(eval_u_sigma(sp, t, x) - r)
                        for x, r in zip(grid, ref)))
    assert errs[0] > errs[1] > errs[2], f"not decreasing: {errs}"
    assert errs[2] <= 0.05, f"final error {errs[2]:.4f} > 0.05"
    assert time.monotonic() - started <= 60.0


def test_02_blow_up_times(burgers):
    started = time.monotonic()
    rep = blow_up_time(burgers)
    assert rep.t_star == pytest.approx(1.0, abs=1e-3)
    assert time.monotonic() - started <= 5.0

    started = time.monotonic()
    rep = blow_up_time(make(u0="exp(-x1^2)", box=[[-3.0, 3.0]]))
    assert rep.t_star == pytest.approx(1.16582, abs=1e-3)  # sqrt(e/2)
    assert rep.t_star == pytest.approx(math.sqrt(math.e / 2.0), abs=1e-6)
    assert time.monotonic() - started <= 5.0

    started = time.monotonic()
    rep = blow_up_time(make(u0="tanh(x1)", box=[[-4.0, 4.0]]))
    assert math.isinf(rep.t_star)
    assert time.monotonic() - started <= 5.0


def test_03_gaussian_ratio_closed_form():
    """Zero drift, Gaussian profile: u_sigma(t,0) = (1+2 s^2 t)^(-1/2)."""
    spec = make(a=["0"], u0="exp(-x1^2)", rho0="1", box=[[-8.0, 8.0]],
                space_grid=[17], time_points=[0.5])
    pairs = [(1.0, 0.5), (0.5, 2.0), (0.5, 0.5), (0.2, 1.0), (0.1, 2.0)]
    for s, t in pairs:
        want = (1.0 + 2.0 * s * s * t) ** -0.5
        got = eval_u_sigma(spec.with_sigma(s), t, np.array([0.0]))
        assert got == pytest.approx(want, abs=1e-6), (s, t)
    # the sigma^2 t = 0.5 pair lands on 1/sqrt(2)
    got = eval_u_sigma(spec.with_sigma(1.0), 0.5, np.array([0.0]))
    assert got == pytest.approx(0.7071068, abs=1e-6)


def test_04_mass_conservation(burgers):
    m0 = integrate_rho0(burgers)
    for t in (0.25, 0.5, 0.75):
        m = integrate_rho_sigma(burgers, t)
        rel = abs(m - m0) / m0
        assert rel <= 1e-3, f"t={t}: relative mass defect {rel:.2e}"


def test_05_particles_match_quadrature_fields(burgers):
    started = time.monotonic()
    t, bandwidth = 0.5, 0.02
    ens = evolve_exact(sample_initial(burgers, 1_000_000), burgers, t)
    grid = np.linspace(-2 * math.pi, 2 * math.pi, 41)[:, None]
    est = estimate_fields(ens, burgers, grid, bandwidth=bandwidth)
    rho_q = np.array([eval_rho_sigma(burgers, t, x) for x in grid])
    u_q = np.array([eval_u_sigma(burgers, t, x) for x in grid])
    dx = float(grid[1, 0] - grid[0, 0])
    l1 = float(np.sum(np.abs(est.rho_hat - rho_q)) * dx)
    mass = integrate_rho0(burgers)
    assert l1 <= 0.02 * mass, f"L1 distance {l1:.4f} > 2% of mass {mass:.4f}"
    assert float(np.max(np.abs(est.u_hat - u_q))) <= 0.03
    # identical seed, identical bytes
    again = evolve_exact(sample_initial(burgers, 1_000_000), burgers, t)
    np.testing.assert_array_equal(ens.X, again.X)
    assert time.monotonic() - started <= 120.0


def test_06_smoothed_balance_system_residuals(burgers):
    coarse = residual_sigma_system(burgers, (0.3, 0.5), (0.04, 0.016))
    fine = residual_sigma_system(burgers, (0.3, 0.5), (0.02, 0.008))
    attach_ratios(coarse, fine)
    for r in fine:
        assert 2.8 <= r.ratio <= 5.2, f"{r.equation}: ratio {r.ratio:.2f}"
        assert r.max_residual <= 1e-2, \
            f"{r.equation}: max {r.max_residual:.3e}"


def test_07_pressureless_limit_residuals(burgers):
    coarse = residual_pressureless(burgers, (0.2, 0.4), (0.04, 0.016))
    fine = residual_pressureless(burgers, (0.2, 0.4), (0.02, 0.008))
    attach_ratios(coarse, fine)
    for r in fine:
        assert 2.8 <= r.ratio <= 5.2, f"{r.equation}: ratio {r.ratio:.2f}"


def test_08_exact_gradient_vs_finite_differences(burgers):
    t_star = blow_up_time(burgers).t_star
    rng = np.random.default_rng(2024)
    h = 1e-5
    for _ in range(20):
        t = float(rng.uniform(0.05, 0.8 * t_star))
        x = float(rng.uniform(-5.0, 5.0))
        g = gradient_exact(burgers, t, np.array([x]))[0]
        fd = (solve_implicit(burgers, t, np.array([x + h]))
              - solve_implicit(burgers, t, np.array([x - h]))) / (2 * h)
        rel = abs(g - fd) / max(abs(fd), 1e-12)
        assert rel <= 1e-4, f"(t={t:.3f}, x={x:.3f}): rel err {rel:.2e}"


def test_09_limit_forgets_the_reference_density(burgers):
    """u_sigma from rho0 = 1 and rho0 = exp(-x^2/4) agree as sigma -> 0."""
    other = make(rho0="exp(-x1^2/4)")
    grid = np.linspace(-math.pi, math.pi, 41)[:, None]
    t = 0.5
    gaps = []
    for s in SIGMA_LADDER:
        a, b = burgers.with_sigma(s), other.with_sigma(s)
        gaps.append(max(abs(eval_u_sigma(a, t, x) - eval_u_sigma(b, t, x))
                        for x in grid))
    assert gaps[0] > gaps[1] > gaps[2], f"not decreasing: {gaps}"
    assert gaps[2] <= 0.02, f"final gap {gaps[2]:.4f} > 0.02"


def test_10_covariance_sources_persist_past_blow_up(burgers):
    grid = np.linspace(-2 * math.pi, 2 * math.pi, 41)[:, None]

    def sup_iu(sigma, t):
        sp = burgers.with_sigma(sigma)
        return max(abs(eval_I_u_sigma(sp, t, x)) for x in grid)

    before = [sup_iu(s, 0.5) for s in SIGMA_LADDER]
    assert before[0] > before[1] > before[2], \
        f"pre-blow-up sources not decreasing: {before}"
    after_small, after_big = sup_iu(0.05, 1.5), sup_iu(0.1, 1.5)
    ratio = after_small / after_big
    assert ratio > 0.5, f"persistence ratio {ratio:.3f} <= 0.5"


def test_11_two_dimensional_smoke():
    started = time.monotonic()
    cfg = {
        "n": 2, "a": ["u", "u"], "u0": "exp(-x1^2-x2^2)", "rho0": "1",
        "sigma": 0.1, "box": [[-3.0, 3.0], [-3.0, 3.0]],
        "space_grid": [11, 11], "time_points": [0.3], "rng_seed": 42,
    }
    spec = load_problem(json.dumps(cfg))
    assert blow_up_time(spec).t_star > 0.3
    ax = np.linspace(-3.0, 3.0, 11)
    pts = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    worst = max(abs(eval_u_sigma(spec, 0.3, x) - solve_implicit(spec, 0.3, x))
                for x in pts)
    assert worst <= 0.05, f"2D max error {worst:.4f} > 0.05"
    assert time.monotonic() - started <= 300.0
