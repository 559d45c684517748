"""Balance-law residuals and covariance source terms.

The moment fields of the smoothed representation satisfy, for sigma > 0,

    d/dt rho + div(rho a)          = (sigma^2/2) Lap rho
    d/dt (rho u) + div(rho u a)    = (sigma^2/2) Lap(rho u) - I_u
    d/dt (rho a_i) + div(rho a_i a) = (sigma^2/2) Lap(rho a_i) - I_a_i

(all fields the sigma-smoothed ones), where the source terms are
covariance moments against the spatial kernel gradient:

    I_u   = sum_k integral (u - u_sigma)(a_k - a_sigma_k) dP/dx_k du
    I_a_i = sum_k integral (a_i - a_sigma_i)(a_k - a_sigma_k) dP/dx_k du
            - integral (da_i/dt)(t, u) P du.

The kernel gradient is available in closed form,

    dP/dx_k ~ (A_k(t, u0(y)) + y_k - x_k) / (sigma^2 t) * kernel,

so the I terms are plain quadratures; no finite differencing of P is
ever involved.  The signs above are the ones that close the identities;
with them the discrete residuals vanish at the order of the space-time
stencil.  In the vanishing-noise limit the same system without
diffusion and without I terms holds for the transported fields while
the solution stays classical.

Residuals are evaluated with second-order central differences in space
(stencil points leaving the box are masked out) and in time, one-sided
second-order at the time-window edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .characteristics import blow_up_time, eval_a_bar, eval_rho_bar, solve_implicit
from .errors import EmptyKernelSupport, NearBlowup
from .problem import ProblemSpec, displacement_components
from .representation import _kernel_pass, _table_for

__all__ = [
    "ResidualReport",
    "ItermRow",
    "eval_I_u_sigma",
    "eval_I_a_sigma",
    "eval_I_u_sigma_assembled",
    "residual_sigma_system",
    "residual_pressureless",
    "attach_ratios",
    "i_term_persistence",
]


@dataclass
class ResidualReport:
    """Aggregate residual of one balance equation at one resolution."""

    equation: str
    h: float
    dt: float
    max_residual: float
    l1_residual: float  # mean |residual| over the probe set
    ratio: float | None = None  # coarse/fine max ratio, filled on refinement


@dataclass(frozen=True)
class ItermRow:
    sigma: float
    i_u_sup: float
    i_a_sup: np.ndarray  # per component


def _prelude(spec: ProblemSpec, t: float, x):
    """Shared kernel pass: selected nodes, weights, moments at (t, x)."""
    if t <= 0:
        raise ValueError("I-term evaluation requires t > 0")
    table = _table_for(spec, t)
    idx, kw, norm = _kernel_pass(spec, t, x, table)
    wk = table.wrho[idx] * kw
    den = float(np.sum(wk))
    if den < spec.tol.denom_floor:
        raise EmptyKernelSupport(
            f"no kernel mass at t={t:g}, x={np.asarray(x).tolist()}"
        )
    u_s = float(np.sum(wk * table.u0v[idx]) / den)
    a_s = np.array([float(np.sum(wk * table.avals[idx, k]) / den)
                    for k in range(spec.n)])
    return table, idx, kw, norm, wk, u_s, a_s


def _grad_factor(spec: ProblemSpec, t: float, x, table, idx, a_s) -> np.ndarray:
    """Per-node value of sum_k (a_k - a_sigma_k)(A_k + y_k - x_k)/(sigma^2 t)."""
    x = np.asarray(x, dtype=float).reshape(spec.n)
    s2t = spec.sigma * spec.sigma * t
    fac = np.zeros(len(idx))
    for k in range(spec.n):
        fac += (table.avals[idx, k] - a_s[k]) * (table.centers[idx, k] - x[k])
    return fac / s2t


def eval_I_u_sigma(spec: ProblemSpec, t: float, x) -> float:
    """Covariance source of the u-moment balance, by direct quadrature."""
    table, idx, kw, norm, wk, u_s, a_s = _prelude(spec, t, x)
    fac = _grad_factor(spec, t, x, table, idx, a_s)
    return float(norm * np.sum(wk * (table.u0v[idx] - u_s) * fac))


def eval_I_a_sigma(spec: ProblemSpec, t: float, x) -> np.ndarray:
    """Covariance sources of the velocity-moment balances, length n.

    The gradient covariance is the same structure as the u source; when
    a component of the velocity depends on t explicitly, its
    time-derivative moment is subtracted so the momentum identity still
    closes.  Both pieces vanish identically for velocities that are
    constant in u and t respectively.
    """
    table, idx, kw, norm, wk, u_s, a_s = _prelude(spec, t, x)
    fac = _grad_factor(spec, t, x, table, idx, a_s)
    out = np.empty(spec.n)
    dt_vals = None
    for i in range(spec.n):
        grad_term = norm * np.sum(wk * (table.avals[idx, i] - a_s[i]) * fac)
        if spec.velocity.time_dependent[i]:
            if dt_vals is None:
                dt_vals = spec.velocity.dt_values(t, table.u0v[idx])
            grad_term -= norm * np.sum(wk * dt_vals[i])
        out[i] = grad_term
    return out


def eval_I_u_sigma_assembled(spec: ProblemSpec, t: float, x) -> float:
    """I_u rebuilt from raw gradient moments of 1, u, a_k and u a_k.

    Algebraically identical to :func:`eval_I_u_sigma`; kept as an
    independent assembly for cross-checks.
    """
    table, idx, kw, norm, wk, u_s, a_s = _prelude(spec, t, x)
    x = np.asarray(x, dtype=float).reshape(spec.n)
    s2t = spec.sigma * spec.sigma * t
    total = 0.0
    for k in range(spec.n):
        gk = (table.centers[idx, k] - x[k]) / s2t
        m_one = norm * np.sum(wk * gk)
        m_u = norm * np.sum(wk * table.u0v[idx] * gk)
        m_a = norm * np.sum(wk * table.avals[idx, k] * gk)
        m_ua = norm * np.sum(wk * table.u0v[idx] * table.avals[idx, k] * gk)
        total += m_ua - u_s * m_a - a_s[k] * m_u + u_s * a_s[k] * m_one
    return float(total)


def _fields_sigma(spec: ProblemSpec, t: float, x):
    """(rho, u, a) of the smoothed representation in one kernel pass."""
    if t == 0:
        u0x = spec.init.u0_point(x)
        a0 = np.array([float(v) for v in spec.velocity.a_values(0.0, u0x)])
        return spec.init.rho0_point(x), u0x, a0
    table = _table_for(spec, t)
    idx, kw, norm = _kernel_pass(spec, t, x, table)
    wk = table.wrho[idx] * kw
    den = float(np.sum(wk))
    if den < spec.tol.denom_floor:
        raise EmptyKernelSupport(
            f"no kernel mass at t={t:g}, x={np.asarray(x).tolist()}"
        )
    u = float(np.sum(wk * table.u0v[idx]) / den)
    a = np.array([float(np.sum(wk * table.avals[idx, k]) / den)
                  for k in range(spec.n)])
    return float(norm * den), u, a


def _fields_bar(spec: ProblemSpec, t: float, x):
    """(rho, u, a) of the transported (classical) solution."""
    u = solve_implicit(spec, t, x)
    a = eval_a_bar(spec, t, x)
    rho = eval_rho_bar(spec, t, x)
    return rho, u, a


def _probe_points(spec: ProblemSpec, inset: float) -> np.ndarray:
    """Box grid points at least ``inset`` away from every box face."""
    axes = [np.linspace(lo, hi, g) for (lo, hi), g in zip(spec.box, spec.space_grid)]
    kept = [ax[(ax - inset >= lo) & (ax + inset <= hi)]
            for ax, (lo, hi) in zip(axes, spec.box)]
    if any(len(k) == 0 for k in kept):
        raise ValueError(
            f"probe inset {inset:g} leaves no interior grid points")
    mesh = np.meshgrid(*kept, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _time_stencil(values: np.ndarray, j: int, J: int, dt: float) -> np.ndarray:
    """Second-order time derivative along axis 0 at index j."""
    if 0 < j < J:
        return (values[j + 1] - values[j - 1]) / (2.0 * dt)
    if j == 0:
        return (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt)
    return (3.0 * values[J] - 4.0 * values[J - 1] + values[J - 2]) / (2.0 * dt)


def _residual_core(spec: ProblemSpec, t_window, resolution, fields,
                   diffusion: bool, iterms: bool, tag: str,
                   _source_offset: float = 0.0) -> list["ResidualReport"]:
    t0, t1 = float(t_window[0]), float(t_window[1])
    h, dt = float(resolution[0]), float(resolution[1])
    if not t1 > t0:
        raise ValueError("time window must satisfy t0 < t1")
    if h <= 0 or dt <= 0:
        raise ValueError("resolution entries must be positive")
    J = int(round((t1 - t0) / dt))
    if J < 2:
        raise ValueError("time window too short for the time stencil")
    dt_eff = (t1 - t0) / J
    times = [t0 + j * dt_eff for j in range(J + 1)]

    # Smoothed fields near a box face see the truncation of rho0, where
    # the stencil error is dominated by the edge transient rather than
    # the equations under test; probes stay clear of the transported
    # support edge (flow displacement plus kernel reach).
    inset = h
    if diffusion:
        us = np.linspace(spec.u_range[0], spec.u_range[1], 201)
        disp = displacement_components(spec, t1, us)
        reach = max(float(np.max(np.abs(d))) for d in disp)
        inset += reach + spec.tol.kernel_cutoff * spec.sigma * math.sqrt(t1)
    probes = _probe_points(spec, inset)
    P = len(probes)
    n = spec.n
    O = 1 + 2 * n  # offsets: center, then (-h, +h) per axis
    offsets = np.zeros((O, n))
    for k in range(n):
        offsets[1 + 2 * k, k] = -h
        offsets[2 + 2 * k, k] = +h

    rho = np.empty((J + 1, P, O))
    u = np.empty((J + 1, P, O))
    a = np.empty((J + 1, P, O, n))
    for j, tj in enumerate(times):
        for p in range(P):
            for o in range(O):
                xpo = probes[p] + offsets[o]
                rho[j, p, o], u[j, p, o], a[j, p, o] = fields(spec, tj, xpo)

    if iterms:
        I_u = np.empty((J + 1, P))
        I_a = np.empty((J + 1, P, n))
        for j, tj in enumerate(times):
            for p in range(P):
                I_u[j, p] = eval_I_u_sigma(spec, tj, probes[p])
                I_a[j, p] = eval_I_a_sigma(spec, tj, probes[p])

    rho_u = rho * u
    rho_a = rho[..., None] * a
    half_s2 = 0.5 * spec.sigma * spec.sigma

    def flux_div(prod: np.ndarray, j: int) -> np.ndarray:
        # prod has shape (J+1, P, O, n): component k differentiated in x_k
        out = np.zeros(P)
        for k in range(n):
            out += (prod[j, :, 2 + 2 * k, k] - prod[j, :, 1 + 2 * k, k]) / (2.0 * h)
        return out

    def laplacian(f: np.ndarray, j: int) -> np.ndarray:
        out = np.zeros(P)
        for k in range(n):
            out += (f[j, :, 2 + 2 * k] - 2.0 * f[j, :, 0] + f[j, :, 1 + 2 * k]) / (h * h)
        return out

    R_mass = np.empty((J + 1, P))
    R_u = np.empty((J + 1, P))
    R_a = np.empty((J + 1, P, n))
    for j in range(J + 1):
        R_mass[j] = _time_stencil(rho[:, :, 0], j, J, dt_eff) + flux_div(rho_a, j)
        R_u[j] = _time_stencil(rho_u[:, :, 0], j, J, dt_eff) \
            + flux_div(rho_u[..., None] * a, j)
        if diffusion:
            R_mass[j] -= half_s2 * laplacian(rho, j)
            R_u[j] -= half_s2 * laplacian(rho_u, j)
        if iterms:
            R_u[j] += I_u[j]
        for i in range(n):
            R_a[j, :, i] = _time_stencil(rho_a[:, :, 0, i], j, J, dt_eff) \
                + flux_div(rho_a[..., i, None] * a, j)
            if diffusion:
                R_a[j, :, i] -= half_s2 * laplacian(rho_a[..., i], j)
            if iterms:
                R_a[j, :, i] += I_a[j, :, i]

    R_mass += _source_offset
    R_u += _source_offset
    R_a += _source_offset

    def report(name: str, R: np.ndarray) -> ResidualReport:
        return ResidualReport(equation=name, h=h, dt=dt_eff,
                              max_residual=float(np.max(np.abs(R))),
                              l1_residual=float(np.mean(np.abs(R))))

    out = [report(f"mass_{tag}", R_mass), report(f"momentum_u_{tag}", R_u)]
    for i in range(n):
        out.append(report(f"momentum_a_{tag}_{i + 1}", R_a[:, :, i]))
    return out


def residual_sigma_system(spec: ProblemSpec, t_window, resolution,
                          _source_offset: float = 0.0) -> list[ResidualReport]:
    """Discrete residuals of the smoothed balance system on a window.

    ``t_window`` is (t0, t1) with t0 > 0; ``resolution`` is (h, dt).
    Halving both should shrink the max residuals by about 4 while the
    window stays inside the smooth regime of the quadrature fields.
    ``_source_offset`` shifts every assembled residual by a constant and
    exists for stencil self-tests only.
    """
    if not t_window[0] > 0:
        raise ValueError("sigma-system window requires t0 > 0")
    return _residual_core(spec, t_window, resolution, _fields_sigma,
                          diffusion=True, iterms=True, tag="sigma",
                          _source_offset=_source_offset)


def residual_pressureless(spec: ProblemSpec, t_window, resolution,
                          _source_offset: float = 0.0) -> list[ResidualReport]:
    """Discrete residuals of the limit system on the transported fields.

    Requires the window to sit inside [0, 0.9 t*]; beyond that the
    classical fields are about to fold and the check is meaningless.
    """
    t_star = blow_up_time(spec).t_star
    if t_window[1] > 0.9 * t_star:
        raise NearBlowup(
            f"window end {t_window[1]:g} exceeds 0.9 * t_star = {0.9 * t_star:g}"
        )
    return _residual_core(spec, t_window, resolution, _fields_bar,
                          diffusion=False, iterms=False, tag="bar",
                          _source_offset=_source_offset)


def attach_ratios(coarse: list[ResidualReport],
                  fine: list[ResidualReport]) -> list[ResidualReport]:
    """Fill the refinement-ratio field of the finer reports in place."""
    by_eq = {r.equation: r for r in coarse}
    for r in fine:
        c = by_eq.get(r.equation)
        if c is not None and r.max_residual > 0:
            r.ratio = c.max_residual / r.max_residual
    return fine


def i_term_persistence(spec: ProblemSpec, sigmas, t: float) -> list[ItermRow]:
    """Sup norms of the I terms over the box grid for a noise ladder.

    Below the blow-up time the sources shrink with sigma; past it they
    level off near the shock instead of vanishing.  That contrast is the
    point of this probe, so it accepts any positive strictly decreasing
    ladder and any t > 0.
    """
    sig = [float(s) for s in sigmas]
    if not sig or any(s <= 0 for s in sig):
        raise ValueError("sigmas must be positive")
    if any(b >= a for a, b in zip(sig, sig[1:])):
        raise ValueError("sigmas must be strictly decreasing")
    if t <= 0:
        raise ValueError("i_term_persistence requires t > 0")
    axes = [np.linspace(lo, hi, g) for (lo, hi), g in zip(spec.box, spec.space_grid)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    rows = []
    for s in sig:
        sp = spec.with_sigma(s)
        iu_max = 0.0
        ia_max = np.zeros(spec.n)
        for x in pts:
            iu_max = max(iu_max, abs(eval_I_u_sigma(sp, t, x)))
            ia_max = np.maximum(ia_max, np.abs(eval_I_a_sigma(sp, t, x)))
        rows.append(ItermRow(sigma=s, i_u_sup=iu_max, i_a_sup=ia_max))
    return rows
