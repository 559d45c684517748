"""Quadrature evaluation of the smoothed moment fields.

For sigma > 0 and t > 0 the law of the stochastically perturbed
characteristics has the explicit density

    p(t, x, y) = (2 pi t sigma^2)^(-n/2)
                 * rho0(y) * exp(-|A(t, u0(y)) + y - x|^2 / (2 sigma^2 t)),

carrying the initial value u0(y).  Every field of interest is a
y-integral against this density over the problem box:

    rho_sigma(t, x) = integral p dy                      (density)
    u_sigma(t, x)   = integral u0(y) p dy / rho_sigma    (profile)
    a_sigma(t, x)   = integral a(t, u0(y)) p dy / rho_sigma

Integrals use tensor-product composite Gauss-Legendre rules whose panel
width tracks the kernel width sigma*sqrt(t), truncated to the ball
|A + y - x| <= kernel_cutoff * sigma * sqrt(t).  Per-node data that does
not depend on x (u0, rho0, displacement, velocity) is precomputed once
per (problem, t) and shared by every evaluation point, so a full grid
costs one table build plus one masked scan per point.  Cost scales like
sigma^(-n): halving sigma doubles the node count per axis.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateKernel, EmptyKernelSupport
from .problem import ProblemSpec, displacement_components
from .quadrature import panel_count, panel_rule

__all__ = [
    "KernelContext",
    "QuadratureGrid",
    "FieldGrid",
    "SweepEntry",
    "kernel_context",
    "kernel_weight",
    "quadrature_grid",
    "eval_p_moment",
    "eval_rho_sigma",
    "eval_u_sigma",
    "eval_a_sigma",
    "eval_field_grid",
    "sigma_sweep",
    "integrate_rho0",
    "integrate_rho_sigma",
]

logger = logging.getLogger(__name__)

# exp underflows to exactly 0.0 past this exponent magnitude
_UNDERFLOW = 745.0

# total quadrature nodes a table may hold, across all axes
_NODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class KernelContext:
    """Geometry of the Gaussian kernel at one evaluation point."""

    n: int
    t: float
    x: np.ndarray
    sigma: float
    cutoff_radius: float  # kernel_cutoff * sigma * sqrt(t)
    norm_const: float     # (2 pi t sigma^2)^(-n/2)


def kernel_context(spec: ProblemSpec, t: float, x) -> KernelContext:
    """Build the kernel context; the kernel must have positive width."""
    x = np.asarray(x, dtype=float).reshape(spec.n)
    s2t = spec.sigma * spec.sigma * t
    if s2t < 1e-300:
        raise DegenerateKernel(
            f"sigma^2 * t = {s2t:.3e} is below the representable kernel width"
        )
    return KernelContext(
        n=spec.n,
        t=float(t),
        x=x,
        sigma=spec.sigma,
        cutoff_radius=spec.tol.kernel_cutoff * spec.sigma * math.sqrt(t),
        norm_const=(2.0 * math.pi * s2t) ** (-spec.n / 2.0),
    )


def kernel_weight(ctx: KernelContext, y, displacement) -> float:
    """Unnormalized Gaussian weight exp(-|A + y - x|^2 / (2 sigma^2 t)).

    Returns exactly 0.0 once the exponent magnitude exceeds 745, where
    exp would underflow anyway; no NaN, no subnormal dust.
    """
    y = np.asarray(y, dtype=float).reshape(ctx.n)
    d = np.asarray(displacement, dtype=float).reshape(ctx.n)
    s2t = ctx.sigma * ctx.sigma * ctx.t
    e = float(np.sum((d + y - ctx.x) ** 2)) / (2.0 * s2t)
    if e > _UNDERFLOW:
        return 0.0
    return math.exp(-e)


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product composite Gauss-Legendre rule over a box."""

    axis_nodes: tuple[np.ndarray, ...]
    axis_weights: tuple[np.ndarray, ...]

    @property
    def n(self) -> int:
        return len(self.axis_nodes)

    @cached_property
    def points(self) -> np.ndarray:
        """Flattened nodes, shape (M, n), C order."""
        mesh = np.meshgrid(*self.axis_nodes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def weights(self) -> np.ndarray:
        """Flattened tensor weights, shape (M,)."""
        mesh = np.meshgrid(*self.axis_weights, indexing="ij")
        out = np.ones(mesh[0].shape)
        for m in mesh:
            out = out * m
        return out.ravel()


def quadrature_grid(box, scale: float, *, nodes_per_panel: int = 8,
                    max_panels: int = 4096) -> QuadratureGrid:
    """Composite rule over ``box`` with panels at most ``scale`` wide."""
    nodes, weights = [], []
    for lo, hi in box:
        p = panel_count(hi - lo, scale, 16, max_panels)
        xs, ws = panel_rule(lo, hi, p, nodes_per_panel)
        nodes.append(xs)
        weights.append(ws)
    return QuadratureGrid(tuple(nodes), tuple(weights))


@dataclass
class _Table:
    """Per-(problem, t) node data shared across evaluation points."""

    grid: QuadratureGrid
    u0v: np.ndarray      # (M,)
    wrho: np.ndarray     # (M,) tensor weight * rho0
    centers: np.ndarray  # (M, n) node + displacement
    avals: np.ndarray    # (M, n) velocity at (t, u0(node))


_TABLE_CACHE: OrderedDict[tuple[str, float], _Table] = OrderedDict()
_TABLE_CACHE_MAX = 6


def _build_table(spec: ProblemSpec, t: float) -> _Table:
    scale = spec.sigma * math.sqrt(t)
    if scale * scale < 1e-300:
        raise DegenerateKernel(
            f"sigma^2 * t = {scale * scale:.3e} is below the representable "
            f"kernel width"
        )
    per_axis_nodes = int(_NODE_BUDGET ** (1.0 / spec.n))
    cap = max(16, min(spec.tol.max_panels, per_axis_nodes // spec.tol.nodes_per_panel))
    widths = [hi - lo for lo, hi in spec.box]
    if any(math.ceil(w / scale) > cap for w in widths):
        logger.warning(
            "quadrature panel cap %d binds at sigma=%g t=%g; "
            "field accuracy may degrade", cap, spec.sigma, t,
        )
    grid = quadrature_grid(spec.box, scale,
                           nodes_per_panel=spec.tol.nodes_per_panel,
                           max_panels=cap)
    pts = grid.points
    u0v = spec.init.u0_at(pts)
    rho0v = spec.init.rho0_at(pts)
    disp = displacement_components(spec, t, u0v)
    centers = pts + np.stack(disp, axis=-1)
    avals = np.stack(spec.velocity.a_values(t, u0v), axis=-1)
    return _Table(grid=grid, u0v=u0v, wrho=grid.weights * rho0v,
                  centers=centers, avals=avals)


def _table_for(spec: ProblemSpec, t: float) -> _Table:
    key = (spec.digest, float(t))
    table = _TABLE_CACHE.get(key)
    if table is None:
        table = _build_table(spec, t)
        _TABLE_CACHE[key] = table
        while len(_TABLE_CACHE) > _TABLE_CACHE_MAX:
            _TABLE_CACHE.popitem(last=False)
    else:
        _TABLE_CACHE.move_to_end(key)
    return table


def _kernel_pass(spec: ProblemSpec, t: float, x, table: _Table):
    """Select nodes under the truncated kernel around x.

    Returns (idx, kw, norm) with node indices, kernel values on them,
    and the Gaussian normalization constant.
    """
    x = np.asarray(x, dtype=float).reshape(spec.n)
    s2t = spec.sigma * spec.sigma * t
    if s2t < 1e-300:
        raise DegenerateKernel(
            f"sigma^2 * t = {s2t:.3e} is below the representable kernel width"
        )
    centers = table.centers
    e = np.zeros(centers.shape[0])
    for i in range(spec.n):
        d = centers[:, i] - x[i]
        e += d * d
    e /= 2.0 * s2t
    cut = min(0.5 * spec.tol.kernel_cutoff ** 2, _UNDERFLOW)
    idx = np.nonzero(e <= cut)[0]
    kw = np.exp(-e[idx])
    norm = (2.0 * math.pi * s2t) ** (-spec.n / 2.0)
    return idx, kw, norm


def eval_p_moment(spec: ProblemSpec, t: float, x, phi: Callable) -> float:
    """Moment integral phi(u) against the full density (prefactor included).

    ``phi`` must accept a numpy array of u values.  Requires t > 0.
    """
    if t <= 0:
        raise ValueError("eval_p_moment requires t > 0")
    table = _table_for(spec, t)
    idx, kw, norm = _kernel_pass(spec, t, x, table)
    vals = np.asarray(phi(table.u0v[idx]), dtype=float)
    return float(norm * np.sum(table.wrho[idx] * kw * vals))


def eval_rho_sigma(spec: ProblemSpec, t: float, x) -> float:
    """Smoothed density rho_sigma(t, x); equals rho0(x) at t = 0."""
    if t == 0:
        return spec.init.rho0_point(x)
    table = _table_for(spec, t)
    idx, kw, norm = _kernel_pass(spec, t, x, table)
    return float(norm * np.sum(table.wrho[idx] * kw))


def eval_u_sigma(spec: ProblemSpec, t: float, x) -> float:
    """Smoothed profile u_sigma(t, x); equals u0(x) at t = 0.

    The normalization prefactor cancels in the ratio; the raw weighted
    mass is compared against ``denom_floor`` before dividing, and
    EmptyKernelSupport is raised when nothing lies under the kernel.
    """
    if t == 0:
        return spec.init.u0_point(x)
    table = _table_for(spec, t)
    idx, kw, _ = _kernel_pass(spec, t, x, table)
    wk = table.wrho[idx] * kw
    den = float(np.sum(wk))
    if den < spec.tol.denom_floor:
        raise EmptyKernelSupport(
            f"no kernel mass at t={t:g}, x={np.asarray(x).tolist()}"
        )
    return float(np.sum(wk * table.u0v[idx]) / den)


def eval_a_sigma(spec: ProblemSpec, t: float, x) -> np.ndarray:
    """Smoothed velocity a_sigma(t, x) as a vector of length n."""
    if t == 0:
        u0x = spec.init.u0_point(x)
        return np.array([float(v) for v in spec.velocity.a_values(0.0, u0x)])
    table = _table_for(spec, t)
    idx, kw, _ = _kernel_pass(spec, t, x, table)
    wk = table.wrho[idx] * kw
    den = float(np.sum(wk))
    if den < spec.tol.denom_floor:
        raise EmptyKernelSupport(
            f"no kernel mass at t={t:g}, x={np.asarray(x).tolist()}"
        )
    return np.array([float(np.sum(wk * table.avals[idx, i]) / den)
                     for i in range(spec.n)])


@dataclass
class FieldGrid:
    """A field sampled on the tensor grid of the problem box.

    ``values`` has the grid shape for scalar fields and an extra
    trailing component axis for vector fields.  ``valid`` marks points
    where the evaluation succeeded; failed points hold NaN.
    """

    name: str
    t: float
    axes: tuple[np.ndarray, ...]
    values: np.ndarray
    valid: np.ndarray

    @property
    def n(self) -> int:
        return len(self.axes)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == len(self.axes) + 1

    def to_csv(self, path) -> None:
        """Write rows in C order: t, coordinates, components, valid.

        All reals use the %.12e format so identical runs produce
        identical bytes.
        """
        shape = tuple(len(ax) for ax in self.axes)
        ncomp = self.values.shape[-1] if self.is_vector else 1
        if ncomp == 1:
            val_cols = ["value"]
        else:
            val_cols = [f"value{i + 1}" for i in range(ncomp)]
        header = ",".join(
            ["t"] + [f"x{i + 1}" for i in range(self.n)] + val_cols + ["valid"]
        )
        with open(path, "w", newline="\n") as fh:
            fh.write(header + "\n")
            for idx in np.ndindex(shape):
                coords = [self.axes[i][idx[i]] for i in range(self.n)]
                if self.is_vector:
                    vals = [self.values[idx + (c,)] for c in range(ncomp)]
                else:
                    vals = [self.values[idx]]
                cells = [f"{self.t:.12e}"]
                cells += [f"{c:.12e}" for c in coords]
                cells += [f"{v:.12e}" for v in vals]
                cells.append(str(int(self.valid[idx])))
                fh.write(",".join(cells) + "\n")


def _grid_axes(spec: ProblemSpec) -> tuple[np.ndarray, ...]:
    return tuple(np.linspace(lo, hi, g)
                 for (lo, hi), g in zip(spec.box, spec.space_grid))


def eval_field_grid(spec: ProblemSpec, t: float, which: str) -> FieldGrid:
    """Evaluate one field ("rho", "u" or "a") on the problem's box grid.

    ``t`` must be one of the problem's output times.  Each grid value is
    produced by the same pointwise evaluator a caller would use, so a
    grid entry and a direct call agree bit for bit.  Points whose kernel
    carries no mass are flagged invalid rather than failing the grid.
    """
    if which not in ("rho", "u", "a"):
        raise ValueError(f"unknown field {which!r}")
    if not any(math.isclose(t, tp, rel_tol=1e-12, abs_tol=1e-15)
               for tp in spec.time_points):
        raise ValueError(f"t={t!r} is not one of the problem's time points")
    axes = _grid_axes(spec)
    shape = tuple(len(ax) for ax in axes)
    valid = np.ones(shape, dtype=bool)
    if which == "a":
        values = np.empty(shape + (spec.n,))
    else:
        values = np.empty(shape)
    for idx in np.ndindex(shape):
        x = np.array([axes[i][idx[i]] for i in range(spec.n)])
        try:
            if which == "rho":
                values[idx] = eval_rho_sigma(spec, t, x)
            elif which == "u":
                values[idx] = eval_u_sigma(spec, t, x)
            else:
                values[idx] = eval_a_sigma(spec, t, x)
        except EmptyKernelSupport:
            values[idx] = np.nan
            valid[idx] = False
    return FieldGrid(name=which, t=float(t), axes=axes, values=values, valid=valid)


class SweepEntry(NamedTuple):
    sigma: float
    u: float
    a: np.ndarray
    rho: float


def sigma_sweep(spec: ProblemSpec, t: float, x, sigmas) -> list[SweepEntry]:
    """Evaluate (u, a, rho) at one point for a decreasing noise ladder.

    ``sigmas`` must be strictly decreasing and positive; t must be
    positive.  Kernel windows and panel widths adapt per sigma.
    """
    sig = [float(s) for s in sigmas]
    if not sig or any(s <= 0 for s in sig):
        raise ValueError("sigmas must be positive")
    if any(b >= a for a, b in zip(sig, sig[1:])):
        raise ValueError("sigmas must be strictly decreasing")
    if t <= 0:
        raise ValueError("sigma_sweep requires t > 0")
    out = []
    for s in sig:
        sp = spec.with_sigma(s)
        try:
            u = eval_u_sigma(sp, t, x)
            a = eval_a_sigma(sp, t, x)
            rho = eval_rho_sigma(sp, t, x)
        except EmptyKernelSupport as e:
            raise EmptyKernelSupport(f"sigma={s:g}: {e}") from e
        out.append(SweepEntry(sigma=s, u=u, a=a, rho=rho))
    return out


def integrate_rho0(spec: ProblemSpec) -> float:
    """Quadrature mass of rho0 over the box (kernel-independent rule)."""
    scale = min(hi - lo for lo, hi in spec.box) / 64.0
    grid = quadrature_grid(spec.box, scale,
                           nodes_per_panel=spec.tol.nodes_per_panel)
    rho = spec.init.rho0_at(grid.points)
    return float(np.sum(grid.weights * rho))


def integrate_rho_sigma(spec: ProblemSpec, t: float,
                        margin: float | None = None) -> float:
    """Integrate the computed rho_sigma field over an enlarged box.

    Mass is conserved only when the transported kernel support stays
    inside the integration domain, so each axis is padded by the largest
    flow displacement plus the kernel cutoff radius (overridable via
    ``margin``).  Cost is one pointwise field evaluation per node of an
    n-dimensional tensor rule; intended for n = 1 or 2.
    """
    if t == 0:
        return integrate_rho0(spec)
    if margin is None:
        us = np.linspace(spec.u_range[0], spec.u_range[1], 201)
        disp = displacement_components(spec, t, us)
        reach = max(float(np.max(np.abs(d))) for d in disp)
        margin = reach + spec.tol.kernel_cutoff * spec.sigma * math.sqrt(t)
    big_box = [(lo - margin, hi + margin) for lo, hi in spec.box]
    scale = spec.sigma * math.sqrt(t)
    grid = quadrature_grid(big_box, scale,
                           nodes_per_panel=spec.tol.nodes_per_panel,
                           max_panels=spec.tol.max_panels)
    total = 0.0
    for x, w in zip(grid.points, grid.weights):
        total += w * eval_rho_sigma(spec, t, x)
    return float(total)
