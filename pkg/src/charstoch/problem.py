"""Problem definition: velocity field, initial data, and solver settings.

A problem is the Cauchy data for a multidimensional scalar conservation
law in nonconservative form,

    d/dt u + sum_i a_i(t, u) d/dx_i u = 0,      u(0, x) = u0(x),

together with an initial density rho0 weighting the characteristics, a
noise amplitude sigma for the stochastic regularization, a bounding box
that truncates all quadratures, and numerical tolerances.

Everything downstream works off the flow displacement

    A_i(t, u) = integral of a_i(tau, u) over tau in [0, t],

which is computed from a closed form when one is supplied, by the
shortcut t * a_i(u) when a_i does not depend on t, and by adaptive
Gauss-Legendre quadrature otherwise.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expr as ex
from .errors import ExprError, SchemaError, ValidationError
from .quadrature import adaptive_time_integral

__all__ = [
    "Tolerances",
    "VelocityField",
    "InitialData",
    "ProblemSpec",
    "load_problem",
    "flow_displacement",
    "displacement_components",
    "du_displacement_components",
]

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class Tolerances:
    """Numerical knobs with safe defaults; all overridable per problem."""

    quad_tol_time: float = 1e-10   # absolute tolerance of time quadrature
    kernel_cutoff: float = 8.0     # kernel truncated at this many sigma*sqrt(t)
    newton_tol: float = 1e-12      # residual tolerance of root finders
    max_iter: int = 100            # iteration cap of root finders
    denom_floor: float = 1e-250    # raw weighted-mass floor for ratio fields
    blowup_tol: float = 1e-3       # reported accuracy of the blow-up time
    near_blowup_margin: float = 1e-6  # gradient-denominator floor
    blowup_grid: int = 10_000      # blow-up search points per axis (capped)
    nodes_per_panel: int = 8       # Gauss-Legendre nodes per spatial panel
    max_panels: int = 4096         # spatial panels per axis, hard cap

    _INT_FIELDS = ("max_iter", "blowup_grid", "nodes_per_panel", "max_panels")


@dataclass(frozen=True)
class VelocityField:
    """Velocity components a_i(t, u) plus optional analytic helpers.

    ``du_components`` are the u-derivatives of the a_i and
    ``antiderivatives`` are the time antiderivatives A_i(t, u); both are
    validated against the components on load and used preferentially.
    ``time_dependent`` caches, per component, whether 't' occurs in a_i.
    """

    components: tuple[ex.Expr, ...]
    du_components: tuple[ex.Expr, ...] | None = None
    antiderivatives: tuple[ex.Expr, ...] | None = None
    time_dependent: tuple[bool, ...] = ()

    @property
    def n(self) -> int:
        return len(self.components)

    def a_values(self, t: float, u) -> list[np.ndarray]:
        """Evaluate every component at time t on an array of u values."""
        u_arr = np.asarray(u, dtype=float)
        env = {"t": t, "u": u_arr}
        return [_filled(ex.eval_expr(c, env), u_arr.shape) for c in self.components]

    def dt_values(self, t: float, u) -> list[np.ndarray]:
        """Time partials of the components, by central differences.

        Exactly zero (without differencing) for components without t.
        """
        u_arr = np.asarray(u, dtype=float)
        out = []
        for c, dep in zip(self.components, self.time_dependent):
            if not dep:
                out.append(np.zeros(u_arr.shape))
            else:
                d = ex.numeric_partial(c, "t", {"t": t, "u": u_arr})
                out.append(_filled(d, u_arr.shape))
        return out


@dataclass(frozen=True)
class InitialData:
    """Initial profile u0, characteristic density rho0, optional grad u0."""

    n: int
    u0: ex.Expr
    rho0: ex.Expr
    grad_u0: tuple[ex.Expr, ...] | None = None

    def _env(self, pts: np.ndarray) -> dict:
        pts = np.asarray(pts, dtype=float)
        return {f"x{i + 1}": pts[..., i] for i in range(self.n)}

    def u0_at(self, pts) -> np.ndarray:
        """u0 on points of shape (..., n), returned with shape (...)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _filled(ex.eval_expr(self.u0, self._env(pts)), pts.shape[:-1])

    def rho0_at(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return _filled(ex.eval_expr(self.rho0, self._env(pts)), pts.shape[:-1])

    def u0_point(self, x) -> float:
        return float(self.u0_at(x).reshape(-1)[0])

    def rho0_point(self, x) -> float:
        return float(self.rho0_at(x).reshape(-1)[0])

    def grad_u0_point(self, x) -> np.ndarray:
        return self.grad_u0_at(x)[0]

    def grad_u0_at(self, pts) -> np.ndarray:
        """Gradient of u0 on points (..., n) -> (..., n).

        Uses the analytic components when present, otherwise central
        differences axis by axis.
        """
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        env = self._env(pts)
        cols = []
        if self.grad_u0 is not None:
            for g in self.grad_u0:
                cols.append(_filled(ex.eval_expr(g, env), pts.shape[:-1]))
        else:
            for i in range(self.n):
                d = ex.numeric_partial(self.u0, f"x{i + 1}", env)
                cols.append(_filled(d, pts.shape[:-1]))
        return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class ProblemSpec:
    """Validated, immutable bundle of one problem instance."""

    n: int
    velocity: VelocityField
    init: InitialData
    sigma: float
    box: tuple[tuple[float, float], ...]
    space_grid: tuple[int, ...]
    time_points: tuple[float, ...]
    tol: Tolerances
    rng_seed: int
    u_range: tuple[float, float]  # u0 range over the box, inflated by 1%

    @property
    def box_volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.box]))

    def with_sigma(self, sigma: float) -> "ProblemSpec":
        return dataclasses.replace(self, sigma=float(sigma))

    @cached_property
    def digest(self) -> str:
        """Content hash of the resolved problem (semantic fields only)."""
        payload = {
            "n": self.n,
            "a": [ex.expr_to_str(c) for c in self.velocity.components],
            "a_u": None if self.velocity.du_components is None
            else [ex.expr_to_str(c) for c in self.velocity.du_components],
            "A": None if self.velocity.antiderivatives is None
            else [ex.expr_to_str(c) for c in self.velocity.antiderivatives],
            "u0": ex.expr_to_str(self.init.u0),
            "rho0": ex.expr_to_str(self.init.rho0),
            "grad_u0": None if self.init.grad_u0 is None
            else [ex.expr_to_str(c) for c in self.init.grad_u0],
            "sigma": repr(self.sigma),
            "box": [[repr(lo), repr(hi)] for lo, hi in self.box],
            "space_grid": list(self.space_grid),
            "time_points": [repr(t) for t in self.time_points],
            "rng_seed": self.rng_seed,
            "tolerances": {
                f.name: repr(getattr(self.tol, f.name))
                for f in dataclasses.fields(self.tol)
            },
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _filled(value, shape) -> np.ndarray:
    """Broadcast a scalar-or-array evaluation result to a float array."""
    out = np.empty(shape, dtype=float)
    out[...] = value
    return out


# ---------------------------------------------------------------------------
# configuration loading


_TOP_REQUIRED = ("n", "a", "u0", "rho0", "sigma", "box", "space_grid", "time_points")
_TOP_OPTIONAL = ("a_u", "A", "grad_u0", "rng_seed", "tolerances")


def load_problem(config_text: str) -> ProblemSpec:
    """Parse and validate a JSON problem configuration.

    Unknown fields are rejected (SchemaError) so typos cannot silently
    change a run.  Field-level shape/type problems raise SchemaError;
    semantic inconsistencies (negative density, bad box, analytic
    derivatives that disagree with the components) raise
    ValidationError.
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"configuration is not valid JSON: {e}") from e
    if not isinstance(raw, dict):
        raise SchemaError("configuration root must be a JSON object")

    known = set(_TOP_REQUIRED) | set(_TOP_OPTIONAL)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise SchemaError(f"unknown configuration field(s): {', '.join(unknown)}")
    missing = sorted(k for k in _TOP_REQUIRED if k not in raw)
    if missing:
        raise SchemaError(f"missing configuration field(s): {', '.join(missing)}")

    n = raw["n"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise SchemaError("'n' must be an integer >= 1")

    tu_vars = frozenset({"t", "u"})
    x_vars = frozenset(f"x{i + 1}" for i in range(n))

    a = _parse_expr_list(raw, "a", n, tu_vars)
    a_u = _parse_expr_list(raw, "a_u", n, tu_vars) if "a_u" in raw else None
    antider = _parse_expr_list(raw, "A", n, tu_vars) if "A" in raw else None
    u0 = _parse_one_expr(raw, "u0", x_vars)
    rho0 = _parse_one_expr(raw, "rho0", x_vars)
    grad_u0 = _parse_expr_list(raw, "grad_u0", n, x_vars) if "grad_u0" in raw else None

    sigma = _require_real(raw, "sigma")
    if sigma < 0:
        raise ValidationError("'sigma' must be >= 0")

    box = _parse_box(raw["box"], n)
    space_grid = _parse_space_grid(raw["space_grid"], n)
    time_points = _parse_time_points(raw["time_points"])
    rng_seed = raw.get("rng_seed", 0)
    if not isinstance(rng_seed, int) or isinstance(rng_seed, bool) or rng_seed < 0 \
            or rng_seed >= 2 ** 64:
        raise SchemaError("'rng_seed' must be an unsigned 64-bit integer")
    tol = _parse_tolerances(raw.get("tolerances", {}))

    time_dep = tuple("t" in ex.variables(c) for c in a)
    velocity = VelocityField(a, a_u, antider, time_dep)
    init = InitialData(n, u0, rho0, grad_u0)

    u_range = _validate_initial_data(init, box, space_grid)
    t_max = max(time_points) if time_points and max(time_points) > 0 else 1.0
    _validate_velocity(velocity, u_range, t_max)

    return ProblemSpec(
        n=n, velocity=velocity, init=init, sigma=float(sigma), box=box,
        space_grid=space_grid, time_points=time_points, tol=tol,
        rng_seed=rng_seed, u_range=u_range,
    )


def _parse_one_expr(raw: dict, key: str, allowed) -> ex.Expr:
    src = raw[key]
    if not isinstance(src, str):
        raise SchemaError(f"'{key}' must be a string expression")
    try:
        return ex.parse(src, allowed)
    except ExprError as e:
        raise SchemaError(f"'{key}': {e}") from e


def _parse_expr_list(raw: dict, key: str, n: int, allowed) -> tuple[ex.Expr, ...]:
    src = raw[key]
    if not isinstance(src, list) or len(src) != n \
            or not all(isinstance(s, str) for s in src):
        raise SchemaError(f"'{key}' must be a list of {n} string expression(s)")
    out = []
    for i, s in enumerate(src):
        try:
            out.append(ex.parse(s, allowed))
        except ExprError as e:
            raise SchemaError(f"'{key}[{i}]': {e}") from e
    return tuple(out)


def _require_real(raw: dict, key: str) -> float:
    v = raw[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not np.isfinite(v):
        raise SchemaError(f"'{key}' must be a finite real number")
    return float(v)


def _parse_box(src, n: int) -> tuple[tuple[float, float], ...]:
    if not isinstance(src, list) or len(src) != n:
        raise SchemaError(f"'box' must be a list of {n} [lo, hi] pair(s)")
    out = []
    for i, pair in enumerate(src):
        if not isinstance(pair, list) or len(pair) != 2 \
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                           for v in pair):
            raise SchemaError(f"'box[{i}]' must be a [lo, hi] pair of reals")
        lo, hi = float(pair[0]), float(pair[1])
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise SchemaError(f"'box[{i}]' must be finite")
        if not lo < hi:
            raise ValidationError(f"'box[{i}]': need lo < hi, got [{lo}, {hi}]")
        out.append((lo, hi))
    return tuple(out)


def _parse_space_grid(src, n: int) -> tuple[int, ...]:
    if not isinstance(src, list) or len(src) != n \
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in src):
        raise SchemaError(f"'space_grid' must be a list of {n} integer(s)")
    if any(v < 2 for v in src):
        raise ValidationError("'space_grid' entries must be >= 2")
    return tuple(src)


def _parse_time_points(src) -> tuple[float, ...]:
    if not isinstance(src, list) \
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                       for v in src):
        raise SchemaError("'time_points' must be a list of reals")
    pts = tuple(float(v) for v in src)
    if any(not np.isfinite(v) or v < 0 for v in pts):
        raise ValidationError("'time_points' must be nonnegative and finite")
    if any(b <= a for a, b in zip(pts, pts[1:])):
        raise ValidationError("'time_points' must be strictly increasing")
    return pts


def _parse_tolerances(src) -> Tolerances:
    if not isinstance(src, dict):
        raise SchemaError("'tolerances' must be an object")
    names = {f.name for f in dataclasses.fields(Tolerances)}
    unknown = sorted(set(src) - names)
    if unknown:
        raise SchemaError(f"unknown tolerance field(s): {', '.join(unknown)}")
    kwargs = {}
    for key, val in src.items():
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise SchemaError(f"tolerance '{key}' must be a number")
        if key in Tolerances._INT_FIELDS:
            if int(val) != val or val < 1:
                raise SchemaError(f"tolerance '{key}' must be a positive integer")
            kwargs[key] = int(val)
        else:
            if val <= 0:
                raise ValidationError(f"tolerance '{key}' must be > 0")
            kwargs[key] = float(val)
    return Tolerances(**kwargs)


def _dense_sample(box, space_grid) -> np.ndarray:
    """Tensor sample of the box used for range and sign checks."""
    n = len(box)
    per_axis = max(201, int(round(2e5 ** (1.0 / n))))
    axes = [np.linspace(lo, hi, max(per_axis, g)) for (lo, hi), g in zip(box, space_grid)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _validate_initial_data(init: InitialData, box, space_grid) -> tuple[float, float]:
    pts = _dense_sample(box, space_grid)
    u0v = init.u0_at(pts)
    if not np.all(np.isfinite(u0v)):
        raise ValidationError("'u0' is not finite everywhere on the box")
    rho0v = init.rho0_at(pts)
    if not np.all(np.isfinite(rho0v)):
        raise ValidationError("'rho0' is not finite everywhere on the box")
    if np.any(rho0v < 0):
        raise ValidationError("'rho0' takes negative values on the box")
    lo, hi = float(np.min(u0v)), float(np.max(u0v))
    span = hi - lo
    pad = 0.01 * span if span > 0 else 0.01 * max(1.0, abs(hi))
    return (lo - pad, hi + pad)


def _validate_velocity(vf: VelocityField, u_range, t_max: float) -> None:
    """Check analytic derivatives/antiderivatives against the components
    on a 20 x 20 (t, u) grid at relative tolerance 1e-6."""
    ts = np.linspace(0.0, t_max, 20)
    us = np.linspace(u_range[0], u_range[1], 20)
    tt, uu = np.meshgrid(ts, us, indexing="ij")
    if vf.du_components is not None:
        for i, (ai, dai) in enumerate(zip(vf.components, vf.du_components)):
            want = _filled(ex.eval_expr(dai, {"t": tt, "u": uu}), tt.shape)
            got = _filled(ex.numeric_partial(ai, "u", {"t": tt, "u": uu}), tt.shape)
            err = np.max(np.abs(want - got) / (1.0 + np.abs(want)))
            if err > 1e-6:
                raise ValidationError(
                    f"'a_u[{i}]' disagrees with d/du of 'a[{i}]' "
                    f"(max relative error {err:.3e})"
                )
    if vf.antiderivatives is not None:
        # interior t only, so the central difference stays one-sided-free
        ts_in = np.linspace(t_max / 20, t_max, 20)
        tt_in, uu_in = np.meshgrid(ts_in, us, indexing="ij")
        for i, (ai, Ai) in enumerate(zip(vf.components, vf.antiderivatives)):
            want = _filled(ex.eval_expr(ai, {"t": tt_in, "u": uu_in}), tt_in.shape)
            got = _filled(ex.numeric_partial(Ai, "t", {"t": tt_in, "u": uu_in}),
                          tt_in.shape)
            err = np.max(np.abs(want - got) / (1.0 + np.abs(want)))
            if err > 1e-6:
                raise ValidationError(
                    f"'A[{i}]' disagrees with time antiderivative of 'a[{i}]' "
                    f"(max relative error {err:.3e})"
                )
            at0 = _filled(ex.eval_expr(Ai, {"t": 0.0, "u": us}), us.shape)
            if np.max(np.abs(at0) / (1.0 + np.abs(us))) > 1e-9:
                raise ValidationError(f"'A[{i}]' must vanish at t = 0")


# ---------------------------------------------------------------------------
# flow displacement


def displacement_components(spec: ProblemSpec, t: float, u) -> list[np.ndarray]:
    """A_i(t, u) for an array of u values, one array per component.

    Exactly zero at t = 0.  Closed form > time-independent shortcut >
    adaptive quadrature, in that order of preference.
    """
    u_arr = np.asarray(u, dtype=float)
    vf = spec.velocity
    if t == 0:
        return [np.zeros(u_arr.shape) for _ in range(spec.n)]
    out = []
    for i in range(spec.n):
        if vf.antiderivatives is not None:
            v = ex.eval_expr(vf.antiderivatives[i], {"t": float(t), "u": u_arr})
            out.append(_filled(v, u_arr.shape))
        elif not vf.time_dependent[i]:
            v = ex.eval_expr(vf.components[i], {"u": u_arr})
            out.append(float(t) * _filled(v, u_arr.shape))
        else:
            comp = vf.components[i]

            def integrand(tau, _c=comp):
                return _filled(ex.eval_expr(_c, {"t": tau, "u": u_arr}), u_arr.shape)

            out.append(adaptive_time_integral(integrand, 0.0, float(t),
                                              spec.tol.quad_tol_time))
    return out


def flow_displacement(spec: ProblemSpec, t: float, u: float) -> np.ndarray:
    """A(t, u) as a vector of length n, for a scalar u."""
    comps = displacement_components(spec, t, np.asarray(float(u)))
    return np.array([float(c) for c in comps])


def du_displacement_components(spec: ProblemSpec, t: float, u) -> list[np.ndarray]:
    """d/du of the flow displacement, component by component.

    Prefers the integral of an analytic a_u; falls back to central
    differences of the displacement itself.
    """
    u_arr = np.asarray(u, dtype=float)
    vf = spec.velocity
    if t == 0:
        return [np.zeros(u_arr.shape) for _ in range(spec.n)]
    if vf.du_components is not None:
        out = []
        for i in range(spec.n):
            dcomp = vf.du_components[i]
            if "t" not in ex.variables(dcomp):
                v = ex.eval_expr(dcomp, {"u": u_arr})
                out.append(float(t) * _filled(v, u_arr.shape))
            else:
                def integrand(tau, _c=dcomp):
                    return _filled(ex.eval_expr(_c, {"t": tau, "u": u_arr}),
                                   u_arr.shape)

                out.append(adaptive_time_integral(integrand, 0.0, float(t),
                                                  spec.tol.quad_tol_time))
        return out
    h = _CBRT_EPS * np.maximum(1.0, np.abs(u_arr))
    hi, lo = u_arr + h, u_arr - h
    h_eff = (hi - lo) * 0.5
    up = displacement_components(spec, t, hi)
    dn = displacement_components(spec, t, lo)
    return [(a - b) / (2.0 * h_eff) for a, b in zip(up, dn)]
