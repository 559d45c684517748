"""Command-line experiment runner.

Loads a problem configuration, dispatches to the computational modules
and writes deterministic CSV/JSON artifacts plus a manifest listing
every output with its content hash.  Same config and seed give the
same output bytes; only the manifest's wall-clock duration varies.

Exit codes: 0 success, 2 configuration problem, 3 numerical failure.
Failures print a one-line JSON object ``{"error": {"kind", "message"}}``
on stderr.  The ``CHARSTOCH_LOG`` environment variable (error, warn,
info, debug) controls diagnostics on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import ConfigError, NearBlowup, NumericalError

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="charstoch",
        description="Stochastic-characteristics solver and diagnostics",
    )
    top.add_argument("--version", action="version", version=__version__)
    sub = top.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="problem JSON file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="cap worker threads (results are unaffected)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the configured RNG seed")

    p = sub.add_parser("solve", help="evaluate solution fields on the grid")
    common(p)
    p.add_argument("--method", required=True,
                   choices=("quadrature", "characteristics", "montecarlo"))
    p.add_argument("--t", type=float, action="append", default=None,
                   help="evaluation time (repeatable; default: config times)")
    p.add_argument("--particles", type=int, default=200_000,
                   help="particle count for --method montecarlo")
    p.add_argument("--bandwidth", type=float, default=None,
                   help="kernel bandwidth for montecarlo field estimates")
    p.add_argument("--dump-particles", action="store_true",
                   help="also write per-time particle CSVs")

    p = sub.add_parser("blowup", help="report the classical blow-up time")
    common(p)

    p = sub.add_parser("converge", help="noise ladder vs characteristics oracle")
    common(p)
    p.add_argument("--sigmas", required=True,
                   help="comma-separated decreasing noise levels")
    p.add_argument("--t", type=float, required=True)

    p = sub.add_parser("residuals", help="discrete balance-law residuals")
    common(p)
    p.add_argument("--system", required=True, choices=("sigma", "pressureless"))
    p.add_argument("--window", type=float, nargs=2, required=True,
                   metavar=("T0", "T1"))
    p.add_argument("--resolutions", nargs="+", required=True, metavar="H:DT",
                   help="one or more h:dt pairs, coarsest first")

    p = sub.add_parser("iterms", help="covariance-source persistence table")
    common(p)
    p.add_argument("--sigmas", required=True,
                   help="comma-separated decreasing noise levels")
    p.add_argument("--t", type=float, required=True)

    return top


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("CHARSTOCH_LOG", "").lower())
    if level is not None:
        logging.basicConfig(level=level, stream=sys.stderr,
                            format="%(levelname)s %(name)s: %(message)s")


def _cap_threads(n: int | None) -> None:
    # Best-effort cap for numeric libraries; the evaluation paths use
    # fixed reduction orders, so results never depend on this.
    if n is not None:
        if n < 1:
            raise ConfigError("--threads must be >= 1")
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def _load_spec(args):
    from .problem import load_problem

    try:
        text = Path(args.config).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {args.config!r}: {e}") from e
    spec = load_problem(text)
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        spec = dataclasses.replace(spec, rng_seed=args.seed)
    return spec


class _Outputs:
    """Collects written artifacts and finalizes the run manifest."""

    def __init__(self, out_dir: str) -> None:
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.dir / name

    def write_manifest(self, args, spec, started: float) -> None:
        outputs = []
        for name in sorted(self.names):
            digest = hashlib.sha256((self.dir / name).read_bytes()).hexdigest()
            outputs.append({"path": name, "sha256": digest})
        manifest = {
            "subcommand": args.subcommand,
            "config": args.config,
            "out_dir": str(self.dir),
            "spec_digest": spec.digest,
            "version": __version__,
            "duration_seconds": time.monotonic() - started,
            "outputs": outputs,
        }
        with open(self.dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, sort_keys=True, indent=2)
            fh.write("\n")


def _parse_sigmas(text: str) -> list[float]:
    try:
        sigmas = [float(s) for s in text.split(",") if s.strip()]
    except ValueError as e:
        raise ConfigError(f"--sigmas: {e}") from e
    if not sigmas:
        raise ConfigError("--sigmas must list at least one value")
    return sigmas


def _parse_resolutions(items: list[str]) -> list[tuple[float, float]]:
    out = []
    for item in items:
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"--resolutions entry {item!r} is not h:dt")
        try:
            out.append((float(parts[0]), float(parts[1])))
        except ValueError as e:
            raise ConfigError(f"--resolutions entry {item!r}: {e}") from e
    return out


def _grid_points(spec):
    import numpy as np

    axes = [np.linspace(lo, hi, g)
            for (lo, hi), g in zip(spec.box, spec.space_grid)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return axes, np.stack([m.ravel() for m in mesh], axis=-1)


def _field_grid_from_values(name, t, axes, values, valid):
    from .representation import FieldGrid

    return FieldGrid(name=name, t=float(t), axes=tuple(axes),
                     values=values, valid=valid)


def cmd_solve(args, spec, out: _Outputs) -> None:
    import numpy as np

    times = args.t if args.t else list(spec.time_points)
    if args.method == "quadrature":
        from .representation import eval_field_grid

        for j, t in enumerate(times):
            for which in ("rho", "u", "a"):
                grid = eval_field_grid(spec, t, which)
                grid.to_csv(out.path(f"fields_sigma_t{j}_{which}.csv"))
    elif args.method == "characteristics":
        from .characteristics import (blow_up_time, eval_a_bar, eval_rho_bar,
                                      solve_implicit)

        t_star = blow_up_time(spec).t_star
        for t in times:
            if t >= t_star:
                raise NearBlowup(
                    f"requested t={t:g} is not below t_star={t_star:g}"
                )
        axes, pts = _grid_points(spec)
        shape = tuple(len(ax) for ax in axes)
        for j, t in enumerate(times):
            u = np.empty(len(pts))
            rho = np.empty(len(pts))
            a = np.empty((len(pts), spec.n))
            for i, x in enumerate(pts):
                u[i] = solve_implicit(spec, t, x)
                rho[i] = eval_rho_bar(spec, t, x)
                a[i] = eval_a_bar(spec, t, x)
            valid = np.ones(shape, dtype=bool)
            _field_grid_from_values("rho_bar", t, axes, rho.reshape(shape),
                                    valid).to_csv(out.path(f"fields_char_t{j}_rho.csv"))
            _field_grid_from_values("u_bar", t, axes, u.reshape(shape),
                                    valid).to_csv(out.path(f"fields_char_t{j}_u.csv"))
            _field_grid_from_values("a_bar", t, axes,
                                    a.reshape(shape + (spec.n,)),
                                    valid).to_csv(out.path(f"fields_char_t{j}_a.csv"))
    else:
        from .montecarlo import (dump_ensemble, estimate_fields, evolve_exact,
                                 sample_initial)

        ens0 = sample_initial(spec, args.particles)
        axes, pts = _grid_points(spec)
        shape = tuple(len(ax) for ax in axes)
        for j, t in enumerate(times):
            ens = evolve_exact(ens0, spec, t) if t > 0 else ens0
            est = estimate_fields(ens, spec, pts, bandwidth=args.bandwidth)
            valid = est.valid.reshape(shape)
            _field_grid_from_values("rho_hat", t, axes,
                                    est.rho_hat.reshape(shape),
                                    np.ones(shape, dtype=bool)
                                    ).to_csv(out.path(f"fields_mc_t{j}_rho.csv"))
            _field_grid_from_values("u_hat", t, axes, est.u_hat.reshape(shape),
                                    valid).to_csv(out.path(f"fields_mc_t{j}_u.csv"))
            if args.dump_particles:
                dump_ensemble(ens, out.path(f"particles_t{j}.csv"))


def cmd_blowup(args, spec, out: _Outputs) -> None:
    from .characteristics import blow_up_time

    report = blow_up_time(spec)
    with open(out.path("blowup.json"), "w") as fh:
        fh.write(report.to_json())
        fh.write("\n")


def cmd_converge(args, spec, out: _Outputs) -> None:
    import numpy as np

    from .characteristics import blow_up_time, eval_a_bar, eval_rho_bar, \
        solve_implicit
    from .representation import eval_a_sigma, eval_rho_sigma, eval_u_sigma

    sigmas = _parse_sigmas(args.sigmas)
    t = args.t
    t_star = blow_up_time(spec).t_star
    if t >= t_star:
        raise NearBlowup(f"requested t={t:g} is not below t_star={t_star:g}")
    _, pts = _grid_points(spec)
    ref = [(solve_implicit(spec, t, x), eval_a_bar(spec, t, x),
            eval_rho_bar(spec, t, x)) for x in pts]
    with open(out.path("convergence.csv"), "w", newline="\n") as fh:
        fh.write("sigma,max_err_u,max_err_a,max_err_rho\n")
        for s in sigmas:
            sp = spec.with_sigma(s)
            eu = ea = er = 0.0
            for x, (u_ref, a_ref, rho_ref) in zip(pts, ref):
                eu = max(eu, abs(eval_u_sigma(sp, t, x) - u_ref))
                ea = max(ea, float(np.max(np.abs(
                    np.asarray(eval_a_sigma(sp, t, x)) - a_ref))))
                er = max(er, abs(eval_rho_sigma(sp, t, x) - rho_ref))
            fh.write(f"{s:.12e},{eu:.12e},{ea:.12e},{er:.12e}\n")


def cmd_residuals(args, spec, out: _Outputs) -> None:
    from .balance import attach_ratios, residual_pressureless, \
        residual_sigma_system

    window = (args.window[0], args.window[1])
    resolutions = _parse_resolutions(args.resolutions)
    runner = residual_sigma_system if args.system == "sigma" \
        else residual_pressureless
    batches = [runner(spec, window, res) for res in resolutions]
    for coarse, fine in zip(batches, batches[1:]):
        attach_ratios(coarse, fine)
    with open(out.path("residuals.csv"), "w", newline="\n") as fh:
        fh.write("equation,h,dt,max_residual,l1_residual,ratio\n")
        for batch in batches:
            for r in batch:
                ratio = "" if r.ratio is None else f"{r.ratio:.12e}"
                fh.write(f"{r.equation},{r.h:.12e},{r.dt:.12e},"
                         f"{r.max_residual:.12e},{r.l1_residual:.12e},{ratio}\n")


def cmd_iterms(args, spec, out: _Outputs) -> None:
    from .balance import i_term_persistence

    sigmas = _parse_sigmas(args.sigmas)
    rows = i_term_persistence(spec, sigmas, args.t)
    header = "sigma,I_u_sup," + ",".join(
        f"I_a_sup_{i + 1}" for i in range(spec.n))
    with open(out.path("iterms.csv"), "w", newline="\n") as fh:
        fh.write(header + "\n")
        for row in rows:
            cells = [f"{row.sigma:.12e}", f"{row.i_u_sup:.12e}"]
            cells += [f"{v:.12e}" for v in row.i_a_sup]
            fh.write(",".join(cells) + "\n")


_COMMANDS = {
    "solve": cmd_solve,
    "blowup": cmd_blowup,
    "converge": cmd_converge,
    "residuals": cmd_residuals,
    "iterms": cmd_iterms,
}


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": {"kind": type(exc).__name__, "message": str(exc)}}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        _cap_threads(args.threads)
        spec = _load_spec(args)
        out = _Outputs(args.out)
        _COMMANDS[args.subcommand](args, spec, out)
        out.write_manifest(args, spec, started)
    except ConfigError as e:
        return _fail(e, 2)
    except NumericalError as e:
        return _fail(e, 3)
    except ValueError as e:
        return _fail(e, 2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
