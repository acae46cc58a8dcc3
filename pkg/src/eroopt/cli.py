"""Command-line interface: ``eroopt {forward,sweep,optimize,verify}``."""

import argparse
import json
import logging
import math
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import io
from .adjoint import AdjointSolveError
from .erosion import ErosionParams, auto_c1, cost_functional, impact_rate, integrated_erosion
from .flow import PhysicalParams
from .forward import ForwardConfig, solve_forward
from .gradient import GradientConfig, GradientError
from .mesh import MeshError, bend_mesh, rectangle_mesh
from .optimizer import HISTORY_COLUMNS, OptimizerConfig, run
from .particles import ParticleSolveError, RampConfig
from .solvers import LinearSolverConfig, NewtonConfig, NewtonError, SolverError

log = logging.getLogger("eroopt")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2, 3
SOLVER_ERRORS = (NewtonError, ParticleSolveError, SolverError, AdjointSolveError, GradientError,
                 ArithmeticError)
USAGE_ERRORS = (FileNotFoundError, PermissionError, io.ConfigError, MeshError, ValueError,
                TypeError, KeyError)


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# config -> objects
# --------------------------------------------------------------------------


def shipped_mesh_path():
    return resources.files("eroopt") / "data" / "bend_coarse.msh"


def load_mesh(cfg):
    name = cfg.mesh
    builtin = {
        "builtin:bend": bend_mesh,
        "builtin:bend-coarse": lambda: io.read_gmsh(shipped_mesh_path()),
        "builtin:channel": lambda: rectangle_mesh(40, 8, 5.0, 1.0),
    }
    if name.startswith("builtin:"):
        if name not in builtin:
            raise UsageError(f"unknown builtin mesh {name!r}; choose from {sorted(builtin)}")
        return builtin[name]()
    return io.read_gmsh(name, cfg.tag_map)


def _pick(cls, values, section):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise UsageError(f"[{section}] unknown key(s) {sorted(unknown)}")
    return values


def make_params(cfg):
    phys = dict(cfg.physics)
    if "gdir" in phys:
        phys["gdir"] = tuple(float(v) for v in str(phys["gdir"]).replace(",", " ").split())
    d_p = phys.pop("d_p", None)
    explicit_stk = "Stk" in phys
    params = PhysicalParams(**_pick(PhysicalParams, phys, "physics"))
    if d_p is not None:
        params = replace(params, d_p=float(d_p)) if explicit_stk else params.with_diameter(float(d_p))
    elif not explicit_stk:
        params = params.with_diameter(16e-6)
    return params


def make_eparams(cfg):
    ero = dict(cfg.erosion)
    c1 = ero.pop("c1", "auto")
    ep = ErosionParams(**_pick(ErosionParams, ero, "erosion"))
    return ep, c1


def resolve_c1(ep, c1, mesh, state):
    if isinstance(c1, str):
        if c1.lower() != "auto":
            raise UsageError(f"[erosion] c1 must be a number or 'auto', got {c1!r}")
        return auto_c1(mesh, state, ep)
    return replace(ep, c1=float(c1))


def make_forward_config(cfg):
    s = dict(cfg.solver)
    newton = NewtonConfig(atol=s.pop("newton_atol", 1e-10), rtol=s.pop("newton_rtol", 1e-10),
                          maxiter=int(s.pop("newton_maxiter", 40)))
    ramp = RampConfig(start=s.pop("ramp_start", 1e-2), factor=s.pop("ramp_factor", 10.0),
                      floor=s.pop("ramp_floor", 1e-4))
    linear = LinearSolverConfig(method=s.pop("linear_method", "direct"),
                                rtol=s.pop("linear_rtol", 1e-10),
                                maxiter=int(s.pop("linear_maxiter", 5000)))
    if s:
        raise UsageError(f"[solver] unknown key(s) {sorted(s)}")
    return ForwardConfig(newton=newton, ramp=ramp, linear=linear)


def make_optimizer_config(cfg, forward):
    o = dict(cfg.optimizer)
    grad = GradientConfig(mu_min=o.pop("mu_min", 1.0), mu_max=o.pop("mu_max", 100.0),
                          saddle=o.pop("saddle", "minres"))
    kw = {k: o.pop(k) for k in ("t0", "c_armijo", "factor", "max_iter", "max_backtracks",
                                "grad_rtol") if k in o}
    if o:
        raise UsageError(f"[optimizer] unknown key(s) {sorted(o)}")
    for k in ("max_iter", "max_backtracks"):
        if k in kw:
            kw[k] = int(kw[k])
    return OptimizerConfig(forward=forward, gradient=grad, **kw)


def _threads():
    raw = os.environ.get("EROOPT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"EROOPT_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("EROOPT_THREADS must be >= 1")
    return n  # worker processes for sweeps; the compiled kernels are serial


# --------------------------------------------------------------------------
# outputs
# --------------------------------------------------------------------------


def state_fields(state):
    return {"u_f": state.u_f, "p": state.p, "u_p": state.u_p, "alpha": state.alpha}


def _quiet_eta(mesh, state):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eta = impact_rate(mesh, state)
    for w in caught:
        log.warning("%s", w.message)
    return eta


def cmd_forward(args, cfg, out):
    mesh = load_mesh(cfg)
    params = make_params(cfg)
    ep, c1 = make_eparams(cfg)
    state = solve_forward(mesh, params, make_forward_config(cfg))
    ep = resolve_c1(ep, c1, mesh, state)
    terms = cost_functional(mesh, state, ep)
    eta = _quiet_eta(mesh, state)
    E = integrated_erosion(mesh, state, ep)
    print(f"J = {terms.J:.8e}  (erosion {terms.erosion:.8e}, willmore {terms.willmore:.8e})")
    print(f"eta = {eta:.6f}  E = {E:.8e}  Stk = {params.Stk:.6g}")
    io.write_csv(out / "forward.csv", ["J", "J_erosion", "J_willmore", "eta", "E", "Stk", "c1"],
                 [[terms.J, terms.erosion, terms.willmore, eta, E, params.Stk, ep.c1]], "forward")
    if args.vtk:
        io.write_vtk(mesh, out / "forward.vtk", state_fields(state))
    return EXIT_OK


def _sweep_one(payload):
    mesh, params, fcfg, ep, d_p = payload
    p = params.with_diameter(d_p)
    try:
        state = solve_forward(mesh, p, fcfg)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            eta = impact_rate(mesh, state)
        return [d_p, p.Stk, eta, integrated_erosion(mesh, state, ep), "ok"]
    except SOLVER_ERRORS + (RuntimeError,) as exc:
        return [d_p, p.Stk, math.nan, math.nan, f"failed: {exc}".replace("\n", " ")]


def run_sweep(mesh, params, fcfg, ep, diameters, threads=1):
    jobs = [(mesh, params, fcfg, ep, float(d)) for d in diameters]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            return list(pool.map(_sweep_one, jobs))
    return [_sweep_one(j) for j in jobs]


SWEEP_COLUMNS = ["d_p", "Stk", "eta", "E", "status"]


def cmd_sweep(args, cfg, out):
    if not cfg.sweep:
        raise UsageError("[sweep] diameters is empty")
    mesh = load_mesh(cfg)
    params = make_params(cfg)
    ep, _ = make_eparams(cfg)
    rows = run_sweep(mesh, params, make_forward_config(cfg), ep, cfg.sweep, _threads())
    io.write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows, "sweep")
    for r in rows:
        print(f"d_p = {r[0]:.3e}  Stk = {r[1]:.4f}  eta = {r[2]:.4f}  E = {r[3]:.6e}  {r[4]}")
    return EXIT_OK if all(r[4] == "ok" for r in rows) else EXIT_SOLVER


def cmd_optimize(args, cfg, out):
    mesh0 = load_mesh(cfg)
    params = make_params(cfg)
    ep, c1 = make_eparams(cfg)
    fcfg = make_forward_config(cfg)
    ocfg = make_optimizer_config(cfg, fcfg)
    if args.max_iter is not None:
        ocfg = replace(ocfg, max_iter=args.max_iter)
    state0 = solve_forward(mesh0, params, fcfg)
    ep = resolve_c1(ep, c1, mesh0, state0)

    def snapshot(mesh, state, rec):
        print(f"iter {rec.iter:3d}  J = {rec.J:.6e}  |G| = {rec.grad_norm:.3e}  t = {rec.step:.3e}")
        if args.vtk:
            io.write_vtk(mesh, out / f"iter_{rec.iter:03d}.vtk", state_fields(state))

    mesh, hist = run(mesh0, params, ep, ocfg, callback=snapshot)
    io.write_csv(out / "history.csv", HISTORY_COLUMNS, hist.rows(), "history")
    io.write_gmsh(mesh, out / "final.msh", cfg.tag_map)
    print(f"stopped: {hist.message}")
    if cfg.sweep:
        rows = []
        threads = _threads()
        before = run_sweep(mesh0, params, fcfg, ep, cfg.sweep, threads)
        after = run_sweep(mesh, params, fcfg, ep, cfg.sweep, threads)
        for b, a in zip(before, after):
            red = 1.0 - a[3] / b[3] if b[3] else math.nan
            rows.append([b[0], b[1], b[3], a[3], red])
            print(f"d_p = {b[0]:.3e}  Stk = {b[1]:.4f}  E: {b[3]:.4e} -> {a[3]:.4e}  ({100 * red:.1f}%)")
        io.write_csv(out / "comparison.csv", ["d_p", "Stk", "E_initial", "E_final", "reduction"],
                     rows, "comparison")
    if len(hist) == 0 or (hist.message.startswith(("initial", "gradient stage"))):
        print(hist.message, file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_verify(args, cfg, out):
    from .verify import run_suite
    selection = args.checks if args.checks is not None else cfg.verify.get(
        "checks", "transformation,sensitivities,adjoint_transpose,taylor")
    selection = [s for s in str(selection).replace(",", " ").split() if s]
    if not selection:
        print("warning: no checks selected")
        return EXIT_OK
    mesh = load_mesh(replace(cfg, mesh=cfg.mesh if cfg.source else "builtin:bend-coarse"))
    params = make_params(cfg)
    results = run_suite(selection, mesh=mesh, params=params, mutate=args.mutate,
                        n_fields=int(cfg.verify.get("fields", 3)))
    report = []
    for r in results:
        print(r.line())
        detail = {k: v for k, v in r.detail.items() if k != "reports"}
        report.append({"name": r.name, "passed": r.passed, "value": r.value,
                       "threshold": r.threshold, "seconds": r.seconds, "detail": detail})
    (out / "verify.json").write_text(json.dumps(report, indent=2, default=float))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


COMMANDS = {"forward": cmd_forward, "sweep": cmd_sweep, "optimize": cmd_optimize,
            "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="eroopt", description="Erosion shape optimization in pipe bends.")
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="INI run configuration")
        s.add_argument("--out", type=Path, help="output directory (default from config)")
        s.add_argument("--vtk", action="store_true", help="write VTK fields")
        if name == "optimize":
            s.add_argument("--max-iter", type=int)
        if name == "verify":
            s.add_argument("--checks", help="comma separated check names")
            s.add_argument("--mutate", help="negate one volume block of the shape derivative")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _threads()
        cfg = io.load_config(args.config)
        out = Path(args.out or cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (UsageError,) + USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
