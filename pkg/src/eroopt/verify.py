"""Verification suite: finite-difference oracles, adjoint transposes, Taylor and mutation tests.

Each check returns a :class:`CheckResult`; :func:`run_suite` runs a selection.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .adjoint import drag_sensitivity_terms, solve_adjoint, transpose_report
from .erosion import ErosionParams, auto_c1, cost_functional, erosion_sensitivities
from .flow import PhysicalParams
from .forward import ForwardConfig, solve_forward
from .mesh import bend_mesh, rectangle_mesh
from .shape import (VOLUME_BLOCKS, random_admissible_field, restrict, shape_derivative_parts,
                    taylor_test, transformation_derivatives, transformation_quantities)

TAYLOR_STEPS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<16} value={self.value:.4g}  threshold={self.threshold:.4g}"


def _rel(a, b):
    scale = max(np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)


def check_transformation(n_fields=20, h=1e-6, tol=1e-6, seed=0, mesh=None):
    """Centered differences of detJ(t), detJ_G(t), M(t), n_t o T_t against the analytic t-derivatives."""
    mesh = rectangle_mesh(16, 16) if mesh is None else mesh
    rng = np.random.default_rng(seed)
    worst = 0.0
    names = ("detJ", "detJ_surf", "M", "n")
    per = dict.fromkeys(names, 0.0)
    for _ in range(n_fields):
        V = rng.standard_normal((mesh.n_vertices, mesh.dim))
        td = transformation_derivatives(mesh, V)
        p = transformation_quantities(mesh, V, h)
        q = transformation_quantities(mesh, V, -h)
        exact = (td.detJ_prime, td.detJsurf_prime, td.M_prime, td.n_prime)
        for name, a, b, e in zip(names, p, q, exact):
            err = _rel((a - b) / (2 * h), e)
            per[name] = max(per[name], err)
            worst = max(worst, err)
    return CheckResult("transformation", worst <= tol, worst, tol, per)


def _fd_grad(f, x, h):
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e.flat[k] = h
        g.flat[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def check_sensitivities(n_states=100, tol=1e-4, antisym_tol=1e-12, seed=0, d=2):
    """Erosion and drag sensitivities against central differences at random states."""
    from .erosion import erosion_rate
    from .residuals import drag_factor
    rng = np.random.default_rng(seed)
    ep = ErosionParams()
    c_rep = PhysicalParams().rep_scale
    err_e, err_d, anti = 0.0, 0.0, 0.0
    n_done = 0
    while n_done < n_states:
        n = rng.standard_normal(d)
        n /= np.linalg.norm(n)
        u = rng.standard_normal(d)
        s = u @ n / np.linalg.norm(u)
        if s < 0.05 or s > 0.98 or abs(u @ n) < 10 * ep.eps_n:
            continue  # stay clear of the smoothing band and the s = 1 corner
        a = rng.uniform(0.1, 2.0)
        g = lambda a_, u_, n_: 0.5 * erosion_rate(a_, u_, n_, ep) ** 2
        ga, gu, gn = erosion_sensitivities(a, u, n, ep)
        h = 1e-6
        fa = (g(a + h, u, n) - g(a - h, u, n)) / (2 * h)
        fu = _fd_grad(lambda x: g(a, x, n), u, h)
        fn = _fd_grad(lambda x: g(a, u, x), n, h)
        err_e = max(err_e, _rel(np.array([ga]), np.array([fa])), _rel(gu, fu), _rel(gn, fn))

        uf, up, z = rng.standard_normal((3, d))
        if np.linalg.norm(up - uf) < 1e-2:
            continue
        dtil = lambda f_, p_: float(np.real(drag_factor(p_ - f_, c_rep)) * (p_ - f_) @ z)
        duf, dup = drag_sensitivity_terms(uf, up, z, PhysicalParams())
        err_d = max(err_d, _rel(duf, _fd_grad(lambda x: dtil(x, up), uf, 1e-7)),
                    _rel(dup, _fd_grad(lambda x: dtil(uf, x), up, 1e-7)))
        anti = max(anti, float(np.abs(duf + dup).max()))
        n_done += 1
    worst = max(err_e, err_d)
    ok = worst <= tol and anti <= antisym_tol
    return CheckResult("sensitivities", ok, worst, tol,
                       {"erosion": err_e, "drag": err_d, "antisymmetry": anti})


def default_params(d_p=16e-6, Re=200.0):
    return PhysicalParams(Re=Re).with_diameter(d_p)


def check_transpose(mesh=None, params=None, tol=1e-10):
    mesh = bend_mesh(2, 6, 3, 3) if mesh is None else mesh
    params = default_params() if params is None else params
    state = solve_forward(mesh, params)
    gaps = transpose_report(mesh, state)
    worst = max(gaps.values())
    gaps["flow_dofs"] = mesh.n_vertices * (mesh.dim + 1)
    return CheckResult("adjoint_transpose", worst <= tol, worst, tol, gaps)


@dataclass
class TaylorSetup:
    """Reference state, adjoint and the assembled derivative parts on one mesh."""

    mesh: object
    params: object
    eparams: object
    state: object
    adjoint: object
    parts: object
    cfg: object

    @classmethod
    def build(cls, mesh, params, eparams=None, cfg=None):
        cfg = ForwardConfig.tight() if cfg is None else cfg
        state = solve_forward(mesh, params, cfg)
        eparams = auto_c1(mesh, state, ErosionParams()) if eparams is None else eparams
        adjoint = solve_adjoint(mesh, state, eparams)
        parts = shape_derivative_parts(mesh, state, adjoint, eparams)
        return cls(mesh, params, eparams, state, adjoint, parts, cfg)

    def dual(self, signs=None):
        return restrict(self.mesh, self.parts.total(signs))

    def functional(self, m):
        s = solve_forward(m, self.params, self.cfg, warm=self.state)
        return cost_functional(m, s, self.eparams).J, s.partition

    def taylor(self, V, steps=TAYLOR_STEPS, signs=None):
        dJ = float(np.sum(self.dual(signs) * V))
        J0 = cost_functional(self.mesh, self.state, self.eparams).J
        return taylor_test(self.functional, self.mesh, V, dJ, steps, J0=J0)


def check_taylor(setup=None, n_fields=3, seed=1, steps=TAYLOR_STEPS, signs=None, lo=1.8, hi=2.2):
    setup = TaylorSetup.build(bend_mesh(), default_params()) if setup is None else setup
    slopes, reports = [], []
    for k in range(n_fields):
        V = random_admissible_field(setup.mesh, seed + k)
        rep = setup.taylor(V, steps, signs)
        reports.append(rep)
        slopes.append(rep.slope)
    ok = all(lo <= s <= hi for s in slopes)
    worst = max(slopes, key=lambda s: abs(s - 2.0))
    name = "taylor" if not signs else "taylor_mutated"
    return CheckResult(name, ok, worst, hi,
                       {"slopes": slopes,
                        "partition_changed": [r.partition_changed for r in reports],
                        "reports": reports})


def check_mutation(setup=None, taylor=None, limit=1.5, blocks=VOLUME_BLOCKS):
    """Negate each volume block in turn and re-fit the slope from the same function values.

    The criterion is that every mutated slope falls below ``limit`` for at
    least one of the deformation fields.
    """
    setup = TaylorSetup.build(bend_mesh(), default_params()) if setup is None else setup
    taylor = check_taylor(setup) if taylor is None else taylor
    reports = taylor.detail["reports"]
    fields_ = [random_admissible_field(setup.mesh, 1 + k) for k in range(len(reports))]
    per = {}
    for name in blocks:
        blk = restrict(setup.mesh, setup.parts.blocks[name])
        slopes = [rep.with_derivative(rep.dJ - 2.0 * float(np.sum(blk * V))).slope
                  for rep, V in zip(reports, fields_)]
        per[name] = min(slopes)
    worst = max(per.values())
    return CheckResult("mutation", worst < limit, worst, limit, per)


def poiseuille_error(ny, Re=10.0, length=2.0):
    """(L2 velocity error, relative mass imbalance, mesh) for channel flow with exact parabola."""
    from .erosion import _facet_values, wall_quadrature
    from .fem import cell_rule, interp
    from .flow import inflow_profile, solve_navier_stokes
    from .mesh import Tag
    mesh = rectangle_mesh(int(round(length * ny)), ny, length, 1.0)
    params = PhysicalParams(Re=Re, Fr=1e8)  # gravity negligible: pure pressure-driven flow
    flow = solve_navier_stokes(mesh, params, inflow=inflow_profile(mesh, 1.0))
    lam, w = cell_rule(2)
    xq = np.einsum("qa,eai->eqi", lam, mesh.vertices[mesh.cells])
    uq = interp(lam, flow.u_f[mesh.cells])
    y = xq[..., 1]
    exact = np.stack([6 * y * (1 - y), np.zeros_like(y)], axis=-1)
    err = float(np.sqrt(np.sum(mesh.volumes[:, None] * w * np.sum((uq - exact) ** 2, axis=-1))))
    flux = {}
    for tag in (Tag.INFLOW, Tag.OUTFLOW):
        q = wall_quadrature(mesh, (tag,))
        _, u, n = _facet_values(mesh, q, np.ones(mesh.n_vertices), flow.u_f)
        flux[tag] = float(np.sum(q.weights * np.sum(u * n, axis=-1)))
    balance = abs(flux[Tag.INFLOW] + flux[Tag.OUTFLOW]) / abs(flux[Tag.INFLOW])
    return err, balance, mesh


def check_poiseuille(levels=(8, 16, 32), min_order=1.8, mass_tol=0.01):
    """Least-squares L2 convergence order over the refinement levels and coarse mass balance."""
    errs, balances, hs = [], [], []
    for ny in levels:
        e, b, _ = poiseuille_error(ny)
        errs.append(e)
        balances.append(b)
        hs.append(1.0 / ny)
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = order >= min_order and balances[0] <= mass_tol
    return CheckResult("poiseuille", ok, order, min_order,
                       {"levels": list(levels), "errors": errs, "mass_balance": balances})


TABLE1 = {"De": (419.0, 0.01), "Stk": (1.34, 0.02), "Re": (1000.0, 0.05)}


def check_table1():
    """Dimensionless numbers from the SI inputs against the tabulated values."""
    from .flow import SIInputs, derive_dimensionless
    p = derive_dimensionless(SIInputs())
    got = {"De": p.De, "Stk": p.Stk, "Re": p.Re}
    rel = {k: abs(got[k] - ref) / ref for k, (ref, _) in TABLE1.items()}
    ok = {k: rel[k] <= TABLE1[k][1] for k in TABLE1}
    worst = max(rel[k] / TABLE1[k][1] for k in TABLE1)
    return CheckResult("table1", all(ok.values()), worst, 1.0,
                       {"values": got, "relative_error": rel, "passed": ok})


CHECKS = {
    "transformation": check_transformation,
    "sensitivities": check_sensitivities,
    "adjoint_transpose": check_transpose,
    "taylor": check_taylor,
    "mutation": check_mutation,
    "poiseuille": check_poiseuille,
    "table1": check_table1,
}


def run_suite(selection=None, mesh=None, params=None, mutate=None, n_fields=3):
    """Run the named checks; ``mutate`` negates one volume block in the Taylor check."""
    selection = list(CHECKS) if selection is None else list(selection)
    unknown = [s for s in selection if s not in CHECKS]
    if unknown:
        raise ValueError(f"unknown check(s) {unknown}; available: {list(CHECKS)}")
    if mutate is not None and mutate not in VOLUME_BLOCKS:
        raise ValueError(f"unknown block {mutate!r}; available: {list(VOLUME_BLOCKS)}")
    params = default_params() if params is None else params
    results = []
    setup = taylor = None
    for name in selection:
        t0 = time.perf_counter()
        if name in ("taylor", "mutation"):
            if setup is None:
                setup = TaylorSetup.build(bend_mesh() if mesh is None else mesh, params)
            if name == "taylor":
                signs = {mutate: -1.0} if mutate else None
                res = taylor = check_taylor(setup, n_fields=n_fields, signs=signs)
            else:
                if taylor is None or mutate:
                    taylor = check_taylor(setup, n_fields=n_fields)
                res = check_mutation(setup, taylor)
        elif name == "adjoint_transpose":
            res = check_transpose(params=params)
        else:
            res = CHECKS[name]()
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
