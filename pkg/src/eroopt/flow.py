"""Stationary incompressible Navier-Stokes: parameters, inflow profile and solver."""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .mesh import Tag
from .residuals import Coefficients, FlowOperator
from .solvers import NewtonConfig, NewtonError, newton

log = logging.getLogger(__name__)

GRAVITY = 9.81


@dataclass(frozen=True)
class SIInputs:
    """Dimensional inputs; defaults are the pipe-bend values with the largest particles."""

    rho_f: float = 1.18
    mu_f: float = 1.85e-5
    rho_p: float = 895.0
    d_p: float = 16e-6
    u_ref: float = 3.86
    d_t: float = 3.95e-3
    r_b: float = 1.13e-2
    g: float = GRAVITY
    K: float = 1e4
    Pe: float = 1e8
    alpha_in: float = 1.0


@dataclass(frozen=True)
class PhysicalParams:
    Re: float = 200.0
    Fr: float = 19.6
    Stk: float = 0.33
    K: float = 1e4
    Pe: float = 1e8
    gdir: tuple = (0.0, -1.0)
    rho_f: float = 1.18
    mu_f: float = 1.85e-5
    rho_p: float = 895.0
    d_p: float = 7.9e-6
    u_ref: float = 3.86
    L_ref: float = 3.95e-3
    alpha_in: float = 1.0
    De: float = float("nan")
    R0: float = float("nan")

    def __post_init__(self):
        for name in ("Re", "Fr", "Stk", "K", "Pe"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if abs(np.linalg.norm(self.gdir) - 1.0) > 1e-12:
            raise ValueError("gravity direction must be a unit vector")

    @property
    def rep_scale(self):
        """Factor turning a dimensionless relative speed into Re_p."""
        return self.rho_f * self.u_ref * self.d_p / self.mu_f

    def coefficients(self, Kinv=None):
        return Coefficients(self.Re, self.Fr, self.Stk, 1.0 / self.K if Kinv is None else Kinv,
                            self.Pe, tuple(self.gdir), self.rep_scale)

    def with_diameter(self, d_p):
        """Same flow, different particle species (Stk rescaled with d_p^2)."""
        tau_p = self.rho_p * d_p ** 2 / (18 * self.mu_f)
        return replace(self, d_p=d_p, Stk=tau_p * self.u_ref / (0.5 * self.L_ref))


def derive_dimensionless(si=SIInputs(), gdir=(0.0, -1.0)):
    for name, val in vars(si).items():
        if not val > 0:
            raise ValueError(f"{name} must be positive, got {val}")
    Re = si.rho_f * si.u_ref * si.d_t / si.mu_f
    tau_p = si.rho_p * si.d_p ** 2 / (18 * si.mu_f)
    Stk = tau_p * si.u_ref / (0.5 * si.d_t)
    Fr = si.u_ref / np.sqrt(si.d_t * si.g)
    R0 = 2 * si.r_b / si.d_t
    return PhysicalParams(Re=Re, Fr=Fr, Stk=Stk, K=si.K, Pe=si.Pe, gdir=tuple(gdir),
                          rho_f=si.rho_f, mu_f=si.mu_f, rho_p=si.rho_p, d_p=si.d_p,
                          u_ref=si.u_ref, L_ref=si.d_t, alpha_in=si.alpha_in,
                          De=Re / np.sqrt(R0), R0=R0)


# --------------------------------------------------------------------------
# inflow
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class InflowProfile:
    """Parabolic profile 6 * mean * s (1 - s) along the inward inlet normal."""

    origin: np.ndarray
    tangent: np.ndarray  # unit, along the inlet
    width: float
    direction: np.ndarray  # inward unit normal
    mean: float
    vertices: np.ndarray
    values: np.ndarray = field(repr=False)  # (nv, d), zero away from the inlet

    def __call__(self, points):
        s = np.clip((np.asarray(points) - self.origin) @ self.tangent / self.width, 0.0, 1.0)
        return (6.0 * self.mean * s * (1 - s))[..., None] * self.direction


def inflow_profile(mesh, mean_speed):
    facets = mesh.facets_with(Tag.INFLOW)
    if len(facets) == 0:
        raise ValueError("mesh has no inflow facets")
    normals = mesh.normals[facets]
    if np.max(np.abs(normals - normals[0])) > 1e-8:
        raise ValueError("non-planar inlet")
    n = normals[0]
    verts = np.unique(mesh.facets[facets])
    X = mesh.vertices[verts]
    t = np.array([-n[1], n[0]]) if mesh.dim == 2 else None
    if t is None:
        raise NotImplementedError("3D inflow profiles are not implemented")
    s = X @ t
    origin = X[np.argmin(s)]
    width = float(s.max() - s.min())
    prof = InflowProfile(origin, t, width, -n, float(mean_speed), verts,
                         np.zeros((mesh.n_vertices, mesh.dim)))
    prof.values[verts] = prof(X)
    return prof


def default_inflow(mesh, params):
    """Profile whose maximum is 2 = u_max / u_ref (u_ref is half the peak speed)."""
    return inflow_profile(mesh, 4.0 / 3.0)


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------


@dataclass
class FlowState:
    u_f: np.ndarray  # (nv, d)
    p: np.ndarray    # (nv,)
    newton_history: list = field(default_factory=list)

    @property
    def vector(self):
        return np.concatenate([self.u_f.ravel(), self.p])


def flow_dirichlet(mesh, inflow):
    """(dofs, values) for u_f: no-slip on walls (winning at corners), inflow elsewhere."""
    nv, d = mesh.n_vertices, mesh.dim
    wall = mesh.vertices_on(Tag.WALL)
    inlet = np.setdiff1d(mesh.vertices_on(Tag.INFLOW), wall)
    vals = np.zeros((nv, d))
    vals[inlet] = inflow.values[inlet]
    verts = np.union1d(wall, inlet)
    dofs = (d * verts[:, None] + np.arange(d)).ravel()
    return dofs, vals.ravel()[dofs]


def solve_navier_stokes(mesh, params, cfg=NewtonConfig(), inflow=None, initial=None):
    inflow = inflow if inflow is not None else default_inflow(mesh, params)
    nv, d = mesh.n_vertices, mesh.dim
    dofs, vals = flow_dirichlet(mesh, inflow)
    n = nv * (d + 1)
    free = np.setdiff1d(np.arange(n), dofs)
    x = np.zeros(n)
    if initial is not None:
        x[:] = initial.vector
    x[dofs] = vals

    def run(prm, x0, convection=True):
        op = FlowOperator(mesh, prm.coefficients(), convection)
        return newton(op.residual, op.jacobian, x0, free, cfg)

    if initial is None:
        x = run(params, x, convection=False).x
    history = []
    try:
        res = run(params, x)
        history = res.history
        x = res.x
    except NewtonError as exc:
        log.info("Newton failed at Re=%g (%s); continuing in Re", params.Re, exc)
        levels = np.geomspace(min(50.0, params.Re / 2), params.Re, 6)
        for Re in levels:
            res = run(replace(params, Re=float(Re)), x)
            x = res.x
        history = res.history
    u, p = x[: nv * d].reshape(nv, d), x[nv * d:]
    return FlowState(u.copy(), p.copy(), history)
