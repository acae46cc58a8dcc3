"""Eulerian particle phase: momentum with Schiller-Naumann drag and volume-fraction transport."""

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .fem import apply_dirichlet
from .mesh import Tag
from .residuals import REL_SPEED_FLOOR, ParticleOperator, TransportOperator, drag_factor
from .solvers import LinearSolverConfig, NewtonConfig, NewtonError, newton, solve_linear

log = logging.getLogger(__name__)

RE_P_LIMIT = 1000.0


class ParticleSolveError(RuntimeError):
    pass


def particle_reynolds(u_f, u_p, params):
    """Re_p from dimensionless velocities; warns beyond the correlation's validity."""
    rel = np.linalg.norm(np.asarray(u_p, float) - np.asarray(u_f, float), axis=-1)
    rep = params.rep_scale * rel
    if np.any(rep >= RE_P_LIMIT):
        warnings.warn(f"particle Reynolds number {np.max(rep):.1f} exceeds {RE_P_LIMIT:g}",
                      RuntimeWarning, stacklevel=2)
    return rep


def drag_coefficient(u_f, u_p, params):
    rel = np.asarray(u_p) - np.asarray(u_f)
    return np.real(drag_factor(rel, params.rep_scale))


@dataclass(frozen=True)
class RampConfig:
    start: float = 1e-2
    factor: float = 10.0
    floor: float = 1e-4

    def levels(self, K):
        final = max(1.0 / K, self.floor)
        out = [self.start]
        while out[-1] / self.factor > final * (1 + 1e-12):
            out.append(out[-1] / self.factor)
        if out[-1] != final:
            out.append(final)
        return [lv for lv in out if lv >= final]


@dataclass
class FacetPartition:
    minus: np.ndarray  # bool per boundary facet: u_p . n <= 0

    @property
    def plus(self):
        return ~self.minus

    def __eq__(self, other):
        return isinstance(other, FacetPartition) and np.array_equal(self.minus, other.minus)


def particle_dirichlet(mesh, inflow_values):
    d = mesh.dim
    verts = mesh.vertices_on(Tag.INFLOW)
    dofs = (d * verts[:, None] + np.arange(d)).ravel()
    return dofs, np.asarray(inflow_values).ravel()[dofs]


def solve_particle_velocity(mesh, flow, params, ramp=RampConfig(), cfg=NewtonConfig(),
                            inflow_values=None, initial=None):
    """Continuation in the artificial viscosity K^-1, each level warm-started."""
    nv, d = mesh.n_vertices, mesh.dim
    if inflow_values is None:
        inflow_values = flow.u_f
    dofs, vals = particle_dirichlet(mesh, inflow_values)
    free = np.setdiff1d(np.arange(nv * d), dofs)
    x = (flow.u_f if initial is None else initial).ravel().copy()
    x[dofs] = vals
    for Kinv in ramp.levels(params.K):
        op = ParticleOperator(mesh, params.coefficients(Kinv), flow.u_f)
        try:
            x = newton(op.residual, op.jacobian, x, free, cfg).x
        except NewtonError as exc:
            raise ParticleSolveError(f"particle Newton failed at K^-1 = {Kinv:g}: {exc}") from exc
    return x.reshape(nv, d)


def facet_midpoint_flux(mesh, u_p):
    mid = np.asarray(u_p)[mesh.facets].mean(axis=1)
    return np.einsum("fi,fi->f", mid, mesh.normals)


def classify_boundary(mesh, u_p):
    return FacetPartition(facet_midpoint_flux(mesh, u_p) <= 0.0)


def transport_dirichlet(mesh, partition, alpha_in):
    """alpha = alpha_in on the inlet (priority), 0 on the rest of Gamma-minus."""
    inlet = mesh.vertices_on(Tag.INFLOW)
    minus = mesh.facets[partition.minus & (mesh.facet_tags != Tag.INFLOW)]
    zero = np.setdiff1d(np.unique(minus), inlet)
    dofs = np.concatenate([inlet, zero])
    vals = np.concatenate([np.full(len(inlet), float(alpha_in)), np.zeros(len(zero))])
    return dofs, vals


def solve_volume_fraction(mesh, u_p, partition, params, lin=LinearSolverConfig()):
    op = TransportOperator(mesh, params.coefficients(), u_p)
    A = op.jacobian(np.zeros(mesh.n_vertices))
    dofs, vals = transport_dirichlet(mesh, partition, params.alpha_in)
    A, b = apply_dirichlet(A, np.zeros(mesh.n_vertices), zip(dofs, vals), symmetric=True)
    alpha, rec = solve_linear(A, b, lin)
    if not rec.converged:
        raise ParticleSolveError(f"volume-fraction solve failed: {rec.message}")
    return alpha


__all__ = [
    "FacetPartition", "RampConfig", "ParticleSolveError", "REL_SPEED_FLOOR",
    "particle_reynolds", "drag_coefficient", "solve_particle_velocity",
    "classify_boundary", "solve_volume_fraction",
]
