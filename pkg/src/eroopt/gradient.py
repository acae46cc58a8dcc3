"""From the shape-derivative functional to a smooth deformation field.

Pipeline: Lamé extension mu, elasticity projection A(G, .) = dJ, the
saddle-point correction that removes tangential modes, and the restricted
gradient G - Pi. All fields vanish on fixed boundary vertices.

The normal-trace multiplier F lives on free deformable vertices and pairs
with Theta through the lumped boundary form N(F, Theta) = sum_i m_i F_i
(Theta_i . n_i), with m_i the trapezoid weight and n_i the vertex normal; the
same quadrature backs ``gradient_norm``.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fem import assemble_form, apply_dirichlet, vector_dofmap
from .mesh import vertex_normals
from .solvers import ConvergenceRecord, LinearSolverConfig, SolverError, solve_linear


class GradientError(RuntimeError):
    pass


@dataclass(frozen=True)
class LameField:
    mu_star: np.ndarray
    mu: np.ndarray
    lam: float = 0.0


@dataclass(frozen=True)
class GradientConfig:
    mu_min: float = 1.0
    mu_max: float = 100.0
    linear: LinearSolverConfig = LinearSolverConfig()
    saddle: str = "minres"        # minres (block Jacobi), cg (unpreconditioned) or direct
    saddle_rtol: float = 1e-12
    saddle_maxiter: int = 50000

    def __post_init__(self):
        if not self.mu_max >= self.mu_min > 0:
            raise ValueError("need mu_max >= mu_min > 0")
        if self.saddle not in ("minres", "cg", "direct"):
            raise ValueError(f"unknown saddle solver {self.saddle!r}")


@dataclass
class ShapeGradient:
    G: np.ndarray
    F: np.ndarray
    Pi: np.ndarray
    G_restricted: np.ndarray
    records: dict = field(default_factory=dict)


def solve_lame_extension(mesh, mu_min=1.0, mu_max=100.0, lin=LinearSolverConfig()):
    """Discrete harmonic mu* with mu_max on deformable and mu_min on other boundary vertices."""
    if not mu_max >= mu_min > 0:
        raise ValueError("need mu_max >= mu_min > 0")
    A, _ = assemble_form(mesh, "a")
    vals = np.full(mesh.n_vertices, float(mu_min))
    vals[mesh.deformable_vertices] = mu_max
    bnd = mesh.boundary_vertices
    A, b = apply_dirichlet(A, np.zeros(mesh.n_vertices), zip(bnd, vals[bnd]), symmetric=True)
    mu_star, rec = solve_linear(A, b, lin)
    if not rec.converged:
        raise GradientError(f"Lamé extension failed: {rec.message}")
    return LameField(mu_star, np.sqrt(mu_star))


def elasticity_matrix(mesh, lame):
    """A(G, T) = int 2 mu eps(G) : eps(T) with lambda = 0, P1 mu integrated exactly."""
    grads, vol = mesh.grads, mesh.volumes
    mu_bar = lame.mu[mesh.cells].mean(axis=1)
    d = mesh.dim
    gg = np.einsum("eaj,ebj->eab", grads, grads)
    local = np.einsum("eab,ij->eaibj", gg, np.eye(d)) + np.einsum("eaj,ebi->eaibj", grads, grads)
    if lame.lam:
        local += lame.lam * np.einsum("eai,ebj->eaibj", grads, grads)
    nl = d + 1
    local = (mu_bar * vol)[:, None, None] * local.reshape(-1, nl * d, nl * d)
    n = mesh.n_vertices * d
    return kernels.assemble_matrix(vector_dofmap(mesh.cells, d), local, (n, n))


def free_dofs(mesh):
    d = mesh.dim
    fixed = mesh.fixed_vertices
    if len(fixed) == 0:
        raise GradientError("no fixed boundary: the elasticity form has a rigid-body nullspace")
    mask = np.ones(mesh.n_vertices, dtype=bool)
    mask[fixed] = False
    verts = np.flatnonzero(mask)
    return (d * verts[:, None] + np.arange(d)).ravel()


def project_gradient(mesh, dJ, lame, lin=LinearSolverConfig()):
    """G with A(G, T) = dJ(T) for all admissible T."""
    d = mesh.dim
    b = np.asarray(dJ, float).ravel()
    free = free_dofs(mesh)
    A = elasticity_matrix(mesh, lame)
    G = np.zeros(mesh.n_vertices * d)
    sol, rec = solve_linear(A[free][:, free], b[free], lin)
    if not rec.converged:
        raise GradientError(f"elasticity projection failed: {rec.message}")
    G[free] = sol
    return G.reshape(-1, d)


# --------------------------------------------------------------------------
# lumped boundary quadrature
# --------------------------------------------------------------------------


def trapezoid_weights(mesh, facets=None):
    """Vertex weights of the trapezoid rule over the given facets (default: deformable)."""
    facets = np.flatnonzero(mesh.deformable_mask) if facets is None else facets
    w = np.zeros(mesh.n_vertices)
    share = mesh.facet_measures[facets] / mesh.facets.shape[1]
    for k in range(mesh.facets.shape[1]):
        np.add.at(w, mesh.facets[facets, k], share)
    return w


def normal_trace(mesh, W):
    return np.einsum("vi,vi->v", np.asarray(W, float).reshape(-1, mesh.dim), vertex_normals(mesh))


def gradient_norm(G, mesh):
    """sqrt(int_{Gamma_d} (G.n)^2) by the trapezoid rule with vertex normals."""
    w = trapezoid_weights(mesh)
    return float(np.sqrt(np.sum(w * normal_trace(mesh, G) ** 2)))


def constraint_matrix(mesh):
    """N as a (n_F, nv*d) matrix; rows = free deformable vertices."""
    d = mesh.dim
    verts = mesh.deformable_vertices
    w = trapezoid_weights(mesh)[verts]
    n = vertex_normals(mesh)[verts]
    rows = np.repeat(np.arange(len(verts)), d)
    cols = (d * verts[:, None] + np.arange(d)).ravel()
    vals = (w[:, None] * n).ravel()
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(verts), mesh.n_vertices * d)), verts


# --------------------------------------------------------------------------
# saddle-point correction
# --------------------------------------------------------------------------


def _block_jacobi(Aff, Nf):
    da = Aff.diagonal()
    ia = 1.0 / da
    schur = np.asarray(Nf.multiply(Nf) @ ia).ravel()
    isc = 1.0 / np.where(schur > 0, schur, 1.0)
    inv = np.concatenate([ia, isc])
    n = len(inv)
    return spla.LinearOperator((n, n), matvec=lambda r: inv * np.ravel(r))


def correct_gradient(mesh, dJ, lame, cfg=GradientConfig()):
    """(F, Pi, record) from  N(E, Pi) = 0,  N(F, T) + A(Pi, T) = dJ(T)."""
    d = mesh.dim
    free = free_dofs(mesh)
    A = elasticity_matrix(mesh, lame)
    N, verts = constraint_matrix(mesh)
    Aff = A[free][:, free]
    Nf = N[:, free]
    K = sp.bmat([[Aff, Nf.T], [Nf, None]], format="csr")
    rhs = np.concatenate([np.asarray(dJ, float).ravel()[free], np.zeros(len(verts))])
    nrm = np.linalg.norm(rhs)
    if nrm == 0:
        x, rec = np.zeros_like(rhs), ConvergenceRecord(True, 0, 0.0, "zero right-hand side")
    elif cfg.saddle == "direct":
        x, rec = solve_linear(K, rhs, LinearSolverConfig(method="direct"))
    else:
        its = []
        M = _block_jacobi(Aff, Nf) if cfg.saddle == "minres" else None
        solver = spla.minres if cfg.saddle == "minres" else spla.cg
        x, info = solver(K, rhs, rtol=cfg.saddle_rtol, maxiter=cfg.saddle_maxiter, M=M,
                         callback=lambda xk: its.append(1))
        res = float(np.linalg.norm(rhs - K @ x) / nrm)
        ok = info == 0 or res <= 1e3 * cfg.saddle_rtol
        rec = ConvergenceRecord(ok, len(its), res, "" if ok else f"stagnated (info={info})")
    if not rec.converged:
        raise GradientError(f"saddle-point correction failed: {rec.message}")
    Pi = np.zeros(mesh.n_vertices * d)
    Pi[free] = x[: len(free)]
    F = np.zeros(mesh.n_vertices)
    F[verts] = x[len(free):]
    return F, Pi.reshape(-1, d), rec


def restricted_gradient(G, Pi):
    return np.asarray(G) - np.asarray(Pi)


def shape_gradient(mesh, dJ, cfg=GradientConfig()):
    """Full pipeline: Lamé field, projection, correction and restriction."""
    lame = solve_lame_extension(mesh, cfg.mu_min, cfg.mu_max, cfg.linear)
    G = project_gradient(mesh, dJ, lame, cfg.linear)
    F, Pi, rec = correct_gradient(mesh, dJ, lame, cfg)
    return ShapeGradient(G, F, Pi, restricted_gradient(G, Pi), {"saddle": rec, "lame": lame})


def tangentiality_ratio(mesh, G, Pi):
    """int (Pi.n)^2 / int (G.n)^2 with the trapezoid rule on the deformable boundary."""
    num = gradient_norm(Pi, mesh) ** 2
    den = gradient_norm(G, mesh) ** 2
    return 0.0 if num == 0 else num / den if den > 0 else np.inf


def pairing(A, X, Y):
    return float(np.ravel(X) @ (A @ np.ravel(Y)))


__all__ = [
    "GradientConfig", "GradientError", "LameField", "ShapeGradient", "SolverError",
    "solve_lame_extension", "elasticity_matrix", "project_gradient", "correct_gradient",
    "restricted_gradient", "shape_gradient", "gradient_norm", "tangentiality_ratio",
]
