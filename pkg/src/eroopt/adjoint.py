"""The three adjoint problems, solved in order: transport, particle velocity, fluid.

The Galerkin parts of each adjoint operator are assembled from their
integrated-by-parts weak forms; the stabilization parts are transposes of the
forward stabilization Jacobians, so every adjoint matrix is exactly the
transpose of the forward linearization on the free dofs.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .erosion import erosion_state_gradient
from .fem import (boundary_mass, cell_rule, facet_rule, flow_dofmap, grad, interp,
                  vector_dofmap)
from .flow import flow_dirichlet
from .mesh import Tag
from .particles import particle_dirichlet, transport_dirichlet
from .residuals import (REL_SPEED_FLOOR, FlowOperator, ParticleOperator, TransportOperator,
                        drag_factor)
from .solvers import LinearSolverConfig, solve_linear


class AdjointOrderError(RuntimeError):
    """Raised when an adjoint stage is requested before the one it depends on."""


class AdjointSolveError(RuntimeError):
    pass


@dataclass
class AdjointState:
    z_uf: np.ndarray
    z_p: np.ndarray
    z_up: np.ndarray
    z_alpha: np.ndarray

    @property
    def flow_vector(self):
        return np.concatenate([self.z_uf.ravel(), self.z_p])


# --------------------------------------------------------------------------
# drag sensitivities
# --------------------------------------------------------------------------


def drag_sensitivity_terms(u_f, u_p, z_up, params):
    """(d dtilde/d u_f, d dtilde/d u_p) for dtilde = d_SN (u_p - u_f) . z_up."""
    u_f, u_p, z = (np.asarray(a, float) for a in (u_f, u_p, z_up))
    c = params.rep_scale if hasattr(params, "rep_scale") else params.c_rep
    w = u_p - u_f
    speed = np.maximum(np.linalg.norm(w, axis=-1), REL_SPEED_FLOOR)
    dsn = np.real(drag_factor(w, c))
    ddsn_duf = (0.10305 * c ** 0.687 / speed ** 1.313)[..., None] * (u_f - u_p)
    wz = np.sum(w * z, axis=-1)
    d_uf = wz[..., None] * ddsn_duf - dsn[..., None] * z
    return d_uf, -d_uf


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _free(n, dofs):
    return np.setdiff1d(np.arange(n), dofs)


def _expand(local, d):
    ne, n, _ = local.shape
    out = np.zeros((ne, n, d, n, d))
    for k in range(d):
        out[:, :, k, :, k] = local
    return out.reshape(ne, n * d, n * d)


def _facet_flux_mass(mesh, facets, u):
    """int_facets (u . n) phi_a phi_b as a scalar nv x nv matrix."""
    lam, w = facet_rule(mesh.dim)
    fv = mesh.facets[facets]
    un = np.einsum("qa,fai,fi->fq", lam, u[fv], mesh.normals[facets])
    local = np.einsum("q,f,fq,qa,qb->fab", w, mesh.facet_measures[facets], un, lam, lam)
    nv = mesh.n_vertices
    return kernels.assemble_matrix(fv, local, (nv, nv))


def _expand_global(S, d):
    """Scalar operator -> the same operator on every vector component (interleaved)."""
    import scipy.sparse as sp
    S = sp.coo_matrix(S)
    rows = (d * S.row[:, None] + np.arange(d)).ravel()
    cols = (d * S.col[:, None] + np.arange(d)).ravel()
    vals = np.repeat(S.data, d)
    return sp.csr_matrix((vals, (rows, cols)), shape=(S.shape[0] * d, S.shape[1] * d))


# --------------------------------------------------------------------------
# adjoint operators (full, before restriction to free dofs)
# --------------------------------------------------------------------------


def transport_adjoint_matrix(mesh, state):
    """Rows: test phi_alpha, columns: z_alpha."""
    c = state.coeffs
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(mesh.dim)
    cells = mesh.cells
    upq = interp(lam, state.u_p[cells])
    conv = -np.einsum("q,qa,eqj,ebj->eab", w, lam, upq, grads)
    diff = np.einsum("eaj,ebj->eab", grads, grads) / c.Pe
    local = (conv + diff) * vol[:, None, None]
    nv = mesh.n_vertices
    A = kernels.assemble_matrix(cells, local, (nv, nv))
    A = A + _facet_flux_mass(mesh, np.flatnonzero(state.partition.plus), state.u_p)
    op = TransportOperator(mesh, c, state.u_p)
    return (A + op.jacobian(state.alpha, parts="stab").T).tocsr()


def particle_adjoint_matrix(mesh, state):
    """Rows: test phi_up, columns: z_up."""
    c = state.coeffs
    d = mesh.dim
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(d)
    cells = mesh.cells
    upq = interp(lam, state.u_p[cells])
    ufq = interp(lam, state.u_f[cells])
    Dup = grad(grads, state.u_p[cells])
    divup = np.trace(Dup, axis1=1, axis2=2)
    mass = np.einsum("q,qa,qb->ab", w, lam, lam)
    scalar = -np.einsum("q,qa,eqj,ebj->eab", w, lam, upq, grads)
    scalar -= divup[:, None, None] * mass[None]
    scalar += c.Kinv * np.einsum("eaj,ebj->eab", grads, grads)
    local = _expand(scalar, d)
    # (Du_p^T z) . phi : entry (a,i),(b,j) = int Du_ji phi_a phi_b
    local += np.einsum("eji,ab->eaibj", Dup, mass).reshape(local.shape)
    # drag: (d dtilde/du_p) . phi, linear in z; column j from z = e_j
    Mq = np.empty(upq.shape + (d,))
    for j in range(d):
        ej = np.zeros(d)
        ej[j] = 1.0
        Mq[..., j] = drag_sensitivity_terms(ufq, upq, np.broadcast_to(ej, upq.shape), c)[1]
    local += (2.0 / c.Stk) * np.einsum("q,eqij,qa,qb->eaibj", w, Mq, lam, lam).reshape(local.shape)
    local *= vol[:, None, None]
    nv = mesh.n_vertices
    dof = vector_dofmap(cells, d)
    A = kernels.assemble_matrix(dof, local, (nv * d, nv * d))
    not_inlet = np.flatnonzero(mesh.facet_tags != Tag.INFLOW)
    A = A + _expand_global(_facet_flux_mass(mesh, not_inlet, state.u_p), d)
    op = ParticleOperator(mesh, c, state.u_f)
    return (A + op.jacobian(state.u_p, parts="stab").T).tocsr()


def flow_adjoint_matrix(mesh, state):
    """Rows: test (phi, q), columns: (z_uf, z_p)."""
    c = state.coeffs
    d = mesh.dim
    nv = mesh.n_vertices
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(d)
    cells = mesh.cells
    nl = d + 1
    uq = interp(lam, state.u_f[cells])
    Du = grad(grads, state.u_f[cells])
    divu = np.trace(Du, axis1=1, axis2=2)
    mass = np.einsum("q,qa,qb->ab", w, lam, lam)
    scalar = -np.einsum("q,qa,eqj,ebj->eab", w, lam, uq, grads)
    scalar -= divu[:, None, None] * mass[None]
    scalar += np.einsum("eaj,ebj->eab", grads, grads) / c.Re
    vel = _expand(scalar, d)
    vel += np.einsum("eji,ab->eaibj", Du, mass).reshape(vel.shape)
    ne = len(cells)
    local = np.zeros((ne, nl * (d + 1), nl * (d + 1)))
    local[:, : nl * d, : nl * d] = vel
    # z_p div phi: row (a,i), column p_b -> int lam_b d_i phi_a
    zp = (1.0 / nl) * np.einsum("eai,b->eaib", grads, np.ones(nl)).reshape(ne, nl * d, nl)
    local[:, : nl * d, nl * d:] = zp
    local[:, nl * d:, : nl * d] = -np.transpose(zp, (0, 2, 1))
    local *= vol[:, None, None]
    dof = flow_dofmap(cells, d, nv)
    n = nv * (d + 1)
    A = kernels.assemble_matrix(dof, local, (n, n))
    outlet = mesh.facets_with(Tag.OUTFLOW)
    B = _expand_global(_facet_flux_mass(mesh, outlet, state.u_f), d)
    import scipy.sparse as sp
    A = A + sp.block_diag([B, sp.csr_matrix((nv, nv))], format="csr")
    op = FlowOperator(mesh, c)
    return (A + op.jacobian(state.flow_vector, parts="stab").T).tocsr()


def transport_coupling_rhs(mesh, state, z_alpha):
    """(dR_alpha/du_p)^T z_alpha = int div(alpha phi) z_alpha + stabilization."""
    d = mesh.dim
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(d)
    cells = mesh.cells
    aq = interp(lam, state.alpha[cells])
    zq = interp(lam, z_alpha[cells])
    ga = grad(grads, state.alpha[cells])
    # phi = lam_a e_i: div(alpha phi) = alpha d_i lam_a + lam_a d_i alpha
    loc = np.einsum("q,eq,eq,eai->eai", w, aq, zq, grads)
    loc += np.einsum("q,eq,qa,ei->eai", w, zq, lam, ga)
    loc *= vol[:, None, None]
    out = kernels.assemble_vector(vector_dofmap(cells, d), loc.reshape(len(cells), -1),
                                  mesh.n_vertices * d)
    op = TransportOperator(mesh, state.coeffs, state.u_p)
    return out + op.jacobian(state.alpha, parts="stab", wrt="u_p").T @ z_alpha


def drag_coupling_rhs(mesh, state, z_up):
    """(dR_up/du_f)^T z_up: int 2/Stk (d dtilde/du_f) . phi + stabilization."""
    c = state.coeffs
    d = mesh.dim
    vol = mesh.volumes
    lam, w = cell_rule(d)
    cells = mesh.cells
    ufq = interp(lam, state.u_f[cells])
    upq = interp(lam, state.u_p[cells])
    zq = interp(lam, z_up.reshape(-1, d)[cells])
    d_uf, _ = drag_sensitivity_terms(ufq, upq, zq, c)
    loc = (2.0 / c.Stk) * np.einsum("q,eqi,qa->eai", w, d_uf, lam) * vol[:, None, None]
    out = kernels.assemble_vector(vector_dofmap(cells, d), loc.reshape(len(cells), -1),
                                  mesh.n_vertices * d)
    op = ParticleOperator(mesh, c, state.u_f)
    return out + op.jacobian(state.u_p, parts="stab", wrt="u_f").T @ z_up.ravel()


# --------------------------------------------------------------------------
# solves
# --------------------------------------------------------------------------


def _solve_restricted(A, rhs, fixed, lin):
    n = A.shape[0]
    free = _free(n, fixed)
    z = np.zeros(n)
    sol, rec = solve_linear(A[free][:, free], rhs[free], lin)
    if not rec.converged:
        raise AdjointSolveError(rec.message)
    z[free] = sol
    return z


def solve_adjoint_transport(mesh, state, dg_dalpha, lin=LinearSolverConfig()):
    dofs, _ = transport_dirichlet(mesh, state.partition, 1.0)
    A = transport_adjoint_matrix(mesh, state)
    return _solve_restricted(A, -np.asarray(dg_dalpha, float), dofs, lin)


def solve_adjoint_particle_velocity(mesh, state, z_alpha, dg_dup, lin=LinearSolverConfig()):
    if z_alpha is None:
        raise AdjointOrderError("solve the adjoint transport problem first")
    d = mesh.dim
    dofs, _ = particle_dirichlet(mesh, np.zeros((mesh.n_vertices, d)))
    A = particle_adjoint_matrix(mesh, state)
    rhs = -np.asarray(dg_dup, float).ravel() - transport_coupling_rhs(mesh, state, z_alpha)
    return _solve_restricted(A, rhs, dofs, lin).reshape(-1, d)


def solve_adjoint_flow(mesh, state, z_up, lin=LinearSolverConfig()):
    if z_up is None:
        raise AdjointOrderError("solve the adjoint particle problem first")
    nv, d = mesh.n_vertices, mesh.dim
    dofs, _ = flow_dirichlet(mesh, state.inflow)
    A = flow_adjoint_matrix(mesh, state)
    rhs = np.zeros(nv * (d + 1))
    rhs[: nv * d] = -drag_coupling_rhs(mesh, state, z_up)
    z = _solve_restricted(A, rhs, dofs, lin)
    return z[: nv * d].reshape(nv, d), z[nv * d:]


class AdjointPipeline:
    """Stateful driver that enforces transport -> particle -> flow."""

    def __init__(self, mesh, state, eparams, lin=LinearSolverConfig()):
        self.mesh, self.state, self.eparams, self.lin = mesh, state, eparams, lin
        self.dg_dalpha, self.dg_dup = erosion_state_gradient(mesh, state.alpha, state.u_p, eparams)
        self.z_alpha = self.z_up = self.z_uf = self.z_p = None

    def transport(self):
        self.z_alpha = solve_adjoint_transport(self.mesh, self.state, self.dg_dalpha, self.lin)
        return self.z_alpha

    def particle(self):
        if self.z_alpha is None:
            raise AdjointOrderError("transport adjoint has not been solved")
        self.z_up = solve_adjoint_particle_velocity(self.mesh, self.state, self.z_alpha,
                                                    self.dg_dup, self.lin)
        return self.z_up

    def flow(self):
        if self.z_up is None:
            raise AdjointOrderError("particle adjoint has not been solved")
        self.z_uf, self.z_p = solve_adjoint_flow(self.mesh, self.state, self.z_up, self.lin)
        return self.z_uf, self.z_p

    def result(self):
        if self.z_uf is None:
            raise AdjointOrderError("adjoint pipeline incomplete")
        return AdjointState(self.z_uf, self.z_p, self.z_up, self.z_alpha)


def solve_adjoint(mesh, state, eparams, lin=LinearSolverConfig()):
    pipe = AdjointPipeline(mesh, state, eparams, lin)
    pipe.transport()
    pipe.particle()
    pipe.flow()
    return pipe.result()


def transpose_report(mesh, state):
    """Max entrywise gap between each adjoint matrix and the transposed forward Jacobian,
    both restricted to the free dofs."""
    c = state.coeffs
    out = {}
    dofs, _ = transport_dirichlet(mesh, state.partition, 1.0)
    free = _free(mesh.n_vertices, dofs)
    J = TransportOperator(mesh, c, state.u_p).jacobian(state.alpha)
    A = transport_adjoint_matrix(mesh, state)
    out["transport"] = _gap(A[free][:, free], J[free][:, free].T)
    d = mesh.dim
    dofs, _ = particle_dirichlet(mesh, np.zeros((mesh.n_vertices, d)))
    free = _free(mesh.n_vertices * d, dofs)
    J = ParticleOperator(mesh, c, state.u_f).jacobian(state.u_p)
    A = particle_adjoint_matrix(mesh, state)
    out["particle"] = _gap(A[free][:, free], J[free][:, free].T)
    dofs, _ = flow_dirichlet(mesh, state.inflow)
    free = _free(mesh.n_vertices * (d + 1), dofs)
    J = FlowOperator(mesh, c).jacobian(state.flow_vector)
    A = flow_adjoint_matrix(mesh, state)
    out["flow"] = _gap(A[free][:, free], J[free][:, free].T)
    # coupling blocks, tested against a random adjoint vector
    rng = np.random.default_rng(0)
    z = rng.standard_normal(mesh.n_vertices)
    J = TransportOperator(mesh, c, state.u_p).jacobian(state.alpha, wrt="u_p")
    out["transport_coupling"] = float(np.abs(transport_coupling_rhs(mesh, state, z) - J.T @ z).max())
    z = rng.standard_normal(mesh.n_vertices * d)
    J = ParticleOperator(mesh, c, state.u_f).jacobian(state.u_p, wrt="u_f")
    out["drag_coupling"] = float(np.abs(drag_coupling_rhs(mesh, state, z) - J.T @ z).max())
    return out


def _gap(A, B):
    D = (A - B).tocsr()
    return float(abs(D).max()) if D.nnz else 0.0
