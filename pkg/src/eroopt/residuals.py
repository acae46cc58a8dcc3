"""Element residuals of the stabilized forward system and their complex-step derivatives.

All element kernels are written for stacked elements and accept complex
input, so derivatives with respect to nodal values *or* nodal coordinates are
obtained exactly (to round-off) by the complex-step trick.

Kernels take the element coordinates ``X`` (ne, d+1, d) and local nodal data
and return local residual arrays. ``parts`` selects the Galerkin terms, the
stabilization terms, or both.
"""

from dataclasses import dataclass

import numpy as np

from .fem import (cell_rule, element_geometry, flow_dofmap, grad, interp,
                  mesh_size, vector_dofmap)
from . import kernels

CS_STEP = 1e-30
SPEED_EPS = 1e-8     # regularization of |u| inside the stabilization parameters
REL_SPEED_FLOOR = 1e-10


@dataclass(frozen=True)
class Coefficients:
    """Dimensionless coefficients as seen by the element kernels."""

    Re: float
    Fr: float
    Stk: float
    Kinv: float
    Pe: float
    gdir: tuple
    c_rep: float  # Re_p = c_rep * |u_p - u_f|

    @property
    def force(self):
        return np.asarray(self.gdir, dtype=float) / self.Fr ** 2


def _parts(parts):
    if parts not in ("all", "galerkin", "stab"):
        raise ValueError(f"unknown residual part {parts!r}")
    return parts in ("all", "galerkin"), parts in ("all", "stab")


def _speed(u):
    return np.sqrt(np.sum(u * u, axis=-1) + SPEED_EPS ** 2)


def _tau(diff, speed, h):
    h = h[:, None]
    return 1.0 / (4.0 * diff / (h * h) + 2.0 * speed / h)


def drag_factor(rel, c_rep):
    """Schiller-Naumann d_SN for relative velocities ``rel`` (..., d); complex safe."""
    sq = np.sum(rel * rel, axis=-1)
    sq = np.where(np.real(sq) < REL_SPEED_FLOOR ** 2, REL_SPEED_FLOOR ** 2, sq)
    return 1.0 + 0.15 * (c_rep * np.sqrt(sq)) ** 0.687


def _weights(vol, w):
    return vol[:, None] * w[None, :]


# --------------------------------------------------------------------------
# element kernels
# --------------------------------------------------------------------------


def flow_local(X, U, P, c, parts="all", convection=True):
    """Navier-Stokes momentum (ne, nl, d) and continuity (ne, nl) residuals."""
    gal, stab = _parts(parts)
    grads, vol = element_geometry(X)
    d = X.shape[2]
    lam, w = cell_rule(d)
    wv = _weights(vol, w)
    uq = interp(lam, U)
    Du = grad(grads, U)
    pq = interp(lam, P)
    gp = grad(grads, P)
    divu = np.trace(Du, axis1=1, axis2=2)
    force = c.force
    conv = np.einsum("eij,eqj->eqi", Du, uq) if convection else np.zeros_like(uq)
    RU = np.zeros(U.shape, dtype=np.result_type(X, U, P))
    RP = np.zeros(P.shape, dtype=RU.dtype)
    if gal:
        RU += np.einsum("eq,eqi,qa->eai", wv, conv - force, lam)
        RU += (vol / c.Re)[:, None, None] * np.einsum("eij,eaj->eai", Du, grads)
        RU -= (wv * pq).sum(axis=1)[:, None, None] * grads
        RP += (wv @ lam) * divu[:, None]
    if stab:
        h = mesh_size(vol, d)
        speed = _speed(uq)
        tau = _tau(1.0 / c.Re, speed, h)
        Rs = conv + gp[:, None, :] - force
        adv = np.einsum("eqj,eaj->eqa", uq, grads)
        RU += np.einsum("eq,eqa,eqi->eai", wv * tau, adv, Rs)
        RP += np.einsum("eq,eaj,eqj->ea", wv * tau, grads, Rs)
        tauc = 0.5 * h[:, None] * speed
        RU += ((wv * tauc).sum(axis=1) * divu)[:, None, None] * grads
    return RU, RP


def particle_local(X, Up, Uf, c, parts="all"):
    """Particle momentum residual (ne, nl, d)."""
    gal, stab = _parts(parts)
    grads, vol = element_geometry(X)
    d = X.shape[2]
    lam, w = cell_rule(d)
    wv = _weights(vol, w)
    upq = interp(lam, Up)
    ufq = interp(lam, Uf)
    Dup = grad(grads, Up)
    rel = upq - ufq
    drag = (2.0 / c.Stk) * drag_factor(rel, c.c_rep)[..., None] * rel
    strong = np.einsum("eij,eqj->eqi", Dup, upq) + drag - c.force
    R = np.zeros(Up.shape, dtype=np.result_type(X, Up, Uf))
    if gal:
        R += np.einsum("eq,eqi,qa->eai", wv, strong, lam)
        R += (vol * c.Kinv)[:, None, None] * np.einsum("eij,eaj->eai", Dup, grads)
    if stab:
        h = mesh_size(vol, d)
        tau = _tau(c.Kinv, _speed(upq), h)
        adv = np.einsum("eqj,eaj->eqa", upq, grads)
        R += np.einsum("eq,eqa,eqi->eai", wv * tau, adv, strong)
    return R


def transport_local(X, A, Up, c, parts="all"):
    """Volume-fraction transport residual (ne, nl)."""
    gal, stab = _parts(parts)
    grads, vol = element_geometry(X)
    d = X.shape[2]
    lam, w = cell_rule(d)
    wv = _weights(vol, w)
    aq = interp(lam, A)
    ga = grad(grads, A)
    upq = interp(lam, Up)
    divup = np.trace(grad(grads, Up), axis1=1, axis2=2)
    flux_div = np.einsum("eqj,ej->eq", upq, ga) + aq * divup[:, None]
    R = np.zeros(A.shape, dtype=np.result_type(X, A, Up))
    if gal:
        R += np.einsum("eq,eq,qa->ea", wv, flux_div, lam)
        R += (vol / c.Pe)[:, None] * np.einsum("ej,eaj->ea", ga, grads)
    if stab:
        h = mesh_size(vol, d)
        tau = _tau(1.0 / c.Pe, _speed(upq), h)
        adv = np.einsum("eqj,eaj->eqa", upq, grads)
        R += np.einsum("eq,eqa,eq->ea", wv * tau, adv, flux_div)
    return R


# --------------------------------------------------------------------------
# complex-step machinery
# --------------------------------------------------------------------------


def cs_jacobian(fun, xloc, h=CS_STEP):
    """Local Jacobians (ne, n_out, n_in) of ``fun`` at ``xloc`` (ne, n_in)."""
    ne, n = xloc.shape
    cols = []
    base = xloc.astype(complex)
    for j in range(n):
        xc = base.copy()
        xc[:, j] += 1j * h
        cols.append(np.imag(fun(xc)) / h)
    return np.stack(cols, axis=2)


def cs_coordinate_pairing(fun, X, zloc, h=CS_STEP):
    """d/dX of  sum_e z_e . fun(X)_e , per element and local coordinate (ne, nl, d)."""
    ne, nl, d = X.shape
    out = np.empty((ne, nl, d))
    base = X.astype(complex)
    for a in range(nl):
        for k in range(d):
            Xc = base.copy()
            Xc[:, a, k] += 1j * h
            out[:, a, k] = np.einsum("en,en->e", zloc, np.imag(fun(Xc))) / h
    return out


def scatter_coordinate_pairing(mesh, local):
    out = np.zeros((mesh.n_vertices, mesh.dim))
    np.add.at(out, mesh.cells, local)
    return out


# --------------------------------------------------------------------------
# global operators
# --------------------------------------------------------------------------


class FlowOperator:
    """Residual and Jacobian of the stabilized Navier-Stokes system on a mesh.

    Unknown layout: ``[u (nv*d, interleaved), p (nv)]``.
    """

    def __init__(self, mesh, coeffs, convection=True):
        self.mesh = mesh
        self.c = coeffs
        self.convection = convection
        nv, d = mesh.n_vertices, mesh.dim
        self.n = nv * (d + 1)
        self.dofmap = flow_dofmap(mesh.cells, d, nv)
        self.X = mesh.vertices[mesh.cells]

    def split(self, x):
        nv, d = self.mesh.n_vertices, self.mesh.dim
        return x[: nv * d].reshape(nv, d), x[nv * d:]

    def local_data(self, x):
        u, p = self.split(x)
        cells = self.mesh.cells
        return np.hstack([u[cells].reshape(len(cells), -1), p[cells]])

    def _flat(self, X, xloc, parts):
        ne = xloc.shape[0]
        nl, d = X.shape[1], X.shape[2]
        U = xloc[:, : nl * d].reshape(ne, nl, d)
        P = xloc[:, nl * d:]
        RU, RP = flow_local(X, U, P, self.c, parts, self.convection)
        return np.hstack([RU.reshape(ne, -1), RP])

    def residual(self, x, parts="all"):
        loc = self._flat(self.X, self.local_data(x), parts)
        return kernels.assemble_vector(self.dofmap, loc, self.n)

    def local_jacobian(self, x, parts="all"):
        return cs_jacobian(lambda z: self._flat(self.X, z, parts), self.local_data(x))

    def jacobian(self, x, parts="all"):
        return kernels.assemble_matrix(self.dofmap, self.local_jacobian(x, parts), (self.n, self.n))

    def coordinate_pairing(self, x, z, parts="stab"):
        """Vertex array of d/dX (z . R(x)) with x, z held fixed."""
        xloc = self.local_data(x)
        zloc = z[self.dofmap]
        loc = cs_coordinate_pairing(lambda X: self._flat(X, xloc, parts), self.X, zloc)
        return scatter_coordinate_pairing(self.mesh, loc)


class ParticleOperator:
    """Particle momentum residual with the fluid velocity as a frozen coefficient."""

    def __init__(self, mesh, coeffs, u_f):
        self.mesh = mesh
        self.c = coeffs
        nv, d = mesh.n_vertices, mesh.dim
        self.n = nv * d
        self.dofmap = vector_dofmap(mesh.cells, d)
        self.X = mesh.vertices[mesh.cells]
        self.uf_loc = np.asarray(u_f, float).reshape(nv, d)[mesh.cells]

    def _loc(self, x):
        nv, d = self.mesh.n_vertices, self.mesh.dim
        return np.asarray(x).reshape(nv, d)[self.mesh.cells]

    def _flat(self, X, uploc, ufloc, parts):
        ne, nl, d = X.shape
        R = particle_local(X, uploc.reshape(ne, nl, d), ufloc.reshape(ne, nl, d), self.c, parts)
        return R.reshape(ne, -1)

    def residual(self, x, parts="all"):
        ne = self.mesh.n_cells
        loc = self._flat(self.X, self._loc(x).reshape(ne, -1), self.uf_loc.reshape(ne, -1), parts)
        return kernels.assemble_vector(self.dofmap, loc, self.n)

    def local_jacobian(self, x, parts="all", wrt="u_p"):
        ne = self.mesh.n_cells
        up = self._loc(x).reshape(ne, -1)
        uf = self.uf_loc.reshape(ne, -1)
        if wrt == "u_p":
            return cs_jacobian(lambda z: self._flat(self.X, z, uf, parts), up)
        return cs_jacobian(lambda z: self._flat(self.X, up, z, parts), uf)

    def jacobian(self, x, parts="all", wrt="u_p"):
        return kernels.assemble_matrix(self.dofmap, self.local_jacobian(x, parts, wrt),
                                       (self.n, self.n))

    def coordinate_pairing(self, x, z, parts="stab"):
        ne = self.mesh.n_cells
        up = self._loc(x).reshape(ne, -1)
        uf = self.uf_loc.reshape(ne, -1)
        zloc = np.asarray(z).ravel()[self.dofmap]
        loc = cs_coordinate_pairing(lambda X: self._flat(X, up, uf, parts), self.X, zloc)
        return scatter_coordinate_pairing(self.mesh, loc)


class TransportOperator:
    """Volume-fraction transport residual with frozen particle velocity."""

    def __init__(self, mesh, coeffs, u_p):
        self.mesh = mesh
        self.c = coeffs
        self.n = mesh.n_vertices
        self.X = mesh.vertices[mesh.cells]
        nv, d = mesh.n_vertices, mesh.dim
        self.up_loc = np.asarray(u_p, float).reshape(nv, d)[mesh.cells]

    def _flat(self, X, aloc, uploc, parts):
        ne, nl, d = X.shape
        return transport_local(X, aloc, uploc.reshape(ne, nl, d), self.c, parts)

    def residual(self, alpha, parts="all"):
        ne = self.mesh.n_cells
        loc = self._flat(self.X, np.asarray(alpha)[self.mesh.cells],
                         self.up_loc.reshape(ne, -1), parts)
        return kernels.assemble_vector(self.mesh.cells, loc, self.n)

    def local_jacobian(self, alpha, parts="all", wrt="alpha"):
        ne = self.mesh.n_cells
        aloc = np.asarray(alpha, float)[self.mesh.cells]
        up = self.up_loc.reshape(ne, -1)
        if wrt == "alpha":
            return cs_jacobian(lambda z: self._flat(self.X, z, up, parts), aloc)
        return cs_jacobian(lambda z: self._flat(self.X, aloc, z, parts), up)

    def jacobian(self, alpha, parts="all", wrt="alpha"):
        loc = self.local_jacobian(alpha, parts, wrt)
        if wrt == "alpha":
            return kernels.assemble_matrix(self.mesh.cells, loc, (self.n, self.n))
        d = self.mesh.dim
        return kernels.assemble_matrix(self.mesh.cells, loc, (self.n, self.n * d),
                                       colmap=vector_dofmap(self.mesh.cells, d))

    def coordinate_pairing(self, alpha, z, parts="stab"):
        ne = self.mesh.n_cells
        aloc = np.asarray(alpha, float)[self.mesh.cells]
        up = self.up_loc.reshape(ne, -1)
        zloc = np.asarray(z)[self.mesh.cells]
        loc = cs_coordinate_pairing(lambda X: self._flat(X, aloc, up, parts), self.X, zloc)
        return scatter_coordinate_pairing(self.mesh, loc)
