"""P1 Lagrange finite elements: quadrature, dof maps, form assembly, Dirichlet rows.

Vector fields are stored interleaved, dof ``d*v + k`` for component k at
vertex v. Gradients of vector fields follow the Jacobian convention
``(Du)_ij = d_j u_i``.
"""

import numpy as np
import scipy.sparse as sp

from . import kernels
from .mesh import Tag

# triangle, degree 3 (barycentric points, weights summing to 1)
TRI_POINTS = np.array([[1 / 3, 1 / 3, 1 / 3],
                       [0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]])
TRI_WEIGHTS = np.array([-27 / 48, 25 / 48, 25 / 48, 25 / 48])

# tetrahedron, degree 3 (Keast)
TET_POINTS = np.array([[0.25, 0.25, 0.25, 0.25],
                       [0.5, 1 / 6, 1 / 6, 1 / 6], [1 / 6, 0.5, 1 / 6, 1 / 6],
                       [1 / 6, 1 / 6, 0.5, 1 / 6], [1 / 6, 1 / 6, 1 / 6, 0.5]])
TET_WEIGHTS = np.array([-0.8, 0.45, 0.45, 0.45, 0.45])

_g = 0.5 / np.sqrt(3.0)
SEG_POINTS = np.array([[0.5 + _g, 0.5 - _g], [0.5 - _g, 0.5 + _g]])
SEG_WEIGHTS = np.array([0.5, 0.5])


def cell_rule(dim):
    return (TRI_POINTS, TRI_WEIGHTS) if dim == 2 else (TET_POINTS, TET_WEIGHTS)


def facet_rule(dim):
    if dim != 2:
        # centroid rule on triangles; 3D facets are only used in geometric tests
        return np.full((1, 3), 1 / 3), np.ones(1)
    return SEG_POINTS, SEG_WEIGHTS


def element_geometry(X):
    """Barycentric gradients and signed measures for stacked simplices X (ne, d+1, d).

    Works for complex coordinates, which the complex-step shape derivative uses.
    """
    d = X.shape[2]
    E = X[:, 1:, :] - X[:, :1, :]
    if d == 2:
        det = E[:, 0, 0] * E[:, 1, 1] - E[:, 0, 1] * E[:, 1, 0]
        inv_t = np.empty_like(E)
        inv_t[:, 0, 0] = E[:, 1, 1] / det
        inv_t[:, 0, 1] = -E[:, 1, 0] / det
        inv_t[:, 1, 0] = -E[:, 0, 1] / det
        inv_t[:, 1, 1] = E[:, 0, 0] / det
        vol = 0.5 * det
    else:
        inv_t = np.transpose(np.linalg.inv(E), (0, 2, 1))
        vol = np.linalg.det(E) / 6.0
    grads = np.concatenate([-inv_t.sum(axis=1, keepdims=True), inv_t], axis=1)
    return grads, vol


def mesh_size(vol, dim):
    """Element length scale h = (d! |e|)^(1/d)."""
    fact = 2.0 if dim == 2 else 6.0
    return (fact * vol) ** (1.0 / dim)


# --------------------------------------------------------------------------
# dof maps
# --------------------------------------------------------------------------


def vector_dofmap(cells, dim):
    """Local order (a, k) -> global dim*v + k."""
    return (dim * cells[:, :, None] + np.arange(dim)).reshape(len(cells), -1)


def flow_dofmap(cells, dim, nv):
    """Velocity block followed by the pressure block of each cell."""
    return np.hstack([vector_dofmap(cells, dim), dim * nv + cells])


def interp(lam, Ue):
    """Values of local P1 data Ue (ne, d+1[, c]) at barycentric points lam (nq, d+1)."""
    if Ue.ndim == 2:
        return np.einsum("qa,ea->eq", lam, Ue)
    return np.einsum("qa,eac->eqc", lam, Ue)


def grad(grads, Ue):
    """Cellwise gradient: scalar -> (ne, d), vector -> (ne, c, d)."""
    if Ue.ndim == 2:
        return np.einsum("ea,eaj->ej", Ue, grads)
    return np.einsum("eac,eaj->ecj", Ue, grads)


# --------------------------------------------------------------------------
# forms
# --------------------------------------------------------------------------


class FormError(ValueError):
    pass


def _mass_local(vol, nl, lam, w):
    M = np.einsum("q,qa,qb->ab", w, lam, lam)
    return vol[:, None, None] * M[None]


def _expand_vector(local, dim):
    """Scalar element matrix (ne, n, n) -> blockwise identity over components."""
    ne, n, _ = local.shape
    out = np.zeros((ne, n, dim, n, dim))
    for k in range(dim):
        out[:, :, k, :, k] = local
    return out.reshape(ne, n * dim, n * dim)


def boundary_mass(mesh, facet_ids, vector=False):
    pts, w = facet_rule(mesh.dim)
    M = np.einsum("q,qa,qb->ab", w, pts, pts)
    local = mesh.facet_measures[facet_ids][:, None, None] * M[None]
    fac = mesh.facets[facet_ids]
    n = mesh.n_vertices
    if vector:
        local = _expand_vector(local, mesh.dim)
        fac = vector_dofmap(fac, mesh.dim)
        n *= mesh.dim
    return kernels.assemble_matrix(fac, local, (n, n))


def assemble_form(mesh, form, coefficients=None, *, vector=False, gdir=None):
    """Assemble one of the named weak forms as ``(matrix, rhs)``.

    ``form`` is one of
      ``a``     stiffness  int Dk : Dl (scalar, or vector with ``vector=True``)
      ``b``     int l div k, rows = scalar test, cols = vector trial
      ``c``     int (Dk w) . l with coefficient ``w``
      ``d``     int div(k u) l with coefficient ``u`` (scalar k, l)
      ``f``     int d_SN(k, l)(k - l) . m, needs ``u_p``, ``u_f``, ``params``;
                matrix is the frozen-coefficient mass, rhs the form value
      ``g``     int g . m (rhs only)
      ``mass``  int k l
      ``h1``/``h2``/``h3`` inflow boundary mass with rhs M @ value

    If the coefficient dict carries ``kappa`` (the trial field), the rhs is the
    form applied to it, i.e. ``matrix @ kappa``.
    """
    coefficients = dict(coefficients or {})
    nv, d = mesh.n_vertices, mesh.dim
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(d)
    cells = mesh.cells
    nl = d + 1
    for key, val in coefficients.items():
        if isinstance(val, np.ndarray) and val.shape[0] not in (nv, nv * d):
            raise FormError(f"coefficient {key!r} does not live on this mesh")

    if form == "a":
        local = vol[:, None, None] * np.einsum("eaj,ebj->eab", grads, grads)
        dof = cells
        n = nv
        if vector:
            local = _expand_vector(local, d)
            dof = vector_dofmap(cells, d)
            n = nv * d
        A = kernels.assemble_matrix(dof, local, (n, n))
    elif form == "mass":
        local = _mass_local(vol, nl, lam, w)
        dof, n = cells, nv
        if vector:
            local = _expand_vector(local, d)
            dof, n = vector_dofmap(cells, d), nv * d
        A = kernels.assemble_matrix(dof, local, (n, n))
    elif form == "b":
        # l_a * d_k phi_b, integrated: int l_a = vol / nl
        local = (vol / nl)[:, None, None, None] * np.ones((1, nl, 1, 1)) * grads[:, None, :, :]
        local = local.reshape(len(cells), nl, nl * d)
        A = kernels.assemble_matrix(cells, local, (nv, nv * d), colmap=vector_dofmap(cells, d))
    elif form == "c":
        W = _field(coefficients, "w", nv, d)
        wq = interp(lam, W[cells])  # (ne, nq, d)
        # (D phi_b e_k) w . phi_a e_i  ->  delta_ik lam_a (grad phi_b . w)
        s = np.einsum("q,qa,eqj,ebj->eab", w, lam, wq, grads) * vol[:, None, None]
        A = kernels.assemble_matrix(vector_dofmap(cells, d), _expand_vector(s, d), (nv * d, nv * d))
    elif form == "d":
        U = _field(coefficients, "u", nv, d)
        uq = interp(lam, U[cells])
        divu = np.einsum("eaj,eaj->e", U[cells], grads)
        # div(phi_b u) phi_a = (u . grad phi_b + phi_b div u) phi_a
        s = np.einsum("q,qa,eqj,ebj->eab", w, lam, uq, grads)
        s += divu[:, None, None] * np.einsum("q,qa,qb->ab", w, lam, lam)[None]
        A = kernels.assemble_matrix(cells, s * vol[:, None, None], (nv, nv))
    elif form == "f":
        from .particles import drag_coefficient
        up = _field(coefficients, "u_p", nv, d)
        uf = _field(coefficients, "u_f", nv, d)
        prm = coefficients["params"]
        upq, ufq = interp(lam, up[cells]), interp(lam, uf[cells])
        dsn = drag_coefficient(ufq, upq, prm)
        s = np.einsum("q,eq,qa,qb->eab", w, dsn, lam, lam) * vol[:, None, None]
        A = kernels.assemble_matrix(vector_dofmap(cells, d), _expand_vector(s, d), (nv * d, nv * d))
        rhs = A @ (up - uf).ravel()
        return A, rhs
    elif form == "g":
        g = np.asarray(gdir if gdir is not None else coefficients.get("gdir", (0.0, -1.0)), float)
        rhs = np.zeros((nv, d))
        np.add.at(rhs, cells, (vol / nl)[:, None, None] * g[None, None, :])
        return sp.csr_matrix((nv * d, nv * d)), rhs.ravel()
    elif form in ("h1", "h2", "h3"):
        inflow = mesh.facets_with(Tag.INFLOW)
        A = boundary_mass(mesh, inflow, vector=form != "h3")
        value = coefficients.get("value")
        rhs = np.zeros(A.shape[0]) if value is None else A @ np.ravel(value)
        return A, rhs
    else:
        raise FormError(f"unknown form {form!r}")

    kappa = coefficients.get("kappa")
    rhs = np.zeros(A.shape[0]) if kappa is None else A @ np.ravel(kappa)
    return A, rhs


def _field(coefficients, name, nv, d):
    if name not in coefficients:
        raise FormError(f"form needs coefficient {name!r}")
    return np.asarray(coefficients[name], dtype=float).reshape(nv, d)


# --------------------------------------------------------------------------
# Dirichlet conditions
# --------------------------------------------------------------------------


def merge_constraints(constraints):
    """Combine (dof, value) pairs, rejecting duplicates with different values."""
    out = {}
    for dof, val in constraints:
        dof = int(dof)
        if dof in out and out[dof] != val:
            raise ValueError(f"dof {dof} constrained to both {out[dof]} and {val}")
        out[dof] = float(val)
    return out


def apply_dirichlet(A, b, constraints, symmetric=None):
    """Strongly impose ``x[dof] = value``.

    Constrained rows become unit rows. With ``symmetric`` (default: detect on
    A) the columns are eliminated too and moved to the right-hand side.
    """
    cons = merge_constraints(constraints)
    A = sp.csr_matrix(A, dtype=float, copy=True)
    b = np.array(b, dtype=float)
    if not cons:
        return A, b
    dofs = np.fromiter(cons.keys(), dtype=np.int64)
    vals = np.fromiter(cons.values(), dtype=float)
    if symmetric is None:
        symmetric = is_symmetric(A)
    x = np.zeros(A.shape[0])
    x[dofs] = vals
    keep = np.ones(A.shape[0])
    keep[dofs] = 0.0
    K = sp.diags(keep)
    if symmetric:
        b = b - A @ x
        A = K @ A @ K
    else:
        A = K @ A
    A = (A + sp.diags(1.0 - keep)).tocsr()
    b[dofs] = vals
    A.eliminate_zeros()
    return A, b


def is_symmetric(A, tol=1e-12):
    diff = abs(A - A.T)
    return diff.nnz == 0 or diff.max() <= tol
