"""Hot inner loops: simplex geometry, sparse scatter, ILU(0) and SSOR sweeps.

Every kernel exists twice, a numba loop (``*_nb``) and a numpy/scipy version
(``*_np``). The public name points at one of them according to
:data:`eroopt._accel.USE_NUMBA`; both stay importable for the benchmark and
for the equivalence tests.
"""

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from ._accel import USE_NUMBA, njit

# --------------------------------------------------------------------------
# simplex geometry
# --------------------------------------------------------------------------


def simplex_geometry_np(vertices, cells):
    """Barycentric gradients ``(nc, d+1, d)`` and signed measures ``(nc,)``."""
    X = vertices[cells]
    d = X.shape[2]
    E = X[:, 1:, :] - X[:, :1, :]
    det = np.linalg.det(E)
    inv = np.linalg.inv(E)
    grads = np.empty((len(cells), d + 1, d))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    fact = 2.0 if d == 2 else (6.0 if d == 3 else 1.0)
    return grads, det / fact


def _simplex_geometry_loop(vertices, cells):
    nc = cells.shape[0]
    d = vertices.shape[1]
    grads = np.empty((nc, d + 1, d))
    vol = np.empty(nc)
    for c in range(nc):
        x0 = vertices[cells[c, 0]]
        if d == 2:
            a = vertices[cells[c, 1]] - x0
            b = vertices[cells[c, 2]] - x0
            det = a[0] * b[1] - a[1] * b[0]
            # rows of E^{-T}
            grads[c, 1, 0] = b[1] / det
            grads[c, 1, 1] = -b[0] / det
            grads[c, 2, 0] = -a[1] / det
            grads[c, 2, 1] = a[0] / det
            vol[c] = 0.5 * det
        else:
            E = np.empty((d, d))
            for k in range(d):
                E[k] = vertices[cells[c, k + 1]] - x0
            inv = np.linalg.inv(E)
            det = np.linalg.det(E)
            for k in range(d):
                for j in range(d):
                    grads[c, k + 1, j] = inv[j, k]
            vol[c] = det / 6.0 if d == 3 else det
        for j in range(d):
            s = 0.0
            for k in range(1, d + 1):
                s += grads[c, k, j]
            grads[c, 0, j] = -s
    return grads, vol


simplex_geometry_nb = njit(_simplex_geometry_loop)

# --------------------------------------------------------------------------
# scatter of element contributions
# --------------------------------------------------------------------------


def scatter_triplets_np(rowmap, colmap, local):
    """Flatten element matrices into COO triplets (rows, cols, vals)."""
    ne, nr = rowmap.shape
    nc = colmap.shape[1]
    rows = np.repeat(rowmap, nc, axis=1).ravel()
    cols = np.tile(colmap, (1, nr)).ravel()
    return rows, cols, local.reshape(ne * nr * nc)


def _scatter_triplets_loop(rowmap, colmap, local):
    ne, nr = rowmap.shape
    nc = colmap.shape[1]
    n = ne * nr * nc
    rows = np.empty(n, dtype=np.int64)
    cols = np.empty(n, dtype=np.int64)
    vals = np.empty(n, dtype=local.dtype)
    p = 0
    for e in range(ne):
        for a in range(nr):
            for b in range(nc):
                rows[p] = rowmap[e, a]
                cols[p] = colmap[e, b]
                vals[p] = local[e, a, b]
                p += 1
    return rows, cols, vals


scatter_triplets_nb = njit(_scatter_triplets_loop)


def scatter_vector_np(dofmap, local, n):
    return np.bincount(dofmap.ravel(), weights=local.ravel(), minlength=n)


def _scatter_vector_loop(dofmap, local, n):
    out = np.zeros(n)
    ne, nl = dofmap.shape
    for e in range(ne):
        for a in range(nl):
            out[dofmap[e, a]] += local[e, a]
    return out


scatter_vector_nb = njit(_scatter_vector_loop)

# --------------------------------------------------------------------------
# ILU(0)
# --------------------------------------------------------------------------


def _ilu0_loop(n, indptr, indices, data, diag):
    lu = data.copy()
    pos = -np.ones(n, dtype=np.int64)
    for i in range(n):
        for p in range(indptr[i], indptr[i + 1]):
            pos[indices[p]] = p
        for p in range(indptr[i], diag[i]):
            k = indices[p]
            piv = lu[diag[k]]
            if piv == 0.0:
                continue
            lu[p] = lu[p] / piv
            for q in range(diag[k] + 1, indptr[k + 1]):
                j = indices[q]
                r = pos[j]
                if r >= 0:
                    lu[r] -= lu[p] * lu[q]
        for p in range(indptr[i], indptr[i + 1]):
            pos[indices[p]] = -1
    return lu


ilu0_factor_nb = njit(_ilu0_loop)
ilu0_factor_np = _ilu0_loop  # interpreted fallback; identical arithmetic


def _ilu0_solve_loop(n, indptr, indices, lu, diag, b):
    y = b.copy()
    for i in range(n):
        s = y[i]
        for p in range(indptr[i], diag[i]):
            s -= lu[p] * y[indices[p]]
        y[i] = s
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= lu[p] * y[indices[p]]
        y[i] = s / lu[diag[i]]
    return y


ilu0_solve_nb = njit(_ilu0_solve_loop)


def ilu0_solve_np(n, indptr, indices, lu, diag, b):
    M = sp.csr_matrix((lu, indices, indptr), shape=(n, n))
    L = sp.tril(M, k=-1, format="csr") + sp.identity(n, format="csr")
    U = sp.triu(M, format="csr")
    y = spsolve_triangular(L, b, lower=True, unit_diagonal=True)
    return spsolve_triangular(U, y, lower=False)


# --------------------------------------------------------------------------
# SSOR
# --------------------------------------------------------------------------


def _ssor_loop(n, indptr, indices, data, diag, omega, r):
    y = np.empty(n)
    for i in range(n):
        s = r[i]
        for p in range(indptr[i], diag[i]):
            s -= data[p] * y[indices[p]]
        y[i] = s * omega / data[diag[i]]
    for i in range(n):
        y[i] *= data[diag[i]] / omega
    z = np.empty(n)
    for i in range(n - 1, -1, -1):
        s = y[i]
        for p in range(diag[i] + 1, indptr[i + 1]):
            s -= data[p] * z[indices[p]]
        z[i] = s * omega / data[diag[i]]
    return z * (2.0 - omega) / omega


ssor_apply_nb = njit(_ssor_loop)


def ssor_apply_np(n, indptr, indices, data, diag, omega, r):
    A = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    dvec = A.diagonal() / omega
    lower = sp.tril(A, k=-1, format="csr") + sp.diags(dvec, format="csr")
    upper = sp.triu(A, k=1, format="csr") + sp.diags(dvec, format="csr")
    y = spsolve_triangular(lower, r, lower=True)
    z = spsolve_triangular(upper, dvec * y, lower=False)
    return z * (2.0 - omega) / omega


def diagonal_pointers(A):
    """Position of each diagonal entry in a CSR matrix with sorted indices."""
    A.sort_indices()
    n = A.shape[0]
    diag = np.empty(n, dtype=np.int64)
    for i in range(n):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        k = lo + np.searchsorted(A.indices[lo:hi], i)
        if k >= hi or A.indices[k] != i:
            raise ValueError(f"row {i} has no stored diagonal entry")
        diag[i] = k
    return diag


if USE_NUMBA:
    simplex_geometry = simplex_geometry_nb
    scatter_triplets = scatter_triplets_nb
    scatter_vector = scatter_vector_nb
    ilu0_factor = ilu0_factor_nb
    ilu0_solve = ilu0_solve_nb
    ssor_apply = ssor_apply_nb
else:
    simplex_geometry = simplex_geometry_np
    scatter_triplets = scatter_triplets_np
    scatter_vector = scatter_vector_np
    ilu0_factor = ilu0_factor_np
    ilu0_solve = ilu0_solve_np
    ssor_apply = ssor_apply_np


def assemble_matrix(rowmap, local, shape, colmap=None):
    """Sum element matrices ``local[e]`` into a CSR matrix of the given shape."""
    rowmap = np.ascontiguousarray(rowmap, dtype=np.int64)
    colmap = rowmap if colmap is None else np.ascontiguousarray(colmap, dtype=np.int64)
    rows, cols, vals = scatter_triplets(rowmap, colmap, np.ascontiguousarray(local, dtype=float))
    return sp.csr_matrix((vals, (rows, cols)), shape=shape)


def assemble_vector(dofmap, local, n):
    return scatter_vector(
        np.ascontiguousarray(dofmap, dtype=np.int64),
        np.ascontiguousarray(local, dtype=float),
        n,
    )
