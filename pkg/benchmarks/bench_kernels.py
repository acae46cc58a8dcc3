"""Compare the numba kernels with their numpy fallbacks on the default bend mesh.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both paths are called directly, so the EROOPT_NUMBA flag does not matter here.
Outputs agree to round-off; the table reports the best-of-N wall time.
"""

import argparse
import timeit

import numpy as np
import scipy.sparse as sp

from eroopt import kernels
from eroopt.fem import assemble_form, vector_dofmap
from eroopt.mesh import bend_mesh


def best(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(mesh):
    X, C = mesh.vertices, mesh.cells.astype(np.int64)
    dof = vector_dofmap(C, 2).astype(np.int64)
    rng = np.random.default_rng(0)
    local = rng.standard_normal((len(C), dof.shape[1], dof.shape[1]))
    vloc = rng.standard_normal(dof.shape)
    n = mesh.n_vertices * 2
    A, _ = assemble_form(mesh, "a")
    A = (A + 1e-3 * sp.eye(A.shape[0])).tocsr()  # Dirichlet-free Laplacian is singular
    A.sort_indices()
    diag = kernels.diagonal_pointers(A)
    ip, ix, data = A.indptr.astype(np.int64), A.indices.astype(np.int64), A.data.copy()
    nn = A.shape[0]
    r = rng.standard_normal(nn)
    lu = kernels.ilu0_factor_nb(nn, ip, ix, data, diag)
    return {
        "simplex_geometry": (lambda: kernels.simplex_geometry_np(X, C),
                             lambda: kernels.simplex_geometry_nb(X, C)),
        "scatter_triplets": (lambda: kernels.scatter_triplets_np(dof, dof, local),
                             lambda: kernels.scatter_triplets_nb(dof, dof, local)),
        "scatter_vector": (lambda: kernels.scatter_vector_np(dof, vloc, n),
                           lambda: kernels.scatter_vector_nb(dof, vloc, n)),
        "ilu0_factor": (lambda: kernels.ilu0_factor_np(nn, ip, ix, data, diag),
                        lambda: kernels.ilu0_factor_nb(nn, ip, ix, data, diag)),
        "ilu0_solve": (lambda: kernels.ilu0_solve_np(nn, ip, ix, lu, diag, r),
                       lambda: kernels.ilu0_solve_nb(nn, ip, ix, lu, diag, r)),
        "ssor_apply": (lambda: kernels.ssor_apply_np(nn, ip, ix, data, diag, 1.0, r),
                       lambda: kernels.ssor_apply_nb(nn, ip, ix, data, diag, 1.0, r)),
    }


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.abs(np.asarray(x, float) - np.asarray(y, float)).max()) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    mesh = bend_mesh()
    print(f"mesh: {mesh.n_vertices} vertices, {mesh.n_cells} cells")
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}{'max diff':>12}")
    for name, (f_np, f_nb) in cases(mesh).items():
        t_np, t_nb = best(f_np, args.repeat), best(f_nb, args.repeat)
        diff = _agree(f_np(), f_nb())
        print(f"{name:<18}{1e3 * t_np:>12.3f}{1e3 * t_nb:>12.3f}{t_np / t_nb:>10.1f}{diff:>12.2e}")


if __name__ == "__main__":
    main()
