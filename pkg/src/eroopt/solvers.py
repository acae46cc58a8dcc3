"""Sparse linear solves (Krylov or direct) and a damped Newton driver."""

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .fem import is_symmetric

log = logging.getLogger(__name__)

METHODS = ("cg", "gmres", "minres", "direct")
PRECONDITIONERS = (None, "jacobi", "ssor", "ilu0")


@dataclass(frozen=True)
class LinearSolverConfig:
    method: str = "direct"
    restart: int = 50
    preconditioner: str | None = "default"
    rtol: float = 1e-10
    maxiter: int = 5000
    omega: float = 1.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.rtol <= 0:
            raise ValueError("tolerance must be positive")
        if self.restart < 1:
            raise ValueError("restart must be at least 1")
        if self.preconditioner not in PRECONDITIONERS + ("default",):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")

    @property
    def resolved_preconditioner(self):
        if self.preconditioner != "default":
            return self.preconditioner
        return {"cg": "ssor", "gmres": "ilu0", "minres": "jacobi"}.get(self.method)


@dataclass
class ConvergenceRecord:
    converged: bool
    iterations: int
    residual: float
    message: str = ""
    history: list = field(default_factory=list)


class SolverError(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


def make_preconditioner(A, kind, omega=1.0):
    if kind is None:
        return None
    n = A.shape[0]
    A = sp.csr_matrix(A)
    A.sort_indices()
    if kind == "jacobi":
        d = A.diagonal()
        inv = np.where(d != 0, 1.0 / np.where(d != 0, d, 1.0), 1.0)
        return spla.LinearOperator((n, n), matvec=lambda r: inv * np.ravel(r))
    diag = kernels.diagonal_pointers(A)
    indptr = A.indptr.astype(np.int64)
    indices = A.indices.astype(np.int64)
    if kind == "ssor":
        data = A.data.astype(float)
        return spla.LinearOperator(
            (n, n),
            matvec=lambda r: kernels.ssor_apply(n, indptr, indices, data, diag, omega,
                                                np.ascontiguousarray(np.ravel(r), float)))
    if kind == "ilu0":
        lu = kernels.ilu0_factor(n, indptr, indices, A.data.astype(float), diag)
        return spla.LinearOperator(
            (n, n),
            matvec=lambda r: kernels.ilu0_solve(n, indptr, indices, lu, diag,
                                                np.ascontiguousarray(np.ravel(r), float)))
    raise ValueError(f"unknown preconditioner {kind!r}")


def solve_linear(A, b, cfg=LinearSolverConfig(), x0=None):
    """Solve ``A x = b``; returns ``(x, ConvergenceRecord)`` and never raises on stagnation."""
    A = sp.csr_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch {A.shape} vs {b.shape}")
    if not np.all(np.isfinite(b)) or not np.all(np.isfinite(A.data)):
        raise SolverError("non-finite entries in the linear system")
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), ConvergenceRecord(True, 0, 0.0, "zero right-hand side")

    if cfg.method == "direct":
        try:
            with np.errstate(all="ignore"), warnings.catch_warnings():
                warnings.simplefilter("ignore", spla.MatrixRankWarning)
                x = spla.spsolve(A.tocsc(), b)
        except RuntimeError as exc:  # exactly singular
            return np.zeros_like(b), ConvergenceRecord(False, 1, np.inf, str(exc))
        x = np.atleast_1d(x)
        res = np.linalg.norm(b - A @ x) / bnorm if np.all(np.isfinite(x)) else np.inf
        ok = bool(np.isfinite(res) and res <= max(cfg.rtol, 1e-8))
        return x, ConvergenceRecord(ok, 1, float(res), "" if ok else "direct solve inaccurate")

    if cfg.method == "cg" and not is_symmetric(A):
        raise ValueError("CG needs a symmetric matrix")
    M = make_preconditioner(A, cfg.resolved_preconditioner, cfg.omega)
    history = []

    def count(arg):
        history.append(float(np.linalg.norm(arg)) if np.ndim(arg) else float(arg))

    kwargs = dict(rtol=cfg.rtol, maxiter=cfg.maxiter, M=M, x0=x0)
    with np.errstate(all="ignore"):
        if cfg.method == "cg":
            x, info = spla.cg(A, b, callback=count, **kwargs)
        elif cfg.method == "minres":
            x, info = spla.minres(A, b, callback=count, **kwargs)
        else:
            x, info = spla.gmres(A, b, restart=cfg.restart, callback=count,
                                 callback_type="pr_norm", **kwargs)
    if not np.all(np.isfinite(x)):
        raise SolverError("NaN produced by the Krylov solver",
                          ConvergenceRecord(False, len(history), np.nan, "nan", history))
    res = float(np.linalg.norm(b - A @ x) / bnorm)
    ok = info == 0 and res <= 10 * cfg.rtol
    msg = "" if ok else f"not converged (info={info}, relative residual {res:.2e})"
    return x, ConvergenceRecord(ok, len(history), res, msg, history)


# --------------------------------------------------------------------------
# damped Newton
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NewtonConfig:
    atol: float = 1e-10
    rtol: float = 1e-10
    maxiter: int = 40
    min_damping: float = 2.0 ** -10
    linear: LinearSolverConfig = LinearSolverConfig()


@dataclass
class NewtonResult:
    x: np.ndarray
    converged: bool
    iterations: int
    history: list


class NewtonError(RuntimeError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


def newton(residual, jacobian, x0, free, cfg=NewtonConfig()):
    """Damped Newton on the free dofs; fixed dofs keep their values in ``x0``.

    ``residual(x)`` returns the full residual vector, ``jacobian(x)`` the full
    sparse Jacobian. Steps are halved until the residual norm decreases.
    """
    x = np.array(x0, dtype=float)
    r = residual(x)[free]
    norm = np.linalg.norm(r)
    history = [norm]
    target = max(cfg.atol, cfg.rtol * norm)
    for it in range(cfg.maxiter):
        if norm <= target:
            return NewtonResult(x, True, it, history)
        J = jacobian(x)[free][:, free]
        dx, rec = solve_linear(J, -r, cfg.linear)
        if not rec.converged:
            raise NewtonError(f"linear solve failed in Newton step {it}: {rec.message}", history)
        lam = 1.0
        while True:
            trial = x.copy()
            trial[free] += lam * dx
            with np.errstate(all="ignore"):
                rt = residual(trial)[free]
            nt = np.linalg.norm(rt)
            if np.isfinite(nt) and nt < norm:
                break
            lam *= 0.5
            if lam < cfg.min_damping:
                if norm <= 1e3 * target:
                    # stagnated at round-off level; accept
                    return NewtonResult(x, True, it, history)
                raise NewtonError(f"damping exhausted at residual {norm:.3e}", history)
        x, r, norm = trial, rt, nt
        history.append(norm)
        log.debug("newton %d: |r| = %.3e (damping %g)", it, norm, lam)
    if norm <= target:
        return NewtonResult(x, True, cfg.maxiter, history)
    raise NewtonError(f"no convergence after {cfg.maxiter} iterations, |r| = {norm:.3e}", history)
