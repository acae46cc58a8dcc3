"""Gradient descent on the shape with Armijo backtracking and mesh-quality safeguards."""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .adjoint import solve_adjoint
from .erosion import cost_functional, impact_rate, integrated_erosion
from .forward import ForwardConfig, solve_forward
from .gradient import GradientConfig, gradient_norm, shape_gradient, tangentiality_ratio
from .mesh import DeformationError, deform, deformation_quality, max_admissible_step
from .shape import restrict, shape_derivative_functional

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("iter", "J", "J_erosion", "J_willmore", "grad_norm", "step", "min_det",
                   "max_frob", "eta")


@dataclass(frozen=True)
class OptimizerConfig:
    t0: float = math.inf
    c_armijo: float = 1e-4
    factor: float = 0.5
    max_iter: int = 20
    max_backtracks: int = 30
    grad_rtol: float = 0.0   # stop once ||G_j|| / ||G_1|| falls below this (0 disables)
    forward: ForwardConfig = ForwardConfig()
    gradient: GradientConfig = GradientConfig()

    def __post_init__(self):
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if not 0 < self.c_armijo < 1 or not 0 < self.factor < 1:
            raise ValueError("c_armijo and factor must lie in (0, 1)")
        if self.max_iter < 0 or self.max_backtracks < 0 or self.grad_rtol < 0:
            raise ValueError("iteration limits and grad_rtol must be nonnegative")


@dataclass
class IterationRecord:
    iter: int
    J: float
    J_erosion: float
    J_willmore: float
    grad_norm: float = math.nan
    step: float = 0.0
    min_det: float = 1.0
    max_frob: float = 0.0
    max_det: float = 1.0
    eta: float = math.nan
    E: float = math.nan
    tangential_ratio: float = math.nan
    descent: float = math.nan       # dJ(G_restricted) = ||G_restricted||_A^2
    backtracks: int = 0


@dataclass
class OptHistory:
    records: list = field(default_factory=list)
    converged: bool = False
    message: str = ""

    def append(self, rec):
        self.records.append(rec)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def rows(self, columns=HISTORY_COLUMNS):
        return [[asdict(r)[c] for c in columns] for r in self.records]

    def __len__(self):
        return len(self.records)


@dataclass
class LineSearchResult:
    ok: bool
    t: float = 0.0
    mesh: object = None
    state: object = None
    J: object = None
    quality: object = None
    backtracks: int = 0
    message: str = ""


def line_search(mesh, G_restricted, J_current, dJ_value, cfg, evaluate):
    """Backtrack along -G_restricted from the largest quality-admissible step.

    ``evaluate(mesh)`` returns ``(J, payload)`` and may raise to signal a failed
    forward solve, which counts as a rejected step. Accepts the first t with
    J(t) <= J - c t dJ_value.
    """
    W = -np.asarray(G_restricted, float)
    if not np.any(W) or not dJ_value > 0:
        return LineSearchResult(False, message="no descent direction")
    t = min(cfg.t0, max_admissible_step(mesh, W)) * (1 - 1e-12)
    if not np.isfinite(t) or t <= 0:
        return LineSearchResult(False, message="no admissible step")
    for k in range(cfg.max_backtracks + 1):
        try:
            moved = deform(mesh, W, t)
            J_t, payload = evaluate(moved)
        except DeformationError as exc:
            log.debug("step %.3e rejected: %s", t, exc)
        except (RuntimeError, ArithmeticError, ValueError) as exc:
            log.info("step %.3e rejected, forward solve failed: %s", t, exc)
        else:
            if J_t <= J_current - cfg.c_armijo * t * dJ_value:
                return LineSearchResult(True, t, moved, payload, J_t,
                                        deformation_quality(mesh, W, t), k)
        t *= cfg.factor
    return LineSearchResult(False, backtracks=cfg.max_backtracks,
                            message="backtracking exhausted without sufficient decrease")


def _safe_eta(mesh, state):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        try:
            return impact_rate(mesh, state)
        except ValueError:
            return math.nan


def run(mesh0, params, eparams, cfg=OptimizerConfig(), callback=None):
    """Algorithm: state, adjoint, restricted gradient, line search; repeat.

    Returns ``(final mesh, OptHistory)``. Stage failures end the loop with the
    partial history and a diagnostic in ``history.message``.
    """
    history = OptHistory()
    mesh = mesh0
    try:
        state = solve_forward(mesh, params, cfg.forward)
    except (RuntimeError, ArithmeticError) as exc:
        history.message = f"initial forward solve failed: {exc}"
        return mesh, history
    terms = cost_functional(mesh, state, eparams)
    rec = IterationRecord(0, terms.J, terms.erosion, terms.willmore,
                          eta=_safe_eta(mesh, state), E=integrated_erosion(mesh, state, eparams))
    g0 = None
    for it in range(cfg.max_iter + 1):
        try:
            adj = solve_adjoint(mesh, state, eparams, cfg.forward.linear)
            b = restrict(mesh, shape_derivative_functional(mesh, state, adj, eparams=eparams))
            sg = shape_gradient(mesh, b, cfg.gradient)
        except (RuntimeError, ArithmeticError) as exc:
            history.append(rec)
            history.message = f"gradient stage failed at iteration {it}: {exc}"
            return mesh, history
        rec.grad_norm = gradient_norm(sg.G_restricted, mesh)
        rec.tangential_ratio = tangentiality_ratio(mesh, sg.G, sg.Pi)
        rec.descent = float(np.sum(b * sg.G_restricted))
        history.append(rec)
        if callback is not None:
            callback(mesh, state, rec)
        log.info("iter %d  J=%.6e  |G|=%.3e  t=%.3e", rec.iter, rec.J, rec.grad_norm, rec.step)
        g0 = rec.grad_norm if g0 is None else g0
        if it == cfg.max_iter:
            history.message = "maximum number of iterations reached"
            break
        if cfg.grad_rtol and g0 > 0 and rec.grad_norm / g0 < cfg.grad_rtol:
            history.converged, history.message = True, "relative gradient norm below threshold"
            break

        def evaluate(m):
            s = solve_forward(m, params, cfg.forward, warm=state)
            return cost_functional(m, s, eparams).J, s

        ls = line_search(mesh, sg.G_restricted, rec.J, rec.descent, cfg, evaluate)
        if not ls.ok:
            history.converged, history.message = True, f"line search: {ls.message}"
            break
        mesh, state = ls.mesh, ls.state
        terms = cost_functional(mesh, state, eparams)
        rec = IterationRecord(it + 1, terms.J, terms.erosion, terms.willmore, step=ls.t,
                              min_det=ls.quality.min_det, max_frob=ls.quality.max_frob,
                              max_det=ls.quality.max_det,
                              eta=_safe_eta(mesh, state), E=integrated_erosion(mesh, state, eparams),
                              backtracks=ls.backtracks)
    return mesh, history
