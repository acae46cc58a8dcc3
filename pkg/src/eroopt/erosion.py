"""OKA erosion rate, its sensitivities, the regularized cost functional and impact rate.

The impact angle enters only through s = sin(gamma) = u.n / |u|, so the rate
and its derivatives are written in s; this removes the arccos singularity at
orthogonal impact without a floor.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .fem import facet_rule
from .mesh import Tag, boundary_curvature


@dataclass(frozen=True)
class ErosionParams:
    m: float = 2.36
    n1: float = 0.78
    n2: float = 1.25
    Hv: float = 2.0
    c1: float = 0.0
    eps_n: float = 1e-3

    def __post_init__(self):
        if min(self.m, self.n1, self.n2, self.Hv) <= 0:
            raise ValueError("m, n1, n2, Hv must be positive")
        if self.c1 < 0 or self.eps_n < 0:
            raise ValueError("c1 and eps_n must be nonnegative")


def impact_angle(u_p, n):
    u_p, n = np.asarray(u_p, float), np.asarray(n, float)
    speed = np.linalg.norm(u_p, axis=-1)
    if np.any(speed == 0):
        raise ValueError("impact angle undefined for zero particle velocity")
    return np.arcsin(np.clip(np.sum(u_p * n, axis=-1) / speed, -1.0, 1.0))


def angle_factor(gamma, params):
    s = np.sin(gamma)
    return s ** params.n1 * (1 + params.Hv * (1 - s)) ** params.n2


def _indicator(un, eps):
    """C1 smoothstep in u.n on [-eps, eps], and its derivative."""
    if eps == 0:
        return (un >= 0).astype(float), np.zeros_like(un)
    x = np.clip((un + eps) / (2 * eps), 0.0, 1.0)
    inside = (x > 0) & (x < 1)
    return x * x * (3 - 2 * x), np.where(inside, 6 * x * (1 - x) / (2 * eps), 0.0)


def _psi(s, p):
    """psi(s) = s * zeta(s) and psi'(s), for s >= 0."""
    B = 1 + p.Hv * (1 - s)
    sp = np.where(s > 0, s, 0.0)
    psi = sp ** (1 + p.n1) * B ** p.n2
    dpsi = (1 + p.n1) * sp ** p.n1 * B ** p.n2 - p.n2 * p.Hv * sp ** (1 + p.n1) * B ** (p.n2 - 1)
    return psi, np.where(s > 0, dpsi, 0.0)


def _rate_parts(alpha, u_p, n, p):
    alpha = np.asarray(alpha, float)
    u_p, n = np.asarray(u_p, float), np.asarray(n, float)
    speed = np.linalg.norm(u_p, axis=-1)
    safe = np.where(speed > 0, speed, 1.0)
    un = np.sum(u_p * n, axis=-1)
    s = np.clip(un / safe, -1.0, 1.0)
    chi, dchi = _indicator(un, p.eps_n)
    psi, dpsi = _psi(s, p)
    power = safe ** (p.m + 1)
    e = np.where(speed > 0, chi * alpha * power * psi, 0.0)
    return alpha, u_p, n, speed, safe, un, s, chi, dchi, psi, dpsi, power, e


def erosion_rate(alpha, u_p, n, params):
    """e = chi(u.n) alpha (u.n) |u|^m zeta(gamma)."""
    return _rate_parts(alpha, u_p, n, params)[-1]


def erosion_sensitivities(alpha, u_p, n, params):
    """(dg/dalpha, dg/du_p, dg/dn) for g = e^2 / 2, vectorized over leading axes."""
    (alpha, u_p, n, speed, safe, un, s, chi, dchi, psi, dpsi, power, e) = _rate_parts(
        alpha, u_p, n, params)
    if np.any(speed == 0):
        raise ValueError("erosion sensitivities undefined for zero particle velocity")
    m = params.m
    de_da = chi * power * psi
    ds_du = n / safe[..., None] - (un / safe ** 3)[..., None] * u_p
    de_du = alpha[..., None] * (
        (dchi * power * psi)[..., None] * n
        + (chi * (m + 1) * safe ** (m - 1) * psi)[..., None] * u_p
        + (chi * power * dpsi)[..., None] * ds_du)
    de_dn = alpha[..., None] * ((dchi * power * psi)[..., None] * u_p
                                + (chi * power * dpsi / safe)[..., None] * u_p)
    return e * de_da, e[..., None] * de_du, e[..., None] * de_dn


# --------------------------------------------------------------------------
# boundary integrals
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class WallQuadrature:
    facets: np.ndarray      # facet ids
    lam: np.ndarray         # (nq, 2) barycentric weights along the facet
    weights: np.ndarray     # (nf, nq) including facet measure
    normals: np.ndarray     # (nf, d)


def wall_quadrature(mesh, tags=(Tag.WALL,)):
    f = mesh.facets_with(*tags)
    lam, w = facet_rule(mesh.dim)
    return WallQuadrature(f, lam, mesh.facet_measures[f][:, None] * w[None], mesh.normals[f])


def _facet_values(mesh, q, alpha, u_p):
    fv = mesh.facets[q.facets]
    a = np.einsum("qa,fa->fq", q.lam, np.asarray(alpha)[fv])
    u = np.einsum("qa,fai->fqi", q.lam, np.asarray(u_p)[fv])
    n = np.broadcast_to(q.normals[:, None, :], u.shape)
    return a, u, n


def erosion_integral(mesh, alpha, u_p, params):
    """(int_wall g, int_wall e)."""
    q = wall_quadrature(mesh)
    a, u, n = _facet_values(mesh, q, alpha, u_p)
    e = erosion_rate(a, u, n, params)
    return float(np.sum(q.weights * 0.5 * e * e)), float(np.sum(q.weights * e))


def erosion_state_gradient(mesh, alpha, u_p, params):
    """dJ/dalpha (nv,) and dJ/du_p (nv, d) of the erosion term."""
    q = wall_quadrature(mesh)
    a, u, n = _facet_values(mesh, q, alpha, u_p)
    ga, gu, _ = erosion_sensitivities(a, u, n, params)
    fv = mesh.facets[q.facets]
    da = np.zeros(mesh.n_vertices)
    du = np.zeros((mesh.n_vertices, mesh.dim))
    np.add.at(da, fv, np.einsum("fq,fq,qa->fa", q.weights, ga, q.lam))
    np.add.at(du, fv, np.einsum("fq,fqi,qa->fai", q.weights, gu, q.lam))
    return da, du


def willmore_energy(mesh, c1):
    """c1 * sum over deformable vertices of h^2/2 times the lumped boundary measure."""
    if c1 == 0 or len(mesh.deformable_vertices) == 0:
        return 0.0
    _, h, m = boundary_curvature(mesh)
    return float(c1 * np.sum(0.5 * h * h * m))


def curvature_integral(mesh):
    if len(mesh.deformable_vertices) == 0:
        return 0.0
    _, h, m = boundary_curvature(mesh)
    return float(np.sum(0.5 * h * h * m))


@dataclass(frozen=True)
class CostTerms:
    J: float
    erosion: float
    willmore: float


def cost_functional(mesh, state, params):
    erosion, _ = erosion_integral(mesh, state.alpha, state.u_p, params)
    willmore = willmore_energy(mesh, params.c1)
    return CostTerms(erosion + willmore, erosion, willmore)


def auto_c1(mesh, state, params, factor=0.01):
    """c1 so that the curvature term is ``factor`` times the erosion term initially."""
    erosion, _ = erosion_integral(mesh, state.alpha, state.u_p, params)
    curv = curvature_integral(mesh)
    c1 = 0.0 if curv == 0 else factor * erosion / curv
    return replace(params, c1=c1)


def integrated_erosion(mesh, state, params):
    return erosion_integral(mesh, state.alpha, state.u_p, params)[1]


def _flux(mesh, tag, alpha, u_p):
    q = wall_quadrature(mesh, (tag,))
    a, u, n = _facet_values(mesh, q, alpha, u_p)
    return float(np.sum(q.weights * a * np.sum(u * n, axis=-1)))


def impact_rate(mesh, state):
    influx = -_flux(mesh, Tag.INFLOW, state.alpha, state.u_p)
    if influx <= 0:
        raise ValueError("no particle influx through the inlet")
    eta = 1.0 - _flux(mesh, Tag.OUTFLOW, state.alpha, state.u_p) / influx
    if not -0.05 <= eta <= 1.05:
        warnings.warn(f"impact rate {eta:.3f} outside [-0.05, 1.05]", RuntimeWarning, stacklevel=2)
    return eta
