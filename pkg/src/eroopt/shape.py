"""Shape calculus: transformation derivatives, the volumetric shape derivative and Taylor tests.

The shape derivative is assembled as a dual vector ``b`` (nv, d) so that
``dJ(V) = sum(b * V)``. Volume terms are collected as per-cell matrices
K_e with ``dJ = sum_e K_e : DV_e`` (DV the P1 Jacobian of V); the dual entry
of vertex a, component i, is then ``sum_j K_e[i, j] d_j phi_a``.
"""

from dataclasses import dataclass, field

import numpy as np

from .erosion import (ErosionParams, _facet_values, erosion_rate, erosion_sensitivities,
                      wall_quadrature)
from .fem import cell_rule, grad, interp
from .mesh import (DeformationError, boundary_curvature, boundary_neighbours, cell_jacobians,
                   deform, vertex_normals)
from .residuals import FlowOperator, ParticleOperator, TransportOperator, drag_factor


VOLUME_BLOCKS = (
    "div_fluid", "div_particle", "div_K", "div_transport",
    "corr_fluid", "corr_pressure", "corr_particle", "corr_K", "corr_transport",
)
ALL_TERMS = ("erosion", "willmore", "volume", "stabilization")


# --------------------------------------------------------------------------
# transformation derivatives
# --------------------------------------------------------------------------


@dataclass
class TransformationDerivatives:
    detJ_prime: np.ndarray       # (nc,)   div V
    detJsurf_prime: np.ndarray   # (nf,)   div_G V
    M_prime: np.ndarray          # (nc, d, d)  -DV^T
    n_prime: np.ndarray          # (nf, d) -(D_G V)^T n


def transformation_derivatives(mesh, V):
    DV = cell_jacobians(mesh, V)
    DVf = DV[mesh.facet_cell]
    n = mesh.normals
    div = np.trace(DV, axis1=1, axis2=2)
    nDn = np.einsum("fi,fij,fj->f", n, DVf, n)
    DG = DVf - np.einsum("fij,fj,fk->fik", DVf, n, n)
    return TransformationDerivatives(
        detJ_prime=div,
        detJsurf_prime=div[mesh.facet_cell] - nDn,
        M_prime=-np.transpose(DV, (0, 2, 1)),
        n_prime=-np.einsum("fji,fj->fi", DG, n),
    )


def transformation_quantities(mesh, V, t):
    """Exact detJ(t), detJ_G(t), M(t) = (I + t DV)^{-T} and n_t o T_t for finite t."""
    DV = cell_jacobians(mesh, V)
    J = np.eye(mesh.dim) + t * DV
    det = np.linalg.det(J)
    M = np.transpose(np.linalg.inv(J), (0, 2, 1))
    Mn = np.einsum("fij,fj->fi", M[mesh.facet_cell], mesh.normals)
    norm = np.linalg.norm(Mn, axis=1)
    return det, det[mesh.facet_cell] * norm, M, Mn / norm[:, None]


# --------------------------------------------------------------------------
# dual-vector assembly helpers
# --------------------------------------------------------------------------


def _cell_dual(mesh, K, cells=None):
    """Dual vector of sum_e K_e : DV_e for K (ne, d, d) on the given cells."""
    cells = np.arange(mesh.n_cells) if cells is None else cells
    loc = np.einsum("eij,eaj->eai", K, mesh.grads[cells])
    out = np.zeros((mesh.n_vertices, mesh.dim))
    np.add.at(out, mesh.cells[cells], loc)
    return out


# --------------------------------------------------------------------------
# volume blocks
# --------------------------------------------------------------------------


def volume_block_matrices(mesh, state, adjoint, coeffs=None):
    """Per-cell K_e for each named volume block (already integrated over the cell)."""
    c = state.coeffs if coeffs is None else coeffs
    d = mesh.dim
    cells = mesh.cells
    grads, vol = mesh.grads, mesh.volumes
    lam, w = cell_rule(d)
    wv = vol[:, None] * w[None]
    I = np.eye(d)

    def loc(a):
        return a.reshape(mesh.n_vertices, -1)[cells].squeeze(-1) if a.ndim == 1 else a[cells]

    u, p = loc(state.u_f), state.p[cells]
    up, al = loc(state.u_p), state.alpha[cells]
    zu, zp = loc(adjoint.z_uf), adjoint.z_p[cells]
    zup, za = loc(adjoint.z_up), adjoint.z_alpha[cells]

    uq, pq, zuq, zpq = interp(lam, u), interp(lam, p), interp(lam, zu), interp(lam, zp)
    upq, ufq, zupq = interp(lam, up), uq, interp(lam, zup)
    aq, zaq = interp(lam, al), interp(lam, za)
    Du, Dzu = grad(grads, u), grad(grads, zu)
    Dup, Dzup = grad(grads, up), grad(grads, zup)
    ga, gza = grad(grads, al), grad(grads, za)
    divu = np.trace(Du, axis1=1, axis2=2)
    divzu = np.trace(Dzu, axis1=1, axis2=2)
    divup = np.trace(Dup, axis1=1, axis2=2)
    force = c.force

    def integrate_scalar(F):  # F (ne, nq) -> (ne, d, d) = (int F) I
        return (wv * F).sum(axis=1)[:, None, None] * I

    def integrate(Kq):  # (ne, nq, d, d)
        return np.einsum("eq,eqij->eij", wv, Kq)

    blocks = {}
    conv = np.einsum("eij,eqj->eqi", Du, uq)
    F = np.sum((conv - force) * zuq, axis=-1) + (np.sum(Du * Dzu, axis=(1, 2)) / c.Re)[:, None]
    F = F - pq * divzu[:, None] + zpq * divu[:, None]
    blocks["div_fluid"] = integrate_scalar(F)

    Dutz = np.einsum("eji,eqj->eqi", Du, zuq)
    Kq = -np.einsum("eqi,eqj->eqij", Dutz, uq)
    blocks["corr_fluid"] = integrate(Kq) - (vol / c.Re)[:, None, None] * (
        np.einsum("eki,ekj->eij", Du, Dzu) + np.einsum("eki,ekj->eij", Dzu, Du))

    blocks["corr_pressure"] = (
        np.einsum("eq,eij->eij", wv * pq, np.transpose(Dzu, (0, 2, 1)))
        - np.einsum("eq,eij->eij", wv * zpq, np.transpose(Du, (0, 2, 1))))

    rel = upq - ufq
    drag = (2.0 / c.Stk) * np.real(drag_factor(rel, c.c_rep))[..., None] * rel
    convp = np.einsum("eij,eqj->eqi", Dup, upq)
    blocks["div_particle"] = integrate_scalar(np.sum((convp + drag - force) * zupq, axis=-1))
    Duptz = np.einsum("eji,eqj->eqi", Dup, zupq)
    blocks["corr_particle"] = integrate(-np.einsum("eqi,eqj->eqij", Duptz, upq))

    blocks["div_K"] = (c.Kinv * vol * np.sum(Dup * Dzup, axis=(1, 2)))[:, None, None] * I
    blocks["corr_K"] = -(c.Kinv * vol)[:, None, None] * (
        np.einsum("eki,ekj->eij", Dup, Dzup) + np.einsum("eki,ekj->eij", Dzup, Dup))

    flux_div = np.einsum("eqj,ej->eq", upq, ga) + aq * divup[:, None]
    F = zaq * flux_div + (np.sum(ga * gza, axis=-1) / c.Pe)[:, None]
    blocks["div_transport"] = integrate_scalar(F)
    # -z_a D(alpha u_p)^T with D(alpha u_p) = u_p (x) grad alpha + alpha Du_p
    Kq = -zaq[..., None, None] * (np.einsum("ej,eqi->eqji", ga, upq)
                                  + aq[..., None, None] * np.transpose(Dup, (0, 2, 1))[:, None])
    blocks["corr_transport"] = integrate(Kq) - (vol / c.Pe)[:, None, None] * (
        np.einsum("ei,ej->eij", gza, ga) + np.einsum("ei,ej->eij", ga, gza))
    return blocks


# --------------------------------------------------------------------------
# boundary terms
# --------------------------------------------------------------------------


def erosion_boundary_dual(mesh, state, eparams):
    """int_wall g div_G V - (dg/dn)^T (D_G V)^T n as a dual vector."""
    q = wall_quadrature(mesh)
    a, u, n = _facet_values(mesh, q, state.alpha, state.u_p)
    e = erosion_rate(a, u, n, eparams)
    g = 0.5 * e * e
    _, _, gn = erosion_sensitivities(a, u, n, eparams)
    nf = q.normals
    P = np.eye(mesh.dim)[None] - np.einsum("fi,fj->fij", nf, nf)
    Pg = np.einsum("fij,fqj->fqi", P, gn)
    K = np.einsum("fq,fq->f", q.weights, g)[:, None, None] * P
    K -= np.einsum("fi,fq,fqj->fij", nf, q.weights, Pg)
    return _cell_dual(mesh, K, mesh.facet_cell[q.facets])


def willmore_dual(mesh, c1):
    """Exact derivative of c1 * sum_i theta_i^2 / (2 m_i) w.r.t. the vertex positions."""
    out = np.zeros((mesh.n_vertices, mesh.dim))
    if c1 == 0 or len(mesh.deformable_vertices) == 0:
        return out
    ids, h, m = boundary_curvature(mesh)
    prev, nxt = boundary_neighbours(mesh)
    p, n = prev[ids], nxt[ids]
    X = mesh.vertices
    e1, e2 = X[ids] - X[p], X[n] - X[ids]
    l1, l2 = np.linalg.norm(e1, axis=1), np.linalg.norm(e2, axis=1)

    def dphi(e, l):
        return np.stack([-e[:, 1], e[:, 0]], axis=1) / (l * l)[:, None]

    theta = h * m
    a = c1 * theta / m                # dW/dtheta
    b = -0.5 * c1 * theta ** 2 / m ** 2  # dW/dm
    g1, g2 = dphi(e1, l1), dphi(e2, l2)
    t1, t2 = e1 / l1[:, None], e2 / l2[:, None]
    np.add.at(out, ids, a[:, None] * (-g2 - g1) + b[:, None] * 0.5 * (t1 - t2))
    np.add.at(out, n, a[:, None] * g2 + b[:, None] * 0.5 * t2)
    np.add.at(out, p, a[:, None] * g1 - b[:, None] * 0.5 * t1)
    return out


def willmore_continuous_dual(mesh, c1):
    """The tangential-calculus form  c1 int (I - 2 tt^T) d_sV . d_s(hn) + 1/2 (t.d_s(hn)) (t.d_sV)
    on the deformable polyline, with P1 h n and edgewise tangents."""
    out = np.zeros((mesh.n_vertices, mesh.dim))
    if c1 == 0:
        return out
    prev, nxt = boundary_neighbours(mesh)
    facets = mesh.facets[mesh.deformable_mask]
    verts = np.unique(facets)
    _, h, _ = boundary_curvature(mesh, verts)
    hn = np.zeros((mesh.n_vertices, mesh.dim))
    hn[verts] = h[:, None] * vertex_normals(mesh)[verts]
    X = mesh.vertices
    e = X[facets[:, 1]] - X[facets[:, 0]]
    L = np.linalg.norm(e, axis=1)
    t = e / L[:, None]
    dhn = (hn[facets[:, 1]] - hn[facets[:, 0]]) / L[:, None]
    # integrand is linear in d_sV = (V_b - V_a) / L; coefficient vector per edge
    coef = dhn - 2 * t * np.sum(t * dhn, axis=1)[:, None] + 0.5 * np.sum(t * dhn, axis=1)[:, None] * t
    coef *= c1  # times L (measure) / L (derivative) = 1
    np.add.at(out, facets[:, 1], coef)
    np.add.at(out, facets[:, 0], -coef)
    return out


# --------------------------------------------------------------------------
# the shape derivative
# --------------------------------------------------------------------------


@dataclass
class DualParts:
    erosion: np.ndarray
    willmore: np.ndarray
    blocks: dict
    stabilization: np.ndarray

    def total(self, signs=None):
        signs = signs or {}
        out = self.erosion + self.willmore + self.stabilization
        for name, val in self.blocks.items():
            out = out + signs.get(name, 1.0) * val
        return out


class ShapeError(ValueError):
    pass


def _coefficients(mesh, state, adjoint, params):
    nv = mesh.n_vertices
    for name, arr in (("state", state.alpha), ("adjoint", adjoint.z_alpha)):
        if np.shape(arr)[0] != nv:
            raise ShapeError(f"{name} does not live on this mesh ({np.shape(arr)[0]} != {nv} vertices)")
    if params is None:
        return state.coeffs
    return params.coefficients(state.coeffs.Kinv)


def shape_derivative_parts(mesh, state, adjoint, eparams, terms=ALL_TERMS, willmore="discrete",
                           params=None):
    c = _coefficients(mesh, state, adjoint, params)
    zero = np.zeros((mesh.n_vertices, mesh.dim))
    ero = erosion_boundary_dual(mesh, state, eparams) if "erosion" in terms else zero
    wil = zero
    if "willmore" in terms:
        wil = (willmore_dual if willmore == "discrete" else willmore_continuous_dual)(mesh, eparams.c1)
    blocks = {}
    if "volume" in terms:
        for name, K in volume_block_matrices(mesh, state, adjoint, c).items():
            blocks[name] = _cell_dual(mesh, K)
    stab = zero
    if "stabilization" in terms:
        stab = (FlowOperator(mesh, c).coordinate_pairing(state.flow_vector, adjoint.flow_vector)
                + ParticleOperator(mesh, c, state.u_f).coordinate_pairing(state.u_p, adjoint.z_up)
                + TransportOperator(mesh, c, state.u_p).coordinate_pairing(state.alpha,
                                                                           adjoint.z_alpha))
    return DualParts(ero, wil, blocks, stab)


def shape_derivative_functional(mesh, state, adjoint, params=None, eparams=None, *, signs=None,
                                terms=ALL_TERMS, willmore="discrete"):
    """Dual vector b (nv, d) with dJ(V) = sum(b * V).

    ``params`` (PhysicalParams) overrides the coefficients stored on the state.
    ``signs`` maps volume-block names to multipliers (a test hook: -1 negates a
    block). ``terms`` selects which contributions are assembled.
    """
    eparams = ErosionParams() if eparams is None else eparams
    parts = shape_derivative_parts(mesh, state, adjoint, eparams, terms, willmore, params)
    return parts.total(signs)


def shape_derivative(mesh, state, adjoint, V, params=None, eparams=None, **kwargs):
    b = shape_derivative_functional(mesh, state, adjoint, params, eparams, **kwargs)
    return float(np.sum(b * np.asarray(V).reshape(b.shape)))


def restrict(mesh, b):
    out = np.array(b, dtype=float)
    out[mesh.fixed_vertices] = 0.0
    return out


def volume_dual(mesh):
    """Dual vector of the geometric functional |Omega|: int div V."""
    K = mesh.volumes[:, None, None] * np.eye(mesh.dim)
    return _cell_dual(mesh, K)


def perimeter_dual(mesh, facets=None):
    """Dual vector of the boundary measure: int_G div_G V."""
    facets = np.arange(mesh.n_facets) if facets is None else facets
    n = mesh.normals[facets]
    P = np.eye(mesh.dim)[None] - np.einsum("fi,fj->fij", n, n)
    return _cell_dual(mesh, mesh.facet_measures[facets][:, None, None] * P, mesh.facet_cell[facets])


# --------------------------------------------------------------------------
# Taylor test
# --------------------------------------------------------------------------

DEFAULT_STEPS = (1e-2, 5e-3, 2.5e-3, 1.25e-3)


@dataclass
class TaylorReport:
    steps: np.ndarray
    values: np.ndarray
    remainders: np.ndarray
    slope: float
    J0: float
    dJ: float
    partition_changed: bool = False
    dropped_steps: list = field(default_factory=list)

    @property
    def passed(self):
        return bool(1.8 <= self.slope <= 2.2)

    def with_derivative(self, dJ):
        """Same function values, different derivative (used by mutation tests)."""
        rem = np.abs(self.values - self.J0 - self.steps * dJ)
        return TaylorReport(self.steps, self.values, rem, fit_slope(self.steps, rem), self.J0, dJ,
                            self.partition_changed, self.dropped_steps)


def fit_slope(steps, remainders):
    with np.errstate(divide="ignore"):
        y = np.log(np.maximum(remainders, 1e-300))
    return float(np.polyfit(np.log(steps), y, 1)[0])


def taylor_test(functional, mesh, V, dJ, steps=DEFAULT_STEPS, J0=None):
    """Remainders |J(T_t(Omega)) - J(Omega) - t dJ| over decreasing steps.

    ``functional(mesh)`` returns J or (J, witness); a witness that differs from
    the reference one flags the run (e.g. a changed boundary partition).
    """
    steps = np.asarray(sorted(steps, reverse=True), dtype=float)

    def call(m):
        out = functional(m)
        return out if isinstance(out, tuple) else (out, None)

    ref, witness = call(mesh) if J0 is None else (J0, None)
    changed = False
    kept, values, dropped = [], [], []
    for t in steps:
        try:
            m = deform(mesh, V, t)
        except DeformationError:
            dropped.append(float(t))
            continue
        val, wit = call(m)
        if witness is not None and wit is not None and wit != witness:
            changed = True
        kept.append(t)
        values.append(val)
    if len(kept) < 2:
        raise DeformationError("fewer than two Taylor steps pass the quality check")
    kept = np.array(kept)
    values = np.array(values)
    rem = np.abs(values - ref - kept * dJ)
    return TaylorReport(kept, values, rem, fit_slope(kept, rem), ref, dJ, changed, dropped)


def harmonic_extension(mesh, boundary_values):
    """Componentwise P1 harmonic extension of values given on all boundary vertices."""
    import scipy.sparse.linalg as spla
    from .fem import assemble_form
    A, _ = assemble_form(mesh, "a")
    bnd = mesh.boundary_vertices
    W = np.zeros((mesh.n_vertices, mesh.dim))
    W[bnd] = np.asarray(boundary_values, float).reshape(mesh.n_vertices, mesh.dim)[bnd]
    inner = np.setdiff1d(np.arange(mesh.n_vertices), bnd)
    if len(inner):
        A = A.tocsr()
        lu = spla.splu(A[inner][:, inner].tocsc())
        W[inner] = lu.solve(-(A[inner][:, bnd] @ W[bnd]))
    return W


def random_admissible_field(mesh, rng=None, modes=3, amplitude=1.0):
    """Smooth normal displacement of the deformable boundary, harmonically extended.

    The boundary data is a random trigonometric field in the coordinates times
    the vertex normal; it vanishes on every fixed vertex.
    """
    rng = np.random.default_rng(rng)
    X = mesh.vertices
    scale = np.ptp(X, axis=0).max()
    f = np.zeros(mesh.n_vertices)
    for _ in range(modes):
        k = rng.normal(size=mesh.dim) * 2 * np.pi / scale
        f += rng.normal() * np.sin(X @ k + rng.uniform(0, 2 * np.pi))
    data = np.zeros((mesh.n_vertices, mesh.dim))
    dv = mesh.deformable_vertices
    data[dv] = f[dv, None] * vertex_normals(mesh)[dv]
    W = harmonic_extension(mesh, data)
    W[mesh.fixed_vertices] = 0.0
    peak = np.abs(W).max()
    return W if peak == 0 else amplitude * W / peak
