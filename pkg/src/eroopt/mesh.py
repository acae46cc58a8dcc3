"""Simplicial meshes with tagged boundary facets, deformation and quality checks."""

from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property

import numpy as np

from . import kernels


class Tag(IntEnum):
    INFLOW = 1
    WALL = 2
    OUTFLOW = 3


class MeshError(ValueError):
    pass


class DeformationError(ValueError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class QualityReport:
    min_det: float
    max_det: float
    max_frob: float

    @property
    def passed(self):
        return self.min_det >= 0.5 and self.max_det <= 2.0 and self.max_frob <= 0.3

    # the field is called ``pass`` in prose; ``pass`` is a keyword
    ok = passed


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    ``facets`` are the boundary facets, stored with the orientation they have
    inside their (positively oriented) cell, so in 2D the domain lies to the
    left of each boundary edge.
    """

    vertices: np.ndarray
    cells: np.ndarray
    facets: np.ndarray
    facet_tags: np.ndarray
    deformable_mask: np.ndarray

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_cells(self):
        return self.cells.shape[0]

    @property
    def n_facets(self):
        return self.facets.shape[0]

    @cached_property
    def geometry(self):
        """(barycentric gradients, cell measures)."""
        return kernels.simplex_geometry(
            np.ascontiguousarray(self.vertices, dtype=float),
            np.ascontiguousarray(self.cells, dtype=np.int64),
        )

    @property
    def grads(self):
        return self.geometry[0]

    @property
    def volumes(self):
        return self.geometry[1]

    @cached_property
    def facet_cell(self):
        return _match_facets(self.cells, self.facets)[0]

    @cached_property
    def facet_opposite(self):
        """Local index (in the adjacent cell) of the vertex opposite each facet."""
        return _match_facets(self.cells, self.facets)[1]

    @cached_property
    def normals(self):
        g = self.grads[self.facet_cell, self.facet_opposite]
        return -g / np.linalg.norm(g, axis=1)[:, None]

    @cached_property
    def facet_measures(self):
        X = self.vertices[self.facets]
        if self.dim == 2:
            return np.linalg.norm(X[:, 1] - X[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 2] - X[:, 0]), axis=1)

    def facets_with(self, *tags):
        return np.flatnonzero(np.isin(self.facet_tags, [int(t) for t in tags]))

    def vertices_on(self, *tags):
        return np.unique(self.facets[self.facets_with(*tags)])

    @cached_property
    def boundary_vertices(self):
        return np.unique(self.facets)

    @cached_property
    def deformable_vertices(self):
        """Vertices whose every boundary facet is deformable."""
        bad = np.unique(self.facets[~self.deformable_mask])
        good = np.unique(self.facets[self.deformable_mask])
        return np.setdiff1d(good, bad)

    @cached_property
    def fixed_vertices(self):
        return np.setdiff1d(self.boundary_vertices, self.deformable_vertices)

    @cached_property
    def deformable_vertex_mask(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.deformable_vertices] = True
        return mask

    def with_vertices(self, vertices):
        return Mesh(np.asarray(vertices, dtype=float), self.cells, self.facets,
                    self.facet_tags, self.deformable_mask)


def _match_facets(cells, facets):
    d = facets.shape[1]
    nl = cells.shape[1]
    table = {}
    for loc in range(nl):
        others = [k for k in range(nl) if k != loc]
        keys = np.sort(cells[:, others], axis=1)
        for c, key in enumerate(map(tuple, keys)):
            table.setdefault(key, []).append((c, loc))
    fcell = np.empty(len(facets), dtype=np.int64)
    fopp = np.empty(len(facets), dtype=np.int64)
    for f, key in enumerate(map(tuple, np.sort(facets, axis=1))):
        hits = table.get(key, [])
        if len(hits) != 1:
            what = "no cell" if not hits else "an interior facet"
            raise MeshError(f"facet {f} {tuple(facets[f])} is {what}")
        fcell[f], fopp[f] = hits[0]
    assert d == nl - 1
    return fcell, fopp


def _boundary_facet_keys(cells):
    nl = cells.shape[1]
    count = {}
    for loc in range(nl):
        others = [k for k in range(nl) if k != loc]
        for key in map(tuple, np.sort(cells[:, others], axis=1)):
            count[key] = count.get(key, 0) + 1
    return {k for k, v in count.items() if v == 1}


def build_mesh(vertices, cells, facets, facet_tags, deformable_mask=None):
    """Validate raw arrays and return a :class:`Mesh`.

    Negatively oriented cells are reordered; boundary facets are reoriented to
    follow their cell; every boundary facet must carry exactly one tag.
    """
    vertices = np.array(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    facets = np.array(facets, dtype=np.int64).reshape(-1, cells.shape[1] - 1)
    facet_tags = np.array(facet_tags, dtype=np.int64)
    if deformable_mask is None:
        deformable_mask = np.zeros(len(facets), dtype=bool)
    deformable_mask = np.array(deformable_mask, dtype=bool)

    used = np.zeros(len(vertices), dtype=bool)
    used[cells.ravel()] = True
    if not used.all():
        raise MeshError(f"unreferenced vertices: {np.flatnonzero(~used)[:10].tolist()}")

    _, vol = kernels.simplex_geometry_np(vertices, cells)
    neg = vol < 0
    if np.any(vol == 0):
        raise MeshError(f"degenerate cell {int(np.flatnonzero(vol == 0)[0])}")
    cells[neg, 0], cells[neg, 1] = cells[neg, 1].copy(), cells[neg, 0].copy()

    bad_tags = ~np.isin(facet_tags, [int(t) for t in Tag])
    if bad_tags.any():
        raise MeshError(f"facet {int(np.flatnonzero(bad_tags)[0])} has no valid tag")
    keys = [tuple(k) for k in np.sort(facets, axis=1)]
    if len(set(keys)) != len(keys):
        seen = set()
        for f, k in enumerate(keys):
            if k in seen:
                raise MeshError(f"facet {f} {k} is tagged more than once")
            seen.add(k)
    missing = _boundary_facet_keys(cells) - set(keys)
    if missing:
        raise MeshError(f"boundary facet {sorted(missing)[0]} carries no tag")
    if np.any(deformable_mask & (facet_tags != Tag.WALL)):
        raise MeshError("deformable facets must be wall facets")

    fcell, fopp = _match_facets(cells, facets)
    # reorient facets to the order they appear in their cell
    oriented = facets.copy()
    if cells.shape[1] == 3:
        for f in range(len(facets)):
            c = cells[fcell[f]]
            o = fopp[f]
            oriented[f] = (c[(o + 1) % 3], c[(o + 2) % 3])
    return Mesh(vertices, cells, oriented, facet_tags, deformable_mask)


def facet_normal(mesh, facet):
    if not 0 <= facet < mesh.n_facets:
        raise MeshError(f"{facet} is not a boundary facet index")
    return mesh.normals[facet].copy()


def cell_jacobians(mesh, W):
    """Per-cell gradient of the P1 interpolant of W, shape (nc, d, d), (DW)_ij = d_j W_i."""
    W = np.asarray(W, dtype=float).reshape(mesh.n_vertices, mesh.dim)
    return np.einsum("cai,caj->cij", W[mesh.cells], mesh.grads)


def deformation_quality(mesh, W, t):
    DW = t * cell_jacobians(mesh, W)
    det = np.linalg.det(np.eye(mesh.dim) + DW)
    frob = np.linalg.norm(DW, axis=(1, 2))
    return QualityReport(float(det.min()), float(det.max()), float(frob.max()))


def max_admissible_step(mesh, W, t_cap=np.inf):
    """Largest t such that every step in (0, t] passes :func:`deformation_quality`."""
    DW = cell_jacobians(mesh, W)
    frob = np.linalg.norm(DW, axis=(1, 2)).max()
    t = t_cap if frob == 0 else min(t_cap, 0.3 / frob)
    if mesh.dim == 2:
        # det(I + tA) = 1 + t tr A + t^2 det A
        b = np.trace(DW, axis1=1, axis2=2)
        c = np.linalg.det(DW)
        for level in (0.5, 2.0):
            t = min(t, _first_positive_root(c, b, 1.0 - level))
        return float(t)
    lo, hi = 0.0, t
    if deformation_quality(mesh, W, hi).passed:
        return float(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if deformation_quality(mesh, W, mid).passed else (lo, mid)
    return lo


def _first_positive_root(a, b, c):
    """Smallest positive root over all quadratics a t^2 + b t + c (inf if none)."""
    roots = np.full(a.shape, np.inf)
    lin = np.abs(a) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        r = -c / b[lin]
        roots[lin] = np.where(r > 0, r, np.inf)
        qa, qb = a[~lin], b[~lin]
        disc = qb * qb - 4 * qa * c
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        r1 = (-qb - sq) / (2 * qa)
        r2 = (-qb + sq) / (2 * qa)
        r1 = np.where(r1 > 0, r1, np.inf)
        r2 = np.where(r2 > 0, r2, np.inf)
        roots[~lin] = np.fmin(np.nan_to_num(r1, nan=np.inf), np.nan_to_num(r2, nan=np.inf))
    return float(roots.min()) if roots.size else np.inf


def deform(mesh, W, t):
    W = np.asarray(W, dtype=float).reshape(mesh.n_vertices, mesh.dim)
    if t == 0:
        return mesh
    fixed = mesh.fixed_vertices
    if np.any(W[fixed] != 0):
        v = int(fixed[np.any(W[fixed] != 0, axis=1)][0])
        raise DeformationError(f"displacement is nonzero on fixed boundary vertex {v}")
    report = deformation_quality(mesh, W, t)
    if not report.passed:
        raise DeformationError(f"step {t:g} fails the quality check: {report}", report)
    moved = mesh.with_vertices(mesh.vertices + t * W)
    if np.any(moved.volumes <= 0):
        raise DeformationError("deformation inverts a cell", report)
    return moved


# --------------------------------------------------------------------------
# boundary polylines and curvature (2D)
# --------------------------------------------------------------------------


def boundary_neighbours(mesh):
    """prev/next vertex along the oriented boundary (2D), -1 where undefined."""
    prev = -np.ones(mesh.n_vertices, dtype=np.int64)
    nxt = -np.ones(mesh.n_vertices, dtype=np.int64)
    nxt[mesh.facets[:, 0]] = mesh.facets[:, 1]
    prev[mesh.facets[:, 1]] = mesh.facets[:, 0]
    return prev, nxt


def turning_angles(X, prev, idx, nxt):
    e1 = X[idx] - X[prev]
    e2 = X[nxt] - X[idx]
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dot = np.einsum("ij,ij->i", e1, e2)
    l1 = np.linalg.norm(e1, axis=1)
    l2 = np.linalg.norm(e2, axis=1)
    return np.arctan2(cross, dot), 0.5 * (l1 + l2)


def boundary_curvature(mesh, vertices=None):
    """Discrete curvature at deformable boundary vertices.

    Returns ``(vertex ids, h, lumped measure)``; h is the turning angle over the
    dual edge length, positive where the boundary is convex.
    """
    if mesh.dim != 2:
        raise NotImplementedError("boundary curvature is implemented for 2D meshes")
    ids = mesh.deformable_vertices if vertices is None else np.asarray(vertices)
    prev, nxt = boundary_neighbours(mesh)
    if np.any(prev[ids] < 0) or np.any(nxt[ids] < 0):
        raise MeshError("isolated deformable vertex")
    theta, m = turning_angles(mesh.vertices, prev[ids], ids, nxt[ids])
    return ids, theta / m, m


def vertex_normals(mesh):
    """Length-weighted average of adjacent boundary facet normals (unit)."""
    acc = np.zeros((mesh.n_vertices, mesh.dim))
    w = mesh.facet_measures[:, None] * mesh.normals
    for k in range(mesh.facets.shape[1]):
        np.add.at(acc, mesh.facets[:, k], w)
    norm = np.linalg.norm(acc, axis=1)
    out = np.zeros_like(acc)
    on = norm > 0
    out[on] = acc[on] / norm[on, None]
    return out


def shoelace_area(mesh):
    X = mesh.vertices[mesh.facets]
    return 0.5 * float(np.sum(X[:, 0, 0] * X[:, 1, 1] - X[:, 1, 0] * X[:, 0, 1]))


# --------------------------------------------------------------------------
# generators
# --------------------------------------------------------------------------


def _structured(P, ni, nj):
    """Triangulate a (ni+1) x (nj+1) grid of points P[i, j]; return verts, cells, idx."""
    idx = np.arange((ni + 1) * (nj + 1)).reshape(ni + 1, nj + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[1:, :-1].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[:-1, 1:].ravel()
    cells = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    return P.reshape(-1, 2), cells, idx


def rectangle_mesh(nx, ny, lx=1.0, ly=1.0, deformable=("top", "bottom"), walls=True):
    """Channel [0, lx] x [0, ly]: inflow left, outflow right, walls top/bottom.

    With ``walls=False`` every side is a wall (useful for purely geometric tests).
    """
    xs = np.linspace(0.0, lx, nx + 1)
    ys = np.linspace(0.0, ly, ny + 1)
    P = np.stack(np.meshgrid(xs, ys, indexing="ij"), axis=-1)
    verts, cells, idx = _structured(P, nx, ny)
    sides = {
        "bottom": np.stack([idx[:-1, 0], idx[1:, 0]], 1),
        "right": np.stack([idx[-1, :-1], idx[-1, 1:]], 1),
        "top": np.stack([idx[1:, -1], idx[:-1, -1]], 1),
        "left": np.stack([idx[0, 1:], idx[0, :-1]], 1),
    }
    tag_of = {"bottom": Tag.WALL, "top": Tag.WALL, "left": Tag.INFLOW, "right": Tag.OUTFLOW}
    if not walls:
        tag_of = dict.fromkeys(sides, Tag.WALL)
    facets, tags, defm = [], [], []
    for name, edges in sides.items():
        facets.append(edges)
        tags += [tag_of[name]] * len(edges)
        defm += [name in deformable and tag_of[name] == Tag.WALL] * len(edges)
    return build_mesh(verts, cells, np.concatenate(facets), tags, defm)


@dataclass(frozen=True)
class BendGeometry:
    r_b: float = 2.86
    l_in: float = 1.0
    l_out: float = 2.0
    width: float = 1.0


def bend_mesh(n_in=10, n_arc=60, n_out=20, n_eta=16, geometry=BendGeometry()):
    """2D quarter bend: straight inlet along +x, 90 degree arc, outlet downwards.

    Arc walls are deformable; inlet/outlet pipe walls are fixed.
    """
    g = geometry
    ns = n_in + n_arc + n_out
    eta = np.linspace(-0.5, 0.5, n_eta + 1) * g.width
    P = np.empty((ns + 1, n_eta + 1, 2))
    for i in range(ns + 1):
        r = g.r_b + eta
        if i <= n_in:
            x = -g.l_in * (1 - i / n_in)
            P[i, :, 0], P[i, :, 1] = x, r
        elif i <= n_in + n_arc:
            phi = 0.5 * np.pi * (i - n_in) / n_arc
            P[i, :, 0], P[i, :, 1] = r * np.sin(phi), r * np.cos(phi)
        else:
            y = -g.l_out * (i - n_in - n_arc) / n_out
            P[i, :, 0], P[i, :, 1] = r, y
    verts, cells, idx = _structured(P, ns, n_eta)
    inner = np.stack([idx[:-1, 0], idx[1:, 0]], 1)
    outer = np.stack([idx[1:, -1], idx[:-1, -1]], 1)
    inlet = np.stack([idx[0, 1:], idx[0, :-1]], 1)
    outlet = np.stack([idx[-1, :-1], idx[-1, 1:]], 1)
    on_arc = (np.arange(ns) >= n_in) & (np.arange(ns) < n_in + n_arc)
    facets = np.concatenate([inner, outer, inlet, outlet])
    tags = [Tag.WALL] * (2 * ns) + [Tag.INFLOW] * n_eta + [Tag.OUTFLOW] * n_eta
    defm = np.concatenate([on_arc, on_arc, np.zeros(2 * n_eta, bool)])
    return build_mesh(verts, cells, facets, tags, defm)


def disk_mesh(n, radius=1.0):
    """Fan triangulation of a regular n-gon; the whole boundary is deformable wall."""
    phi = 2 * np.pi * np.arange(n) / n
    verts = np.vstack([[0.0, 0.0], radius * np.stack([np.cos(phi), np.sin(phi)], 1)])
    ring = 1 + np.arange(n)
    cells = np.stack([np.zeros(n, int), ring, np.roll(ring, -1)], 1)
    facets = np.stack([ring, np.roll(ring, -1)], 1)
    return build_mesh(verts, cells, facets, [Tag.WALL] * n, np.ones(n, bool))
