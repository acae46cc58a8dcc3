"""File formats: Gmsh 2.2 ASCII meshes, legacy VTK output, versioned CSV and INI run configs."""

import configparser
import csv
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .mesh import MeshError, Tag, build_mesh

CSV_SCHEMA_VERSION = 1

# gmsh element type -> (dimension, number of nodes)
_GMSH_TYPES = {15: (0, 1), 1: (1, 2), 2: (2, 3), 4: (3, 4)}
_CELL_TYPE = {2: 2, 3: 4}
_FACET_TYPE = {2: 1, 3: 2}
_VTK_CELL = {2: 5, 3: 10}


@dataclass(frozen=True)
class TagMap:
    """Gmsh physical ids of each boundary part; deformable ids are walls."""

    inflow: tuple = (1,)
    wall: tuple = (2,)
    outflow: tuple = (3,)
    deformable: tuple = (4,)

    def tag_of(self, pid):
        for tag, ids in ((Tag.INFLOW, self.inflow), (Tag.OUTFLOW, self.outflow),
                         (Tag.WALL, self.wall + self.deformable)):
            if pid in ids:
                return tag
        return None

    def physical_id(self, tag, deformable=False):
        if deformable:
            return self.deformable[0]
        return {Tag.INFLOW: self.inflow, Tag.WALL: self.wall, Tag.OUTFLOW: self.outflow}[tag][0]


class MeshFormatError(MeshError):
    pass


def read_gmsh(path, tag_map=TagMap()):
    """Read a Gmsh 2.2 ASCII file into a :class:`Mesh`."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"mesh file not found: {path}")
    lines = iter(path.read_text().splitlines())
    nodes, elements = None, []
    for line in lines:
        line = line.strip()
        if line == "$MeshFormat":
            version, ftype, _ = next(lines).split()
            if not version.startswith("2") or ftype != "0":
                raise MeshFormatError(f"{path}: only ASCII Gmsh 2.x is supported (got {version})")
        elif line == "$Nodes":
            n = int(next(lines))
            ids, xyz = np.empty(n, dtype=np.int64), np.empty((n, 3))
            for k in range(n):
                parts = next(lines).split()
                ids[k] = int(parts[0])
                xyz[k] = [float(v) for v in parts[1:4]]
            nodes = (ids, xyz)
        elif line == "$Elements":
            n = int(next(lines))
            for _ in range(n):
                parts = [int(v) for v in next(lines).split()]
                etype, ntags = parts[1], parts[2]
                if etype not in _GMSH_TYPES:
                    raise MeshFormatError(f"{path}: unsupported element type {etype}")
                phys = parts[3] if ntags else 0
                elements.append((etype, phys, parts[3 + ntags:]))
    if nodes is None or not elements:
        raise MeshFormatError(f"{path}: missing $Nodes or $Elements section")
    ids, xyz = nodes
    dim = max(_GMSH_TYPES[e[0]][0] for e in elements)
    if dim not in (2, 3):
        raise MeshFormatError(f"{path}: no 2D or 3D cells")
    index = {int(i): k for k, i in enumerate(ids)}
    cells, facets, ftags, fdef = [], [], [], []
    for etype, phys, conn in elements:
        edim = _GMSH_TYPES[etype][0]
        local = [index[c] for c in conn]
        if edim == dim:
            cells.append(local)
        elif edim == dim - 1:
            tag = tag_map.tag_of(phys)
            if tag is None:
                raise MeshFormatError(f"{path}: physical id {phys} is not in the tag map")
            facets.append(local)
            ftags.append(int(tag))
            fdef.append(phys in tag_map.deformable)
    # keep only referenced nodes
    cells = np.array(cells, dtype=np.int64)
    used = np.unique(cells)
    remap = -np.ones(len(ids), dtype=np.int64)
    remap[used] = np.arange(len(used))
    facets = np.array(facets, dtype=np.int64).reshape(-1, dim)
    return build_mesh(xyz[used, :dim], remap[cells], remap[facets], np.array(ftags),
                      np.array(fdef, dtype=bool))


def write_gmsh(mesh, path, tag_map=TagMap(), domain_id=10):
    d = mesh.dim
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames"]
    names = [(d - 1, tag_map.inflow[0], "Inflow"), (d - 1, tag_map.wall[0], "Wall"),
             (d - 1, tag_map.outflow[0], "Outflow"), (d - 1, tag_map.deformable[0], "Deformable"),
             (d, domain_id, "Domain")]
    out.append(str(len(names)))
    out += [f'{dd} {pid} "{name}"' for dd, pid, name in names]
    out += ["$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    X = np.zeros((mesh.n_vertices, 3))
    X[:, :d] = mesh.vertices
    out += [f"{k + 1} {x!r} {y!r} {z!r}" for k, (x, y, z) in enumerate(X.tolist())]
    out += ["$EndNodes", "$Elements", str(mesh.n_facets + mesh.n_cells)]
    k = 1
    for f, tag, dfm in zip(mesh.facets, mesh.facet_tags, mesh.deformable_mask):
        pid = tag_map.physical_id(Tag(int(tag)), bool(dfm))
        out.append(f"{k} {_FACET_TYPE[d]} 2 {pid} {pid} " + " ".join(str(v + 1) for v in f))
        k += 1
    for c in mesh.cells:
        out.append(f"{k} {_CELL_TYPE[d]} 2 {domain_id} {domain_id} " + " ".join(str(v + 1) for v in c))
        k += 1
    out.append("$EndElements")
    Path(path).write_text("\n".join(out) + "\n")


def write_vtk(mesh, path, point_data=None, cell_data=None, title="eroopt"):
    """Legacy ASCII VTK unstructured grid; vector fields are padded to 3 components."""
    nv, d = mesh.n_vertices, mesh.dim
    X = np.zeros((nv, 3))
    X[:, :d] = mesh.vertices
    nl = mesh.cells.shape[1]
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID",
           f"POINTS {nv} double"]
    out += [" ".join(repr(v) for v in row) for row in X.tolist()]
    out.append(f"CELLS {mesh.n_cells} {mesh.n_cells * (nl + 1)}")
    out += [f"{nl} " + " ".join(map(str, c)) for c in mesh.cells.tolist()]
    out.append(f"CELL_TYPES {mesh.n_cells}")
    out += [str(_VTK_CELL[d])] * mesh.n_cells

    def block(data, n, kind):
        if not data:
            return
        out.append(f"{kind} {n}")
        for name, arr in data.items():
            arr = np.asarray(arr, float)
            if arr.shape[0] != n:
                raise ValueError(f"field {name!r} has {arr.shape[0]} entries, expected {n}")
            if arr.ndim == 1:
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(repr(v) for v in arr.tolist())
            else:
                pad = np.zeros((n, 3))
                pad[:, :arr.shape[1]] = arr
                out.append(f"VECTORS {name} double")
                out.extend(" ".join(repr(v) for v in row) for row in pad.tolist())

    block(point_data, nv, "POINT_DATA")
    block(cell_data, mesh.n_cells, "CELL_DATA")
    Path(path).write_text("\n".join(out) + "\n")


def write_csv(path, columns, rows, kind):
    """CSV with a leading ``# schema: eroopt-<kind> v<N>`` comment line."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: eroopt-{kind} v{CSV_SCHEMA_VERSION}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def read_csv(path):
    """Inverse of :func:`write_csv`: (schema line, header, rows as float where possible)."""
    with open(path, newline="") as fh:
        schema = fh.readline().strip()
        reader = csv.reader(fh)
        header = next(reader)
        rows = []
        for r in reader:
            conv = []
            for v in r:
                try:
                    conv.append(float(v))
                except ValueError:
                    conv.append(v)
            rows.append(conv)
    return schema, header, rows


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------


@dataclass
class RunConfig:
    mesh: str = "builtin:bend"
    tag_map: TagMap = TagMap()
    physics: dict = field(default_factory=dict)
    erosion: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    optimizer: dict = field(default_factory=dict)
    sweep: list = field(default_factory=list)
    verify: dict = field(default_factory=dict)
    out: str = "eroopt-out"
    source: str = None


class ConfigError(ValueError):
    pass


def _value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("inf", "+inf"):
        return math.inf
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _ids(text):
    return tuple(int(v) for v in str(text).replace(",", " ").split())


def load_config(path=None):
    """Parse an INI file with sections [mesh] [physics] [erosion] [solver] [optimizer] [sweep]."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys such as Re and Stk are case sensitive
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    known = {"mesh", "physics", "erosion", "solver", "optimizer", "sweep", "verify", "output"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {sorted(unknown)}")
    cfg = replace(cfg, source=str(path))
    if parser.has_section("mesh"):
        sec = parser["mesh"]
        mesh = sec.get("path", cfg.mesh)
        if not mesh.startswith("builtin:") and not Path(mesh).is_absolute():
            mesh = str((path.parent / mesh).resolve())
        tm = {f.name: _ids(sec[f.name]) for f in fields(TagMap) if f.name in sec}
        cfg = replace(cfg, mesh=mesh, tag_map=replace(TagMap(), **tm))
    for name in ("physics", "erosion", "solver", "optimizer", "verify"):
        if parser.has_section(name):
            setattr(cfg, name, {k: _value(v) for k, v in parser[name].items()})
    if parser.has_section("sweep"):
        dias = parser["sweep"].get("diameters", "")
        cfg.sweep = [float(v) for v in dias.replace(",", " ").split()]
    if parser.has_section("output"):
        cfg.out = parser["output"].get("dir", cfg.out)
    return cfg
