import math

import numpy as np
import pytest

from eroopt.io import (ConfigError, MeshFormatError, TagMap, load_config, read_csv, read_gmsh,
                       write_csv, write_gmsh, write_vtk)
from eroopt.mesh import Tag, bend_mesh


def test_gmsh_roundtrip(tmp_path):
    m = bend_mesh(2, 6, 3, 3)
    path = tmp_path / "m.msh"
    write_gmsh(m, path)
    r = read_gmsh(path)
    assert np.array_equal(r.vertices, m.vertices)
    assert np.array_equal(r.cells, m.cells)
    assert np.array_equal(r.facet_tags, m.facet_tags)
    assert np.array_equal(r.deformable_mask, m.deformable_mask)


def test_gmsh_custom_tag_map(tmp_path):
    m = bend_mesh(2, 6, 3, 3)
    tm = TagMap(inflow=(11,), wall=(12,), outflow=(13,), deformable=(14, 15))
    path = tmp_path / "m.msh"
    write_gmsh(m, path, tm)
    assert np.array_equal(read_gmsh(path, tm).deformable_mask, m.deformable_mask)
    with pytest.raises(MeshFormatError):
        read_gmsh(path)  # ids 11..14 are unknown to the default map


def test_gmsh_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        read_gmsh(tmp_path / "missing.msh")
    bad = tmp_path / "bad.msh"
    bad.write_text("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n")
    with pytest.raises(MeshFormatError):
        read_gmsh(bad)
    empty = tmp_path / "empty.msh"
    empty.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    with pytest.raises(MeshFormatError):
        read_gmsh(empty)


def test_vtk_layout(tmp_path):
    m = bend_mesh(2, 6, 3, 3)
    path = tmp_path / "f.vtk"
    write_vtk(m, path, {"alpha": np.ones(m.n_vertices), "u": np.zeros((m.n_vertices, 2))},
              {"vol": m.volumes})
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert f"POINTS {m.n_vertices} double" in text
    assert f"CELLS {m.n_cells} {4 * m.n_cells}" in text
    assert "VECTORS u double" in text and "SCALARS vol double 1" in text
    with pytest.raises(ValueError):
        write_vtk(m, path, {"bad": np.ones(3)})


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "h.csv"
    write_csv(path, ["a", "b", "status"], [[1.0, 0.1 + 0.2, "ok"], [math.nan, 2, "x"]], "history")
    schema, header, rows = read_csv(path)
    assert schema == "# schema: eroopt-history v1"
    assert header == ["a", "b", "status"]
    assert rows[0][1] == 0.1 + 0.2  # repr keeps full precision
    assert math.isnan(rows[1][0])


def test_load_config(tmp_path):
    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text("""
[mesh]
path = meshes/bend.msh
deformable = 4, 5
[physics]
Re = 150
d_p = 9e-6   ; particle diameter
[optimizer]
t0 = inf
max_iter = 3
[sweep]
diameters = 5e-6 7e-6
[output]
dir = results
""")
    cfg = load_config(cfg_path)
    assert cfg.mesh == str((tmp_path / "meshes/bend.msh").resolve())
    assert cfg.tag_map.deformable == (4, 5)
    assert cfg.physics == {"Re": 150, "d_p": 9e-6}
    assert cfg.optimizer["t0"] == math.inf and cfg.optimizer["max_iter"] == 3
    assert cfg.sweep == [5e-6, 7e-6]
    assert cfg.out == "results"


def test_config_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "none.ini")
    p = tmp_path / "bad.ini"
    p.write_text("[nonsense]\nx = 1\n")
    with pytest.raises(ConfigError):
        load_config(p)
    assert load_config(None).mesh == "builtin:bend"


def test_tag_map_lookup():
    tm = TagMap()
    assert tm.tag_of(4) == Tag.WALL and tm.tag_of(99) is None
    assert tm.physical_id(Tag.WALL, deformable=True) == 4
