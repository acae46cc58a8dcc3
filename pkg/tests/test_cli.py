import json

import pytest

from eroopt.cli import build_parser, main
from eroopt.io import read_csv, read_gmsh


def write_cfg(tmp_path, body):
    p = tmp_path / "run.ini"
    p.write_text(body)
    return p


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["forward", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)]) == 2
    assert "not found" in capsys.readouterr().err


def test_unknown_physics_key(tmp_path):
    cfg = write_cfg(tmp_path, "[physics]\nReynolds = 3\n")
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_bad_thread_count(tmp_path, monkeypatch):
    monkeypatch.setenv("EROOPT_THREADS", "zero")
    assert main(["verify", "--checks", "", "--out", str(tmp_path)]) == 2


def test_verify_without_checks_warns(tmp_path, capsys):
    assert main(["verify", "--checks", "", "--out", str(tmp_path)]) == 0
    assert "no checks selected" in capsys.readouterr().out


def test_verify_fast_checks(tmp_path):
    code = main(["verify", "--checks", "table1,adjoint_transpose", "--out", str(tmp_path)])
    report = json.loads((tmp_path / "verify.json").read_text())
    assert [r["name"] for r in report] == ["table1", "adjoint_transpose"]
    assert report[1]["passed"]
    # the tabulated De is not reproduced by the SI inputs
    assert code == 1 and not report[0]["passed"]


def test_forward_on_channel(tmp_path):
    cfg = write_cfg(tmp_path, "[mesh]\npath = builtin:channel\n[physics]\nRe = 50\n")
    assert main(["forward", "--config", str(cfg), "--out", str(tmp_path), "--vtk"]) == 0
    schema, header, rows = read_csv(tmp_path / "forward.csv")
    assert schema.startswith("# schema: eroopt-forward")
    assert (tmp_path / "forward.vtk").exists()


def test_sweep_single_diameter(tmp_path):
    cfg = write_cfg(tmp_path, "[mesh]\npath = builtin:bend-coarse\n[sweep]\ndiameters = 12e-6\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "sweep.csv")
    assert header == ["d_p", "Stk", "eta", "E", "status"]
    assert rows[0][4] == "ok" and 0 < rows[0][2] <= 1.05


def test_sweep_requires_diameters(tmp_path):
    cfg = write_cfg(tmp_path, "[mesh]\npath = builtin:bend-coarse\n")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_optimize_one_iteration(tmp_path):
    cfg = write_cfg(tmp_path, "[mesh]\npath = builtin:bend-coarse\n[optimizer]\nmax_iter = 1\n")
    assert main(["optimize", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    _, header, rows = read_csv(tmp_path / "history.csv")
    assert header[:2] == ["iter", "J"] and len(rows) == 2
    assert rows[1][1] < rows[0][1]
    assert read_gmsh(tmp_path / "final.msh").n_cells == 432
