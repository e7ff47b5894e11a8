import csv
import io
import json
import subprocess
import sys

import pytest

from wgfem.cli import (
    CONVERGENCE_HEADER,
    EXIT_OK,
    EXIT_SOLVER,
    EXIT_USAGE,
    EXIT_VALIDATION,
    TWOGRID_HEADER,
    main,
    parse_int_list,
    parse_mesh_spec,
)
from wgfem.mesh import MeshError, build_rectangular, export_mesh
from wgfem.problems import builtin_problem
from wgfem.system import newton_solve, solution_from_json


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_helpers():
    assert parse_int_list("4, 8,16") == [4, 8, 16]
    mesh, label, n = parse_mesh_spec("rect:3")
    assert (mesh.n_cells, n) == (9, 3)
    mesh, label, n = parse_mesh_spec("pquad:4:0.2:7")
    assert mesh.n_cells == 16 and mesh.structured_n is None
    with pytest.raises(MeshError):
        parse_mesh_spec("pquad:4:0.6:7")


def test_convergence_csv(tmp_path):
    out = tmp_path / "t.csv"
    code = main(["convergence", "--problem", "ex1", "--grids", "4,8,16", "--no-timings",
                 "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == list(CONVERGENCE_HEADER)
    assert rows[0][:8] == ["mesh", "n", "h", "err_h1", "err_l2", "rate_placeholder",
                           "newton_iters", "seconds"]
    assert [r[1] for r in rows[1:4]] == ["4", "8", "16"]
    assert rows[1][2] == "2.500000e-01"
    assert rows[1][7] == ""
    assert rows[-1][0] == "fit"
    assert 0.85 <= float(rows[-1][8]) <= 1.15


def test_convergence_is_byte_stable(tmp_path):
    args = ["convergence", "--problem", "ex2", "--grids", "2,4", "--grid-type", "pquad",
            "--delta", "0.3", "--seed", "5", "--no-timings", "-k", "2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == EXIT_OK
    assert main(args + ["--out", str(b)]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_convergence_failure_row(tmp_path):
    out = tmp_path / "t.csv"
    code = main(["convergence", "--problem", "ex1", "--grids", "4,8", "--max-iter", "1",
                 "--out", str(out)])
    assert code == EXIT_SOLVER
    rows = read_csv(out)
    assert rows[-1][0] == "FAILED:rect:4"
    assert len(rows[-1]) == len(CONVERGENCE_HEADER)


def test_twogrid_explicit_pairing(tmp_path):
    out = tmp_path / "c.csv"
    code = main(["twogrid", "--problem", "ex1", "--fine", "4,9", "--pairing", "explicit:2,3",
                 "--no-timings", "--out", str(out)])
    assert code == EXIT_OK
    rows = read_csv(out)
    assert rows[0] == list(TWOGRID_HEADER)
    assert [r[:2] for r in rows[1:3]] == [["4", "2"], ["9", "3"]]
    for r in rows[1:3]:
        assert float(r[12]) <= 1.5
    assert rows[-1][0] == "fit"


@pytest.mark.parametrize("argv", [
    [],
    ["solve", "--problem", "ex1"],
    ["convergence", "--problem", "ex1", "--grids", "4,x"],
    ["twogrid", "--problem", "ex1", "--fine", "4,9", "--pairing", "explicit:2"],
    ["twogrid", "--problem", "ex1", "--fine", "4", "--pairing", "explicit:8"],
    ["twogrid", "--problem", "ex1", "--fine", "4", "--pairing", "cube"],
    ["solve", "--problem", "ex1", "--mesh", "rect:2", "--degree", "0"],
    ["frobnicate"],
    ["solve", "--problem", "ex1", "--mesh", "missing-mesh.json"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


@pytest.mark.parametrize("argv", [
    ["solve", "--problem", "ex9", "--mesh", "rect:2"],
    ["solve", "--problem", "ex1", "--mesh", "pquad:4:0.7:1"],
])
def test_validation_errors(argv, capsys):
    assert main(argv) == EXIT_VALIDATION


def test_malformed_mesh_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"vertices": [[0, 0], [1, 0]], "cells": [[0, 1]]}))
    assert main(["solve", "--problem", "ex1", "--mesh", str(path)]) == EXIT_VALIDATION


def test_bad_config_bounds(tmp_path):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"a": "1+x", "a_u": "0", "f": "1", "g": "0",
                               "alpha0": 1, "alpha1": 1.5}))
    assert main(["solve", "--problem", str(cfg), "--mesh", "rect:2"]) == EXIT_VALIDATION
    assert main(["solve", "--problem", str(cfg), "--mesh", "rect:2",
                 "--skip-validation"]) == EXIT_OK


def test_solve_roundtrip(tmp_path, capsys):
    out = tmp_path / "sol.json"
    assert main(["solve", "--problem", "ex1", "--mesh", "rect:4", "--out", str(out)]) == EXIT_OK
    assert "Newton iterations" in capsys.readouterr().out
    mesh, u = solution_from_json(out.read_text())
    direct, _ = newton_solve(builtin_problem("ex1"), build_rectangular(4), 1)
    assert mesh.n_cells == 16
    assert u.coeffs.tobytes() == direct.coeffs.tobytes()
    report = json.loads(out.read_text())["report"]
    assert report["degree"] == 1 and report["converged"]


def test_solve_on_mesh_file(tmp_path):
    path = tmp_path / "m.json"
    path.write_text(export_mesh(build_rectangular(3)))
    assert main(["solve", "--problem", "ex2", "--mesh", str(path), "-k", "2"]) == EXIT_OK


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "wgfem", "convergence", "--problem", "ex1",
                          "--grids", "2,4", "--no-timings"], capture_output=True, text=True)
    assert res.returncode == 0
    rows = list(csv.reader(io.StringIO(res.stdout)))
    assert rows[0][0] == "mesh" and rows[-1][0] == "fit"
