import json
import math

import numpy as np
import pytest

from wgfem.problems import (
    ProblemError,
    builtin_problem,
    load_problem,
    problem_from_config,
    validate_problem,
)


def fd_operator(prob, x, y, h=1e-3):
    """-div(a(u) grad u) from values of u and a only (conservative central differences)."""
    u = prob.u_exact

    def flux(xa, ya, xb, yb):
        um = u(0.5 * (xa + xb), 0.5 * (ya + yb))
        return prob.a(0, 0, um) * (u(xb, yb) - u(xa, ya)) / h

    fx = flux(x, y, x + h, y) - flux(x - h, y, x, y)
    fy = flux(x, y, x, y + h) - flux(x, y - h, x, y)
    return -(fx + fy) / h


def test_ex1_source_at_centre():
    p = builtin_problem("ex1")
    assert p.f(0.5, 0.5) == pytest.approx(4 * math.pi ** 2, rel=1e-14)
    assert p.u_exact(0.5, 0.5) == pytest.approx(1.0)
    assert p.a(0, 0, 0.5) == 1.5


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_source_matches_finite_differences(name, rng):
    p = builtin_problem(name)
    pts = rng.uniform(0.02, 0.98, (100, 2))
    f = p.f(pts[:, 0], pts[:, 1])
    x, y = pts.T
    # Richardson step removes the h^2 term of the oracle's own error
    fd = (4 * fd_operator(p, x, y, 1e-3) - fd_operator(p, x, y, 2e-3)) / 3
    assert np.all(np.abs(f - fd) <= 1e-5 * np.maximum(np.abs(f), 1.0))


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_gradient_matches_finite_differences(name, rng):
    p = builtin_problem(name)
    x, y = rng.uniform(0, 1, (2, 50))
    gx, gy = p.grad_u_exact(x, y)
    e = 1e-6
    np.testing.assert_allclose(gx, (p.u_exact(x + e, y) - p.u_exact(x - e, y)) / (2 * e), atol=1e-7)
    np.testing.assert_allclose(gy, (p.u_exact(x, y + e) - p.u_exact(x, y - e)) / (2 * e), atol=1e-7)


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_boundary_data_vanish(name):
    p = builtin_problem(name)
    t = np.linspace(0, 1, 41)
    for x, y in ((t, 0 * t), (t, 0 * t + 1), (0 * t, t), (0 * t + 1, t)):
        assert np.all(p.g(x, y) == 0)
        assert np.all(np.abs(p.u_exact(x, y)) < 1e-15)


@pytest.mark.parametrize("name", ["ex1", "ex2"])
def test_builtins_validate(name):
    p = builtin_problem(name)
    validate_problem(p)
    assert not p.linear
    assert p.coercivity == min(p.alpha0, 1.0)
    assert p.has_exact


def test_unknown_builtin():
    with pytest.raises(ProblemError, match="unknown problem"):
        builtin_problem("ex3")


CONFIG = {
    "a": "2 + sin(u)/2", "a_u": "cos(u)/2",
    "f": "2*pi^2*sin(pi*x)*sin(pi*y)", "g": "0",
    "u_exact": "sin(pi*x)*sin(pi*y)",
    "grad_u_exact": ["pi*cos(pi*x)*sin(pi*y)", "pi*sin(pi*x)*cos(pi*y)"],
    "alpha0": 1.5, "alpha1": 2.5,
}


def test_config_problem():
    p = problem_from_config(CONFIG)
    validate_problem(p)
    x = np.array([0.25, 0.5])
    np.testing.assert_allclose(p.u_exact(x, x), np.sin(np.pi * x) ** 2)
    gx, gy = p.grad_u_exact(x, x)
    assert gx.shape == (2,)
    assert p.g(x, x).shape == (2,)
    assert not p.linear


def test_config_linear_flag():
    p = problem_from_config({**CONFIG, "a": "1 + x^2", "a_u": "0", "alpha0": 1, "alpha1": 2})
    assert p.linear


def test_load_problem_from_file(tmp_path):
    path = tmp_path / "p.json"
    path.write_text(json.dumps({**CONFIG, "comment": "ignored"}))
    p = load_problem(str(path))
    assert p.alpha1 == 2.5
    assert load_problem("ex2").name == "ex2"


@pytest.mark.parametrize("change", [
    {"a": None},
    {"f": "sin(x"},
    {"f": "u*x"},
    {"alpha0": 3.0},
    {"alpha0": 0.0},
    {"grad_u_exact": ["x"]},
])
def test_config_errors(change):
    cfg = {k: v for k, v in {**CONFIG, **change}.items() if v is not None}
    with pytest.raises(ProblemError):
        problem_from_config(cfg)


def test_load_problem_errors(tmp_path):
    with pytest.raises(ProblemError):
        load_problem(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ProblemError, match="malformed"):
        load_problem(str(bad))


def test_validation_catches_bounds():
    p = problem_from_config({**CONFIG, "alpha1": 2.2})
    with pytest.raises(ProblemError, match="outside"):
        validate_problem(p)


def test_validation_catches_wrong_derivative():
    p = problem_from_config({**CONFIG, "a_u": "cos(u)"})
    with pytest.raises(ProblemError, match="finite differences"):
        validate_problem(p)


def test_validation_catches_nonpositive_coefficient():
    p = problem_from_config({**CONFIG, "a": "1 + u", "a_u": "1", "alpha0": 0.5, "alpha1": 6})
    with pytest.raises(ProblemError):
        validate_problem(p)
