import json

import numpy as np
import pytest
import scipy.sparse as sp

from wgfem.mesh import build_perturbed_quad, build_rectangular
from wgfem.problems import ProblemSpec, builtin_problem
from wgfem.system import (
    LinearSolverError,
    NewtonConfig,
    NewtonError,
    SparseSystem,
    _initial_state,
    apply_dirichlet,
    assemble_frozen,
    assemble_jacobian,
    assemble_residual,
    newton_solve,
    solution_from_json,
    solution_to_json,
    solve_linear,
)
from wgfem.analysis import energy_error
from wgfem.wgcore import CoefficientError, ElementOperators, WGFunction, project_Qb, project_Qh

from conftest import poisson_problem, random_polynomial


def random_state(ops, problem, rng, scale=0.3):
    u = _initial_state(problem, ops.mesh, ops.dofmap)
    u.coeffs[ops.dofmap.free] = scale * rng.standard_normal(ops.dofmap.n_free)
    return u


# -- sparse systems and linear solves -------------------------------------------------

def test_triplet_duplicates_summed():
    A = SparseSystem.from_triplets([0, 1, 0, 1, 0], [0, 1, 0, 0, 0],
                                   [1.0, 2.0, 3.0, 4.0, 0.5], 2, [0, 0]).matrix
    np.testing.assert_array_equal(A.toarray(), [[4.5, 0.0], [4.0, 2.0]])
    assert A.has_sorted_indices


def test_triplet_reduction_deterministic(rng):
    n = 50
    r, c = rng.integers(0, n, 4000), rng.integers(0, n, 4000)
    v = rng.standard_normal(4000)
    A = SparseSystem.from_triplets(r, c, v, n, np.zeros(n)).matrix
    B = SparseSystem.from_triplets(r, c, v, n, np.zeros(n)).matrix
    assert A.data.tobytes() == B.data.tobytes()
    dense = np.zeros((n, n))
    np.add.at(dense, (r, c), v)
    np.testing.assert_allclose(A.toarray(), dense, atol=1e-12)


def test_solve_identity(rng):
    b = rng.standard_normal(7)
    x = solve_linear(SparseSystem(sp.identity(7, format="csr"), b))
    np.testing.assert_array_equal(x, b)


def test_solve_tridiagonal_hand_value():
    A = sp.diags([-np.ones(3), 2 * np.ones(4), -np.ones(3)], [-1, 0, 1], format="csr")
    x = solve_linear(SparseSystem(A, np.array([1.0, 0, 0, 0])))
    np.testing.assert_allclose(x, [0.8, 0.6, 0.4, 0.2], atol=1e-15)


def test_solve_zero_rhs():
    A = sp.diags([2.0, 3.0], format="csr")
    assert np.array_equal(solve_linear(SparseSystem(A, np.zeros(2))), np.zeros(2))


def test_solve_singular_raises():
    A = sp.csr_matrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(LinearSolverError):
        solve_linear(SparseSystem(A, np.array([1.0, 0.0])))


def test_solve_dimension_mismatch():
    with pytest.raises(LinearSolverError):
        solve_linear(SparseSystem(sp.identity(3, format="csr"), np.ones(2)))


# -- boundary data -------------------------------------------------------------------------

def test_dirichlet_zero():
    m = build_rectangular(3)
    ops = ElementOperators(m, 2)
    values, free_index = apply_dirichlet(builtin_problem("ex1"), m, ops.dofmap)
    assert np.all(values == 0)
    assert len(values) == ops.dofmap.n_constrained
    assert np.all(free_index[ops.dofmap.constrained] == -1)


def test_dirichlet_x_on_unit_square():
    m = build_rectangular(1)
    ops = ElementOperators(m, 1)
    prob = poisson_problem(lambda x, y: x + 0 * y, lambda x, y: (1 + 0 * x, 0 * x),
                           lambda x, y: 0 * x)
    values, _ = apply_dirichlet(prob, m, ops.dofmap)
    e = next(e for e in range(m.n_edges) if list(m.edges[e]) == [0, 1])
    pos = list(np.flatnonzero(m.boundary)).index(e)
    np.testing.assert_allclose(values[2 * pos:2 * pos + 2], [0.5, 0.5], atol=1e-15)


def test_dirichlet_reproduces_polynomial_trace(rng):
    m = build_perturbed_quad(3, 0.2, 3)
    k = 2
    ops = ElementOperators(m, k)
    f, grad, lap = random_polynomial(rng, k)
    values, _ = apply_dirichlet(poisson_problem(f, grad, lap), m, ops.dofmap)
    expected = np.concatenate([project_Qb(f, m, e, k) for e in np.flatnonzero(m.boundary)])
    np.testing.assert_allclose(values, expected, atol=1e-13)
    # Qb of a P_k trace is the trace: check pointwise at a Gauss point of each edge
    for i, e in enumerate(np.flatnonzero(m.boundary)):
        a, b = m.vertices[m.edges[e]]
        t = 0.3
        p = a + 0.5 * (t + 1) * (b - a)
        leg = np.polynomial.legendre.legval(t, values[3 * i:3 * i + 3])
        assert abs(leg - f(p[0], p[1])) < 1e-12


# -- residual ---------------------------------------------------------------------------

def test_residual_zero_data():
    m = build_rectangular(3)
    ops = ElementOperators(m, 1)
    prob = poisson_problem(lambda x, y: 0 * x, lambda x, y: (0 * x, 0 * x), lambda x, y: 0 * x)
    u = WGFunction.zeros(ops.dofmap)
    assert np.all(assemble_residual(u, prob, m, ops) == 0)


@pytest.mark.parametrize("k", [1, 2])
@pytest.mark.parametrize("mesh", ["rect", "pquad"])
def test_residual_patch_consistency(k, mesh, rng):
    m = build_rectangular(4) if mesh == "rect" else build_perturbed_quad(4, 0.2, 5)
    ops = ElementOperators(m, k)
    f, grad, lap = random_polynomial(rng, k)
    prob = poisson_problem(f, grad, lap)
    u = project_Qh(f, m, k, ops.dofmap)
    assert np.abs(assemble_residual(u, prob, m, ops)).max() <= 1e-10


def test_residual_linear_in_f(rng):
    m = build_rectangular(3)
    ops = ElementOperators(m, 1)
    base = builtin_problem("ex1")
    double = ProblemSpec(name="2f", a=base.a, a_u=base.a_u, f=lambda x, y: 2 * base.f(x, y),
                         g=base.g, alpha0=base.alpha0, alpha1=base.alpha1)
    zero = ProblemSpec(name="0f", a=base.a, a_u=base.a_u, f=lambda x, y: 0 * x,
                       g=base.g, alpha0=base.alpha0, alpha1=base.alpha1)
    u = random_state(ops, base, rng)
    r0 = assemble_residual(u, zero, m, ops)
    r1 = assemble_residual(u, base, m, ops) - r0
    r2 = assemble_residual(u, double, m, ops) - r0
    np.testing.assert_allclose(r2, 2 * r1, rtol=1e-12, atol=1e-13)


# -- Jacobian -----------------------------------------------------------------------------

@pytest.mark.parametrize("name,k", [("ex1", 1), ("ex1", 2), ("ex2", 1), ("ex2", 2)])
def test_jacobian_matches_finite_differences(name, k, rng):
    m = build_perturbed_quad(4, 0.2, 2)
    ops = ElementOperators(m, k)
    prob = builtin_problem(name)
    for _ in range(2):
        u = random_state(ops, prob, rng)
        d = rng.standard_normal(ops.dofmap.n_free)
        J = assemble_jacobian(u, prob, m, ops)
        eps = 1e-7
        up, um = u.copy(), u.copy()
        up.coeffs[ops.dofmap.free] += eps * d
        um.coeffs[ops.dofmap.free] -= eps * d
        fd = (assemble_residual(up, prob, m, ops) - assemble_residual(um, prob, m, ops)) / (2 * eps)
        Jd = J @ d
        assert np.linalg.norm(fd - Jd) <= 1e-6 * np.linalg.norm(Jd)


def test_jacobian_symmetric_for_linear_problem(rng):
    m = build_perturbed_quad(3, 0.2, 2)
    ops = ElementOperators(m, 2)
    f, grad, lap = random_polynomial(rng, 2)
    prob = poisson_problem(f, grad, lap)
    J = assemble_jacobian(random_state(ops, prob, rng), prob, m, ops)
    assert (J - J.T).count_nonzero() == 0


def test_jacobian_locality():
    m = build_rectangular(4)
    ops = ElementOperators(m, 1)
    prob = builtin_problem("ex1")
    J = assemble_jacobian(_initial_state(prob, m, ops.dofmap), prob, m, ops).tocsr()
    dm = ops.dofmap
    for ci in (0, 5, 15):
        allowed = set(dm.free_index[ops.local_dofs(ci)]) - {-1}
        for row in dm.free_index[dm.cell_dofs(ci)]:
            cols = set(J.indices[J.indptr[row]:J.indptr[row + 1]])
            assert cols <= allowed


# -- frozen systems ---------------------------------------------------------------------

def test_frozen_unit_coefficient_matches_linear_jacobian(rng):
    m = build_rectangular(4)
    ops = ElementOperators(m, 1)
    f, grad, lap = random_polynomial(rng, 2)
    lin = poisson_problem(f, grad, lap)
    J = assemble_jacobian(random_state(ops, lin, rng), lin, m, ops)
    sys_ = assemble_frozen(lambda x, y: 0 * x, lin, m, ops)
    assert (J - sys_.matrix).count_nonzero() == 0


def test_frozen_ex1_is_spd():
    m = build_rectangular(8)
    ops = ElementOperators(m, 1)
    prob = builtin_problem("ex1")
    w = project_Qh(prob.u_exact, m, 1)
    A = assemble_frozen(w, prob, m, ops).matrix.toarray()
    assert np.array_equal(A, A.T)
    np.linalg.cholesky(A)


def test_frozen_rhs_independent_of_w():
    m = build_rectangular(4)
    ops = ElementOperators(m, 2)
    prob = builtin_problem("ex2")
    r1 = assemble_frozen(lambda x, y: 0 * x, prob, m, ops).rhs
    r2 = assemble_frozen(project_Qh(prob.u_exact, m, 2), prob, m, ops).rhs
    assert np.array_equal(r1, r2)


# -- Newton -----------------------------------------------------------------------------

def test_newton_linear_one_iteration(rng):
    m = build_rectangular(4)
    f, grad, lap = random_polynomial(rng, 3)
    u, rep = newton_solve(poisson_problem(f, grad, lap), m, 2)
    assert rep.iterations == 1
    assert len(rep.increments) == 2 and rep.increments[1] <= 1e-12


def test_newton_ex1_16x16():
    m = build_rectangular(16)
    prob = builtin_problem("ex1")
    u, rep = newton_solve(prob, m, 1)
    assert rep.converged and rep.iterations <= 15
    assert rep.increments[-1] < 1e-12
    inc = rep.increments
    assert inc[-3] > inc[-2] > inc[-1]
    assert set(rep.timings) >= {"setup", "assembly", "linear_solve", "total"}


@pytest.mark.parametrize("mesh", ["rect", "pquad"])
def test_newton_patch_p1(mesh, rng):
    m = build_rectangular(4) if mesh == "rect" else build_perturbed_quad(4, 0.25, 1)
    f, grad, lap = random_polynomial(rng, 1)
    prob = poisson_problem(f, grad, lap)
    ops = ElementOperators(m, 1)
    u, _ = newton_solve(prob, m, 1, ops=ops)
    assert energy_error(f, u, ops) <= 1e-9


def test_newton_dirichlet_invariance_and_determinism():
    m = build_perturbed_quad(4, 0.2, 6)
    prob = ProblemSpec(name="g", a=lambda x, y, u: 1 + 0.5 * np.sin(u),
                       a_u=lambda x, y, u: 0.5 * np.cos(u),
                       f=lambda x, y: 1 + x, g=lambda x, y: 0.3 * (x * y + np.exp(y)),
                       alpha0=0.5, alpha1=1.5)
    u1, _ = newton_solve(prob, m, 2)
    u2, _ = newton_solve(prob, m, 2)
    assert u1.coeffs.tobytes() == u2.coeffs.tobytes()
    values, _ = apply_dirichlet(prob, m, u1.dofmap)
    assert u1.coeffs[u1.dofmap.constrained].tobytes() == values.tobytes()


def test_newton_reports_nonpositive_coefficient():
    prob = ProblemSpec(name="bad", a=lambda x, y, u: u + 0 * x, a_u=lambda x, y, u: 1 + 0 * u,
                       f=lambda x, y: 1 + 0 * x, g=lambda x, y: 0 * x)
    with pytest.raises(CoefficientError) as info:
        newton_solve(prob, build_rectangular(2), 1)
    assert info.value.point is not None


def test_newton_iteration_cap():
    with pytest.raises(NewtonError) as info:
        newton_solve(builtin_problem("ex1"), build_rectangular(4), 1,
                     NewtonConfig(max_iterations=2))
    assert info.value.report is not None
    assert len(info.value.report.increments) == 2


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(tolerance=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iterations=0)


def test_solution_roundtrip():
    m = build_rectangular(4)
    u, rep = newton_solve(builtin_problem("ex1"), m, 1)
    text = solution_to_json(u, m, extra=rep.as_dict())
    m2, u2 = solution_from_json(text)
    assert u2.coeffs.tobytes() == u.coeffs.tobytes()
    assert np.array_equal(m2.vertices, m.vertices)
    doc = json.loads(text)
    assert doc["dofmap"]["ordering"] == "cells-glex/edges-legendre/v1"
    assert doc["report"]["iterations"] == rep.iterations


def test_solution_rejects_foreign_json():
    with pytest.raises(ValueError):
        solution_from_json(json.dumps({"format": "other"}))

