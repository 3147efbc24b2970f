"""Solver tests: PSD projection, analytic optima, residual contracts, I/O."""

import numpy as np
import pytest
import scipy.sparse as sp

from ncsysid.sdp import (SdpBlock, SdpProblem, SdpSolution, project_psd,
                         read_sdpa, solve, write_solution_json)


def _block_from_dense(f0, fjs, num_vars):
    dim = f0.shape[0]
    coeff_entries = []
    for j, fj in enumerate(fjs):
        for r in range(dim):
            for c in range(dim):
                if fj[r, c] != 0.0:
                    coeff_entries.append((j, r, c, float(fj[r, c])))
    f0_entries = [(r, c, float(f0[r, c])) for r in range(dim) for c in range(dim)
                  if f0[r, c] != 0.0]
    return SdpBlock.from_triplets(dim, num_vars, f0_entries, coeff_entries)


# -- projection ---------------------------------------------------------------

def test_project_psd_clips_diagonal():
    out = project_psd(np.diag([2.0, -3.0]))
    np.testing.assert_allclose(out, np.diag([2.0, 0.0]), atol=1e-14)


def test_project_psd_keeps_psd_input():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 5))
    m = a @ a.T
    np.testing.assert_allclose(project_psd(m), m, atol=1e-12)


def test_project_psd_idempotent_and_nearest():
    rng = np.random.default_rng(1)
    for _ in range(25):
        m = rng.standard_normal((6, 6))
        m = 0.5 * (m + m.T)
        p = project_psd(m)
        np.testing.assert_allclose(project_psd(p), p, atol=1e-12)
        # eigen-clipping oracle
        evals, evecs = np.linalg.eigh(m)
        oracle = (evecs * np.maximum(evals, 0)) @ evecs.T
        np.testing.assert_allclose(p, oracle, atol=1e-12)
        assert np.linalg.eigvalsh(p)[0] >= -1e-12


# -- analytic instances -------------------------------------------------------

def test_min_y_correlation_matrix():
    # min y s.t. [[1, y], [y, 1]] psd -> y* = -1
    f0 = np.eye(2)
    f1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    prob = SdpProblem(num_vars=1, blocks=[_block_from_dense(f0, [f1], 1)], c=np.array([1.0]))
    sol = solve(prob, tol=1e-8)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(-1.0, abs=1e-6)


def test_min_moment_second_order():
    # min y2 s.t. [[1, y1], [y1, y2]] psd -> 0 at y1 = 0
    f0 = np.zeros((2, 2)); f0[0, 0] = 1.0
    f1 = np.array([[0.0, 1.0], [1.0, 0.0]])
    f2 = np.array([[0.0, 0.0], [0.0, 1.0]])
    prob = SdpProblem(num_vars=2, blocks=[_block_from_dense(f0, [f1, f2], 2)],
                      c=np.array([0.0, 1.0]))
    sol = solve(prob, tol=1e-8)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(0.0, abs=1e-6)
    assert sol.y[0] == pytest.approx(0.0, abs=1e-4)


def test_fully_pinned_by_equalities():
    target = np.array([0.75, -1.25, 2.0])
    a_eq = sp.eye(3, format="csr")
    prob = SdpProblem(num_vars=3, blocks=[], a_eq=a_eq, b_eq=target.copy(),
                      c=np.array([1.0, 1.0, 1.0]))
    sol = solve(prob, tol=1e-9)
    np.testing.assert_allclose(sol.y, target, atol=1e-7)
    assert sol.primal_residual <= 1e-9


def _random_strictly_feasible_lmi(rng, dim=4, num_vars=3):
    """Construct an LMI with a known optimum from a primal-dual KKT pair.

    Choose orthogonal eigenbasis; put the slack S* on one eigen-subspace
    and the dual V* on the complement (complementary slackness), set
    c_j = <F_j, V*>, then back-solve F0 = S* - sum y*_j F_j.
    """
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    r = dim // 2
    s_evals = np.concatenate([rng.uniform(0.5, 2.0, size=r), np.zeros(dim - r)])
    v_evals = np.concatenate([np.zeros(r), rng.uniform(0.5, 2.0, size=dim - r)])
    s_star = (q * s_evals) @ q.T
    v_star = (q * v_evals) @ q.T
    fjs = []
    for _ in range(num_vars):
        m = rng.standard_normal((dim, dim))
        fjs.append(0.5 * (m + m.T))
    y_star = rng.standard_normal(num_vars)
    f0 = s_star - sum(y * fj for y, fj in zip(y_star, fjs))
    c = np.array([float(np.sum(fj * v_star)) for fj in fjs])
    prob = SdpProblem(num_vars=num_vars,
                      blocks=[_block_from_dense(f0, fjs, num_vars)], c=c)
    return prob, float(c @ y_star)


def test_random_lmi_suite_to_1e5():
    rng = np.random.default_rng(2024)
    for trial in range(10):
        prob, opt = _random_strictly_feasible_lmi(rng)
        sol = solve(prob, tol=1e-8)
        assert sol.status == "optimal", f"trial {trial} did not converge"
        assert abs(sol.objective_value - opt) <= 1e-5, f"trial {trial}"


# -- solution contracts -------------------------------------------------------

def test_optimal_solution_contract():
    rng = np.random.default_rng(5)
    prob, _ = _random_strictly_feasible_lmi(rng, dim=5, num_vars=4)
    # add a consistent equality pinning y_0 + y_1 to their optimal-ish sum
    tol = 1e-7
    sol = solve(prob, tol=tol)
    assert sol.status == "optimal"
    assert max(sol.primal_residual, sol.dual_residual, sol.gap) <= tol
    assert sol.block_eigenvalue_floor >= -10 * tol
    for m in prob.block_values(sol.y):
        assert np.linalg.eigvalsh(m)[0] >= -10 * tol


def test_solver_deterministic():
    rng = np.random.default_rng(9)
    prob, _ = _random_strictly_feasible_lmi(rng)
    s1 = solve(prob, tol=1e-8)
    s2 = solve(prob, tol=1e-8)
    np.testing.assert_array_equal(s1.y, s2.y)
    assert s1.iterations == s2.iterations
    assert s1.objective_value == s2.objective_value


def test_max_iterations_returns_best_iterate():
    rng = np.random.default_rng(3)
    prob, opt = _random_strictly_feasible_lmi(rng)
    sol = solve(prob, tol=1e-12, max_iter=30)
    assert sol.status == "max_iterations"
    assert sol.iterations == 30
    assert np.all(np.isfinite(sol.y))


def test_infeasible_detected_on_contradictory_equalities():
    # y = 0 and y = 1 simultaneously; divergence certificate must fire
    # (or the best iterate is returned under max_iterations).
    a_eq = sp.csr_matrix(np.array([[1.0], [1.0]]))
    b_eq = np.array([0.0, 1.0])
    f0 = np.eye(1)
    f1 = np.zeros((1, 1))
    prob = SdpProblem(num_vars=1, blocks=[_block_from_dense(f0, [f1], 1)],
                      a_eq=a_eq, b_eq=b_eq, c=np.array([1.0]))
    sol = solve(prob, tol=1e-8, max_iter=2000)
    assert sol.status in ("infeasible_detected", "max_iterations")
    assert sol.primal_residual > 1e-3  # never reported clean


def test_validation_errors():
    bad = SdpProblem(num_vars=2, blocks=[], c=np.array([1.0]))
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        solve(SdpProblem(num_vars=1, blocks=[], c=np.array([1.0])), tol=-1.0)


def test_solution_json(tmp_path):
    sol = SdpSolution(y=np.array([1.0, 2.0]), objective_value=3.0,
                      primal_residual=1e-9, dual_residual=1e-9, gap=1e-9,
                      status="optimal", iterations=10)
    path = tmp_path / "sol.json"
    write_solution_json(sol, str(path))
    import json
    data = json.loads(path.read_text())
    assert data["y"] == [1.0, 2.0]
    assert data["status"] == "optimal"
    assert data["iterations"] == 10
