import json

import numpy as np
import pytest
import torch

from support import random_qp
from vinesim.qpdiff import (INFEASIBLE, KKT_TOL, MAX_ITER, SOLVED, QPError, QPProblem, dump_problem, qp_layer,
                            solve, solve_backward, solve_batch)

NAMES = ("Q", "lin", "A_eq", "b_eq", "G_ineq", "h_ineq")


def kkt_ok(prob, sol, tol=KKT_TOL):
    stat = prob.Q @ sol.z + prob.lin + prob.A_eq.T @ sol.nu + prob.G_ineq.T @ sol.mu
    slack = prob.h_ineq - prob.G_ineq @ sol.z
    return (np.max(np.abs(stat), initial=0) <= tol * (1 + np.max(np.abs(prob.lin), initial=0))
            and np.max(np.abs(prob.A_eq @ sol.z - prob.b_eq), initial=0) <= tol
            and np.all(-slack <= tol) and np.all(sol.mu >= -tol)
            and np.max(np.abs(sol.mu * slack), initial=0) <= tol)


def test_unconstrained_minimum():
    sol = solve(QPProblem(np.eye(2), [-1.0, -2.0]))
    assert sol.status == SOLVED
    np.testing.assert_allclose(sol.z, [1.0, 2.0], atol=1e-12)


def test_symmetric_equality():
    sol = solve(QPProblem(np.eye(2), np.zeros(2), [[1.0, 1.0]], [1.0]))
    np.testing.assert_allclose(sol.z, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(sol.nu, [-0.5], atol=1e-12)


def test_active_bound():
    prob = QPProblem([[1.0]], [-2.0], G_ineq=[[1.0]], h_ineq=[1.0])
    sol = solve(prob)
    assert sol.z[0] == pytest.approx(1.0, abs=1e-10)
    assert sol.mu[0] == pytest.approx(1.0, abs=1e-10)
    assert list(sol.active_set) == [0]


def test_inconsistent_equalities_report_infeasible():
    prob = QPProblem(np.eye(2), np.zeros(2), [[1.0, 1.0], [1.0, 1.0]], [0.0, 1.0])
    assert solve(prob).status == INFEASIBLE


def test_iteration_cap_reports_max_iter():
    (Q, lin, A, b, G, h), _ = random_qp(np.random.default_rng(0), 8, 2, 6)
    sol = solve(QPProblem(Q, lin, A, b, G, h), max_iter=1, polish=False)
    assert sol.status == MAX_ITER
    assert np.all(np.isfinite(sol.z))


def test_random_problems_meet_kkt_tolerances():
    rng = np.random.default_rng(5)
    for _ in range(200):
        n = int(rng.integers(2, 12))
        arrays, z = random_qp(rng, n, int(rng.integers(0, n // 2 + 1)), int(rng.integers(0, 8)))
        prob = QPProblem(*arrays)
        sol = solve(prob)
        assert sol.status == SOLVED
        assert kkt_ok(prob, sol)
        np.testing.assert_allclose(sol.z, z, atol=1e-7)


def test_warm_start_keeps_solution():
    rng = np.random.default_rng(6)
    for _ in range(20):
        arrays, _ = random_qp(rng, 6, 2, 4)
        prob = QPProblem(*arrays)
        cold = solve(prob)
        warm = solve(prob, warm_start=cold)
        np.testing.assert_allclose(warm.z, cold.z, atol=1e-7)


def test_batch_matches_sequential_bitwise():
    rng = np.random.default_rng(7)
    probs = [QPProblem(*random_qp(rng, 5, 1, 3)[0]) for _ in range(64)]
    probs += [QPProblem(*random_qp(rng, 3, 0, 2)[0]) for _ in range(3)]
    batch = solve_batch(probs)
    for p, b in zip(probs, batch):
        s = solve(p)
        assert np.array_equal(s.z, b.z) and np.array_equal(s.mu, b.mu) and np.array_equal(s.nu, b.nu)
    assert solve_batch([]) == []


def test_unconstrained_gradient_is_inverse_hessian():
    prob = QPProblem(2 * np.eye(2), np.zeros(2))
    sol = solve(prob)
    g = solve_backward(prob, sol, [1.0, 0.0])
    np.testing.assert_allclose(g["lin"], [-0.5, 0.0])


def test_active_bound_gradient():
    prob = QPProblem([[1.0]], [-2.0], G_ineq=[[1.0]], h_ineq=[1.0])
    g = solve_backward(prob, solve(prob), [1.0])
    assert g["h_ineq"][0] == pytest.approx(1.0)
    eps = 1e-6
    plus = solve(QPProblem([[1.0]], [-2.0], G_ineq=[[1.0]], h_ineq=[1.0 + eps])).z[0]
    assert (plus - 1.0) / eps == pytest.approx(1.0, abs=1e-6)


def finite_difference_gradients(arrays, w, h=1e-6):
    """Central differences of ``w . z``; Q is perturbed symmetrically."""
    out = {}
    for name, arr in zip(NAMES, arrays):
        grad = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            vals = []
            for sgn in (1, -1):
                pert = [a.copy() for a in arrays]
                pert[NAMES.index(name)][idx] += sgn * h
                if name == "Q" and idx[0] != idx[1]:
                    pert[0][idx[::-1]] += sgn * h
                vals.append(w @ solve(QPProblem(*pert)).z)
            grad[idx] = (vals[0] - vals[1]) / (2 * h)
        out[name] = grad
    return out


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(8)
    for _ in range(10):
        arrays, _ = random_qp(rng, 6, 2, 3)
        prob = QPProblem(*arrays)
        w = rng.normal(size=6)
        got = solve_backward(prob, solve(prob), w)
        sym = got["Q"] + got["Q"].T
        np.fill_diagonal(sym, np.diag(got["Q"]))
        got["Q"] = sym
        fd = finite_difference_gradients(arrays, w)
        for name in NAMES:
            scale = max(np.max(np.abs(fd[name])), 1e-8)
            assert np.max(np.abs(got[name] - fd[name])) / scale < 1e-4, name


def test_backward_refuses_unsolved():
    prob = QPProblem(np.eye(2), np.zeros(2), [[1.0, 1.0], [1.0, 1.0]], [0.0, 1.0])
    with pytest.raises(QPError):
        solve_backward(prob, solve(prob), [1.0, 0.0])


def test_torch_layer_matches_backward():
    rng = np.random.default_rng(9)
    arrays, _ = random_qp(rng, 5, 1, 3)
    prob = QPProblem(*arrays)
    tens = [torch.tensor(a[None], requires_grad=True) for a in arrays]
    info = {}
    z = qp_layer(*tens, info=info)
    w = rng.normal(size=5)
    (z[0] @ torch.tensor(w)).backward()
    ref = solve_backward(prob, solve(prob), w)
    assert info["status"] == [SOLVED]
    for t, name in zip(tens, NAMES):
        np.testing.assert_allclose(t.grad[0].numpy(), ref[name], atol=1e-12)


def test_dump_round_trip(tmp_path):
    arrays, _ = random_qp(np.random.default_rng(10), 4, 1, 2)
    prob = QPProblem(*arrays)
    path = tmp_path / "dump.json"
    dump_problem(prob, solve(prob), path)
    back = QPProblem.from_dict(json.loads(path.read_text())["problem"])
    for name in NAMES:
        np.testing.assert_array_equal(getattr(back, name), getattr(prob, name))
