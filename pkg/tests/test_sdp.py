import numpy as np
import pytest

from mhecert.lsq import projected_lm
from mhecert.sdp import LmiGroup, maximize


def test_barrier_scalar_interval():
    # maximize y subject to 1 - y > 0 and y + 2 > 0
    g = LmiGroup(F0=np.array([[[1.0]], [[2.0]]]), F=np.array([[[[-1.0]]], [[[1.0]]]]))
    res = maximize(np.array([1.0]), [g], np.array([0.0]))
    assert res.converged
    assert res.y[0] == pytest.approx(1.0, abs=1e-8)


def test_barrier_max_eigenvalue_problem(rng):
    # maximize -s subject to s I - A > 0, optimum s = lambda_max(A)
    n = 4
    X = rng.standard_normal((n, n))
    A = X + X.T
    g = LmiGroup(F0=-A[None], F=np.eye(n)[None, None])
    s0 = np.abs(A).sum() + 1.0
    res = maximize(np.array([-1.0]), [g], np.array([s0]))
    assert res.y[0] == pytest.approx(np.linalg.eigvalsh(A)[-1], abs=1e-7)


def test_barrier_rejects_infeasible_start():
    g = LmiGroup(F0=np.array([[[1.0]]]), F=np.array([[[[-1.0]]]]))
    with pytest.raises(ValueError):
        maximize(np.array([1.0]), [g], np.array([2.0]))


def test_lm_linear_least_squares(rng):
    G = rng.standard_normal((8, 3))
    b = rng.standard_normal(8)
    res = projected_lm(lambda z: (G @ z - b, G), np.zeros(3), -np.inf * np.ones(3), np.inf * np.ones(3))
    assert res.converged
    np.testing.assert_allclose(res.z, np.linalg.lstsq(G, b, rcond=None)[0], atol=1e-9)


def test_lm_respects_bounds():
    # minimize (z - 3)^2 on [0, 1]: the answer is the bound
    res = projected_lm(lambda z: (z - 3.0, np.eye(1)), np.array([0.5]), np.array([0.0]), np.array([1.0]))
    assert res.converged and res.z[0] == 1.0


def test_lm_rosenbrock():
    def fun(z):
        r = np.array([10.0 * (z[1] - z[0] ** 2), 1.0 - z[0]])
        J = np.array([[-20.0 * z[0], 10.0], [-1.0, 0.0]])
        return r, J
    res = projected_lm(fun, np.array([-1.2, 1.0]), np.full(2, -np.inf), np.full(2, np.inf))
    np.testing.assert_allclose(res.z, [1.0, 1.0], atol=1e-8)


def test_lm_reports_iteration_limit():
    def fun(z):
        r = np.array([10.0 * (z[1] - z[0] ** 2), 1.0 - z[0]])
        return r, np.array([[-20.0 * z[0], 10.0], [-1.0, 0.0]])
    res = projected_lm(fun, np.array([-1.2, 1.0]), np.full(2, -np.inf), np.full(2, np.inf),
                       max_iterations=2)
    assert not res.converged and res.reason == "max_iterations"
