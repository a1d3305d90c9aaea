import numpy as np
import pytest

from mhecert.exceptions import UsageError
from mhecert.linalg import generalized_eigmax, is_pd, is_psd, psd_sqrt, symmetrized
from oracles import geneig_max_bisection


def _spd(rng, n, cond=10.0):
    Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return Qm @ np.diag(np.geomspace(1.0, cond, n)) @ Qm.T


def test_generalized_eigmax_identity():
    assert generalized_eigmax(np.eye(3), np.eye(3)) == pytest.approx(1.0)
    assert generalized_eigmax(4.0 * np.eye(2), np.eye(2)) == pytest.approx(4.0)


def test_generalized_eigmax_diagonal():
    assert generalized_eigmax(np.diag([2.0, 9.0]), np.diag([1.0, 3.0])) == pytest.approx(3.0)


def test_generalized_eigmax_against_bisection(rng):
    for n in range(1, 5):
        A, B = _spd(rng, n), _spd(rng, n)
        assert generalized_eigmax(A, B) == pytest.approx(geneig_max_bisection(A, B), rel=1e-8)


def test_generalized_eigmax_rejects_non_pd():
    with pytest.raises(UsageError):
        generalized_eigmax(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(UsageError):
        generalized_eigmax(np.diag([1.0, 0.0]), np.eye(2))
    with pytest.raises(UsageError):
        generalized_eigmax(np.eye(2), np.eye(3))


def test_symmetrized_rejects_asymmetric():
    with pytest.raises(UsageError):
        symmetrized([[1.0, 2.0], [0.0, 1.0]])
    with pytest.raises(UsageError):
        symmetrized([1.0, 2.0, 3.0])


def test_psd_sqrt_factorizes(rng):
    M = _spd(rng, 4)
    S = psd_sqrt(M)
    np.testing.assert_allclose(S.T @ S, M, atol=1e-12)
    Z = np.diag([1.0, 0.0])
    np.testing.assert_allclose(psd_sqrt(Z).T @ psd_sqrt(Z), Z, atol=1e-15)


def test_definiteness_predicates():
    assert is_pd(np.eye(2)) and is_psd(np.eye(2))
    assert is_psd(np.diag([1.0, 0.0])) and not is_pd(np.diag([1.0, 0.0]))
    assert not is_psd(np.diag([1.0, -1e-3]))
    assert is_psd(np.diag([1.0, -1e-12]))
