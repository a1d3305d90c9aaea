import math

import numpy as np
import pytest

from mhecert.analyze import (
    ContractionSpec,
    RgesBound,
    alt_lyapunov_residual,
    alt_lyapunov_value,
    comparison_csv,
    disturbance_sum,
    fie_error_bound,
    fie_lyapunov_bound,
    horizon_condition,
    min_horizon,
    mstep_decrease_residual,
    one_shot_bound,
    rges_error_bound,
    contraction_specs,
)
from mhecert.certify import DiossCertificate
from mhecert.estimate import FieWeights, KFunction
from mhecert.exceptions import HorizonError, UsageError
from oracles import min_horizon_by_iteration


def _cert(eta=0.91, P1=None, P2=None):
    P1 = np.eye(2) if P1 is None else P1
    P2 = P1 if P2 is None else P2
    return DiossCertificate(P1, P2, np.eye(3), np.eye(1), eta)


@pytest.mark.parametrize("C,mu,expected", [(0.5, 0.5, 0), (4.0, 0.5, 3), (4.0, 0.91, 15),
                                           (1.0, 0.5, 1), (2.0, 0.0, 1)])
def test_min_horizon_examples(C, mu, expected):
    assert min_horizon(C, mu) == expected


def test_min_horizon_no_finite_horizon():
    with pytest.raises(HorizonError):
        min_horizon(2.0, 1.0)
    assert min_horizon(0.5, 1.0) == 0
    with pytest.raises(UsageError):
        min_horizon(0.0, 0.5)


def test_min_horizon_against_iteration():
    for C in (1.0, 1.5, 2.0, 4.0, 8.0, 100.0, 1e4):
        for mu in (0.1, 0.5, 0.9, 0.91, 0.99, 0.999):
            assert min_horizon(C, mu) == min_horizon_by_iteration(C, mu)


def test_horizon_condition_values():
    rho, rho_M, ok = horizon_condition(_cert(), 15)
    assert rho_M == pytest.approx(4 * 0.91 ** 15, rel=1e-14)
    assert rho_M == pytest.approx(0.97203, abs=1e-5)
    assert rho == pytest.approx(0.998111, abs=1e-6)
    assert ok
    _, rho_M, ok = horizon_condition(_cert(), 14)
    assert rho_M == pytest.approx(1.06817, abs=1e-5) and not ok
    _, rho_M, ok = horizon_condition(_cert(eta=0.0), 3)
    assert rho_M == 0.0 and ok
    rho, _, ok = horizon_condition(_cert(), 0)
    assert math.isnan(rho) and not ok


def test_horizon_condition_uses_generalized_ratio():
    c = _cert(P1=np.eye(2), P2=np.diag([1.0, 2.0]))
    _, rho_M, _ = horizon_condition(c, 5)
    assert rho_M == pytest.approx(4 * 0.91 ** 5 * 2.0)


def test_contraction_specs_identity_metric():
    specs = {s.method_tag: s for s in contraction_specs(_cert())}
    assert specs["proposed"].C == 4.0 and specs["proposed"].mu == 0.91
    assert specs["knuefer2021MHE"].C == 8.0
    assert specs["allan2019moving"].C == pytest.approx(3 * math.sqrt(8))
    assert specs["allan2019moving"].mu == pytest.approx(math.sqrt(0.91))
    assert specs["allan2021FIE"].is_lower_bound
    assert specs["proposed"].min_horizon() == 15


def test_allan_fie_rate_floor():
    s = {x.method_tag: x for x in contraction_specs(_cert(eta=0.0))}["allan2021FIE"]
    assert s.mu == pytest.approx(0.75 ** 0.25)
    assert s.mu == pytest.approx(0.9306, abs=1e-4)


def test_contraction_spec_validation():
    with pytest.raises(UsageError):
        ContractionSpec(-1.0, 0.5, "proposed")
    with pytest.raises(UsageError):
        ContractionSpec(1.0, 1.0, "proposed")
    with pytest.raises(UsageError):
        ContractionSpec(1.0, 0.5, "made-up")


def test_comparison_csv(ref_cert):
    lines = comparison_csv(ref_cert).strip().split("\n")
    assert lines[0] == "method,C,mu,M_min,is_lower_bound"
    assert lines[1].startswith("proposed,4.0,0.91,15,false")
    assert len(lines) == 5


def test_mstep_residual_examples():
    c = _cert()
    assert mstep_decrease_residual(c, 0.0, 0.0, np.zeros((15, 3))) == 0.0
    r = mstep_decrease_residual(c, 1.0, 1.0, np.zeros((15, 3)))
    assert r == pytest.approx(1 - 4 * 0.91 ** 15)
    assert r == pytest.approx(0.02797, abs=1e-5)
    rho, _, _ = horizon_condition(c, 15)
    assert mstep_decrease_residual(c, 1.0, 1.0, np.zeros((15, 3)), rho=rho) == pytest.approx(r)


def test_disturbance_sum_discounting():
    c = _cert(eta=0.5)
    w = np.zeros((3, 3))
    w[0, 0] = 1.0  # oldest
    assert disturbance_sum(c, w) == 0.25
    w = np.zeros((3, 3))
    w[2, 0] = 1.0  # newest
    assert disturbance_sum(c, w) == 1.0


def test_one_shot_bound():
    c = _cert(eta=0.5)
    assert one_shot_bound(c, 2.0, 0.3, np.zeros((2, 3))) == pytest.approx(2 * 0.25 * 2.0 + 0.3)


def test_rges_error_bound_examples():
    b = RgesBound(0.9, np.eye(2), np.eye(2), np.eye(3))
    assert rges_error_bound(b, 2.0, np.zeros((0, 3)), 0) == 8.0
    assert rges_error_bound(b, 2.0, np.zeros((10, 3)), 10) == pytest.approx(4 * 0.9 ** 5 * 2.0)
    w = np.zeros((10, 3))
    w[-1, 0] = 1.0  # most recent disturbance, q = 0
    val = rges_error_bound(b, 0.0, w, 10)
    assert val == pytest.approx(4.0 / (1 - 0.9 ** 0.25))
    with pytest.raises(UsageError):
        RgesBound(1.0, np.eye(2), np.eye(2), np.eye(3))


def test_rges_bound_from_certificate():
    with pytest.raises(HorizonError):
        RgesBound.from_certificate(_cert(), 5)
    b = RgesBound.from_certificate(_cert(), 15)
    assert b.rho == pytest.approx(horizon_condition(_cert(), 15)[0])


def test_alt_lyapunov_value():
    c = _cert(eta=0.5)
    assert alt_lyapunov_value(c, 2, 0.0, 0.0, np.zeros((2, 3))) == 0.0
    assert alt_lyapunov_value(c, 2, 1.0, 0.5, np.zeros((2, 3))) == pytest.approx(2 * 0.25 + 0.5)
    with pytest.raises(UsageError):
        alt_lyapunov_value(c, 3, 1.0, 0.5, np.zeros((2, 3)))
    assert alt_lyapunov_residual(c, 2, 1.0, 1.0, np.zeros((2, 3))) == pytest.approx(1 - 4 * 0.25)


def _sq_weights(eta=0.5):
    return FieWeights(eta, KFunction.quadratic(1.0), KFunction.quadratic(1.0),
                      KFunction.quadratic(1.0), KFunction.quadratic(1.0))


def test_fie_error_bound_examples():
    kw = _sq_weights()
    assert fie_error_bound(kw, 1.0, [], 0) == pytest.approx(8.0)
    assert fie_error_bound(kw, 0.0, np.zeros((5, 3)), 5) == 0.0
    no_inv = FieWeights(0.5, KFunction(lambda s: s * s), KFunction.quadratic(1.0),
                        KFunction.quadratic(1.0), KFunction.quadratic(1.0))
    with pytest.raises(UsageError):
        fie_error_bound(no_inv, 1.0, [], 0)


def test_fie_lyapunov_bound_examples():
    kw = _sq_weights(0.5)
    # 2 * a2(2 sqrt(W0)) = 8 W0 at t = 0
    assert fie_lyapunov_bound(kw, 1.0, [], 0) == pytest.approx(8.0)
    w = np.array([[1.0, 0.0, 0.0]])
    assert fie_lyapunov_bound(kw, 0.0, w, 1) == pytest.approx(8.0)
