import numpy as np
import pytest

from mhecert.certify import DiossCertificate
from mhecert.estimate import (
    FieWeights,
    KFunction,
    MheConfig,
    SolverConfig,
    fie_cost,
    mhe_cost,
    rollout,
    shift_warm_start,
    solve_fie,
    solve_mhe,
)
from mhecert.exceptions import UsageError
from mhecert.model import linear_model, simulate
from oracles import scalar_mhe_closed_form


def _scalar_cert(p=1.0, q=1.0, r=1.0, eta=0.5):
    return DiossCertificate.quadratic([[p]], [[q]], [[r]], eta)


def test_mhe_cost_toy():
    cfg = MheConfig(2, _scalar_cert())
    v = mhe_cost(cfg, [0.0], [1.0], [[1.0], [1.0]], [[1.0], [1.0]], [[0.0], [0.0]])
    assert v == pytest.approx(5.0, abs=1e-15)


def test_mhe_cost_empty_window():
    c = DiossCertificate.quadratic(np.diag([2.0, 3.0]), np.eye(3), [[1.0]], 0.9)
    assert mhe_cost(c, [0.0, 0.0], [1.0, 1.0], [], [], []) == pytest.approx(2.0 * 5.0)


def test_mhe_cost_exact_fit_zero():
    assert mhe_cost(_scalar_cert(), [0.3], [0.3], [[0.0]], [[1.0]], [[1.0]]) == 0.0


def test_mhe_cost_discount_order():
    # a unit output residual at the newest step costs 1, at the oldest eta
    c = _scalar_cert(eta=0.5)
    newest = mhe_cost(c, [0.0], [0.0], [[0.0], [0.0]], [[0.0], [1.0]], [[0.0], [0.0]])
    oldest = mhe_cost(c, [0.0], [0.0], [[0.0], [0.0]], [[1.0], [0.0]], [[0.0], [0.0]])
    assert newest == 1.0 and oldest == 0.5


def test_mhe_cost_length_mismatch():
    with pytest.raises(UsageError):
        mhe_cost(_scalar_cert(), [0.0], [0.0], [[0.0]], [[0.0], [1.0]], [[0.0]])


def test_fie_cost_toy():
    sq = KFunction(lambda s: s * s, lambda v: np.sqrt(v))
    w = FieWeights(0.5, sq, sq, sq, sq)
    assert fie_cost(w, [0.0], [1.0], [[1.0]], [[1.0]], [[0.0]]) == pytest.approx(7.0)
    assert fie_cost(w, [0.0], [1.0], [], [], []) == pytest.approx(4.0)
    assert fie_cost(w, [0.2], [0.2], [[0.0]], [[1.0]], [[1.0]]) == 0.0


def test_kfunction_validation():
    with pytest.raises(UsageError):
        KFunction(lambda s: s + 1.0)
    with pytest.raises(UsageError):
        KFunction(lambda s: -s)
    with pytest.raises(UsageError):
        KFunction.quadratic(0.0)
    k = KFunction.quadratic(2.0)
    assert k(3.0) == 18.0 and k.inv(18.0) == pytest.approx(3.0)
    with pytest.raises(UsageError):
        KFunction(lambda s: s).inv(1.0)


def test_solver_config_validation():
    with pytest.raises(UsageError):
        SolverConfig(gradient_tol=0.0)
    with pytest.raises(UsageError):
        SolverConfig(warm_start="psychic")
    with pytest.raises(UsageError):
        MheConfig(-1, _scalar_cert())


@pytest.mark.parametrize("N", [1, 2, 4])
def test_scalar_mhe_matches_closed_form(N, rng):
    for _ in range(5):
        a, c = rng.uniform(-1.2, 1.2), rng.uniform(0.3, 2.0)
        eta, p, q, r = rng.uniform(0.1, 0.99), rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5)
        xb = rng.normal()
        ys = rng.normal(size=N)
        m = linear_model([[a]], [[1.0]], [[c]], [[0.0]])
        res = solve_mhe(m, MheConfig(N, _scalar_cert(p, q, r, eta)), [xb], None, ys[:, None])
        x0, w = scalar_mhe_closed_form(a, c, xb, ys, eta, p, q, r)
        assert res.converged
        assert res.x_init[0] == pytest.approx(x0, abs=1e-9)
        np.testing.assert_allclose(res.w_seq[:, 0], w, atol=1e-9)


def test_exact_measurements_recover_state(reactor, ref_cert):
    tr = simulate(reactor, [3.0, 1.0], None, np.zeros((15, 3)))
    res = solve_mhe(reactor, MheConfig(15, ref_cert), tr.states[0], None, tr.outputs)
    assert res.cost < 1e-16
    np.testing.assert_allclose(res.x_hat, tr.states[-1], atol=1e-8)


def test_result_replays_and_is_feasible(reactor, ref_cert, rng):
    w = rng.uniform(-1e-3, 1e-3, (15, 3))
    tr = simulate(reactor, [3.0, 1.0], None, w)
    res = solve_mhe(reactor, MheConfig(15, ref_cert), [0.1, 4.5], None, tr.outputs)
    xs, ys = rollout(reactor, res.x_init, res.w_seq, np.zeros((15, 0)))
    assert np.array_equal(xs, res.x_seq) and np.array_equal(ys, res.y_seq)
    assert reactor.sets.X.contains(res.x_init)
    assert all(reactor.sets.W.contains(wk) for wk in res.w_seq)
    assert res.cost >= 0


def test_candidate_dominance(reactor, ref_cert, rng):
    w = rng.uniform(-1e-3, 1e-3, (15, 3))
    tr = simulate(reactor, [3.0, 1.0], None, w)
    # a one-iteration solver leaves a poor local answer, the candidate takes over
    weak = MheConfig(15, ref_cert, SolverConfig(max_iterations=1))
    res = solve_mhe(reactor, weak, [0.1, 4.5], None, tr.outputs, true_candidate=(tr.states[0], w))
    assert res.cost <= res.candidate_cost
    assert res.used_candidate
    full = solve_mhe(reactor, MheConfig(15, ref_cert), [0.1, 4.5], None, tr.outputs,
                     true_candidate=(tr.states[0], w))
    assert full.cost <= full.candidate_cost


def test_infeasible_prior_rejected(reactor, ref_cert):
    with pytest.raises(UsageError):
        solve_mhe(reactor, MheConfig(15, ref_cert), [5.0, 1.0], None, np.zeros((3, 1)))


def test_window_longer_than_horizon(reactor, ref_cert):
    with pytest.raises(UsageError):
        solve_mhe(reactor, MheConfig(2, ref_cert), [1.0, 1.0], None, np.zeros((3, 1)))


def test_nonconvergence_is_reported(reactor, ref_cert, rng):
    w = rng.uniform(-1e-3, 1e-3, (15, 3))
    tr = simulate(reactor, [3.0, 1.0], None, w)
    res = solve_mhe(reactor, MheConfig(15, ref_cert, SolverConfig(max_iterations=1)),
                    [0.1, 4.5], None, tr.outputs)
    assert not res.converged and res.iterations == 1


def test_shift_property_zero_disturbance(reactor, ref_cert):
    T = 20
    tr = simulate(reactor, [3.0, 1.0], None, np.zeros((T, 3)))
    cfg = MheConfig(15, ref_cert)
    prev = solve_mhe(reactor, cfg, tr.states[4], None, tr.outputs[4:19])
    warm = shift_warm_start(prev, 15, 3)
    nxt = solve_mhe(reactor, cfg, tr.states[5], None, tr.outputs[5:20], warm_start=warm)
    assert nxt.converged and nxt.iterations <= 3


def test_shift_warm_start_shapes(reactor, ref_cert):
    tr = simulate(reactor, [3.0, 1.0], None, np.zeros((4, 3)))
    cfg = MheConfig(3, ref_cert)
    r = solve_mhe(reactor, cfg, tr.states[0], None, tr.outputs[:2])
    x0, w = shift_warm_start(r, 3, 3)
    assert w.shape == (3, 3) and np.array_equal(x0, r.x_init)
    r3 = solve_mhe(reactor, cfg, tr.states[0], None, tr.outputs[:3])
    x0, w = shift_warm_start(r3, 3, 3)
    assert w.shape == (3, 3) and np.array_equal(x0, r3.x_seq[1])
    with pytest.raises(UsageError):
        shift_warm_start(r3, 1, 3)


def test_determinism(reactor, ref_cert, rng):
    w = rng.uniform(-1e-3, 1e-3, (15, 3))
    tr = simulate(reactor, [3.0, 1.0], None, w)
    a = solve_mhe(reactor, MheConfig(15, ref_cert), [0.1, 4.5], None, tr.outputs)
    b = solve_mhe(reactor, MheConfig(15, ref_cert), [0.1, 4.5], None, tr.outputs)
    assert np.array_equal(a.x_seq, b.x_seq) and a.cost == b.cost


def test_fie_empty_history(reactor, ref_cert):
    res = solve_fie(reactor, FieWeights.from_certificate(ref_cert), [0.1, 4.5], None,
                    np.zeros((0, 1)))
    np.testing.assert_array_equal(res.x_hat, [0.1, 4.5])
    assert res.cost == 0.0


def test_fie_quadratic_equals_mhe_with_doubled_weights(rng):
    # alpha2(2s) = 4 a2 s^2 and sigma_w(2s) = 4 cw s^2 match 2 P2 and 2 Q
    a, eta = 0.8, 0.7
    ys = rng.normal(size=(3, 1))
    m = linear_model([[a]], [[1.0]], [[1.0]], [[0.0]])
    kw = FieWeights(eta, KFunction.quadratic(1.0), KFunction.quadratic(1.3),
                    KFunction.quadratic(0.4), KFunction.quadratic(2.0))
    fie = solve_fie(m, kw, [0.5], None, ys)
    mhe = solve_mhe(m, MheConfig(3, _scalar_cert(2.6, 0.8, 2.0, eta)), [0.5], None, ys)
    x0, w = scalar_mhe_closed_form(a, 1.0, 0.5, ys[:, 0], eta, 2.6, 0.8, 2.0)
    assert fie.x_init[0] == pytest.approx(x0, abs=1e-9)
    assert mhe.x_init[0] == pytest.approx(x0, abs=1e-9)
    assert fie.cost == pytest.approx(mhe.cost, rel=1e-12)


def test_fie_general_kfunctions_match_quadratic_path(rng):
    ys = rng.normal(size=(3, 1))
    m = linear_model([[0.8]], [[1.0]], [[1.0]], [[0.0]])

    def plain(c):
        return KFunction(lambda s, c=c: c * s * s)
    quad = FieWeights(0.7, *(KFunction.quadratic(c) for c in (1.0, 1.3, 0.4, 2.0)))
    gen = FieWeights(0.7, *(plain(c) for c in (1.0, 1.3, 0.4, 2.0)))
    assert not gen.is_quadratic
    a = solve_fie(m, quad, [0.5], None, ys)
    b = solve_fie(m, gen, [0.5], None, ys)
    assert b.cost == pytest.approx(a.cost, rel=1e-8)
    np.testing.assert_allclose(b.x_init, a.x_init, atol=1e-6)


def test_fie_nonquadratic_kfunction_runs(reactor, ref_cert, rng):
    w = rng.uniform(-1e-3, 1e-3, (8, 3))
    tr = simulate(reactor, [3.0, 1.0], None, w)
    base = FieWeights.from_certificate(ref_cert)
    quartic = KFunction(lambda s: 1e4 * (s * s + s ** 4))
    kw = FieWeights(base.eta, base.alpha1, base.alpha2, quartic, base.sigma_y)
    res = solve_fie(reactor, kw, [0.1, 4.5], None, tr.outputs, true_candidate=(tr.states[0], w))
    assert res.cost <= res.candidate_cost
    assert np.isfinite(res.cost)
