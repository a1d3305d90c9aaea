"""Time-discounted moving horizon and full information estimation.

Both estimators optimize the window-initial state and the disturbance
sequence (single shooting); states and outputs follow by forward
simulation, so the dynamics hold by construction.  Windows are passed
oldest-first.  Inside a window of length ``Mt`` the most recent step gets
discount ``eta**0`` and the prior term ``eta**Mt``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize

from . import kernels
from .certify import DiossCertificate
from .exceptions import UsageError
from .linalg import psd_sqrt
from .lsq import projected_lm
from .model import SystemModel, step

__all__ = [
    "SolverConfig",
    "MheConfig",
    "EstimateResult",
    "KFunction",
    "FieWeights",
    "mhe_cost",
    "fie_cost",
    "solve_mhe",
    "solve_fie",
    "shift_warm_start",
    "rollout",
]

WARM_STARTS = ("none", "previous-shifted", "true-sequence")


@dataclass(frozen=True)
class SolverConfig:
    max_iterations: int = 100
    gradient_tol: float = 1e-10
    step_tol: float = 1e-12
    levenberg_lambda0: float = 1e-3
    penalty_weight: float = 1e6
    warm_start: str = "previous-shifted"
    # how far a prior may sit outside X before it is rejected
    prior_tol: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise UsageError("max_iterations must be positive")
        for name in ("gradient_tol", "step_tol", "levenberg_lambda0", "penalty_weight"):
            if not getattr(self, name) > 0:
                raise UsageError(f"{name} must be positive")
        if self.prior_tol < 0:
            raise UsageError("prior_tol must be nonnegative")
        if self.warm_start not in WARM_STARTS:
            raise UsageError(f"warm_start must be one of {WARM_STARTS}")


@dataclass(frozen=True)
class MheConfig:
    M: int
    cert: DiossCertificate
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 0:
            raise UsageError("horizon M must be a nonnegative integer")
        object.__setattr__(self, "M", int(self.M))


@dataclass(frozen=True)
class EstimateResult:
    x_init: np.ndarray
    w_seq: np.ndarray
    x_seq: np.ndarray
    y_seq: np.ndarray
    cost: float
    candidate_cost: Optional[float]
    converged: bool
    iterations: int
    used_candidate: bool = False
    max_violation: float = 0.0

    @property
    def x_hat(self):
        """The current estimate, last state of the window."""
        return self.x_seq[-1]


@dataclass(frozen=True)
class KFunction:
    """A comparison function ``r -> value`` of class K or K-infinity.

    ``coef`` marks the quadratic case ``coef * r**2``, which lets the
    estimators use the least-squares solver.
    """

    fn: Callable
    inverse: Optional[Callable] = None
    kind: str = "K"
    derivative: Optional[Callable] = None
    coef: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("K", "Kinf"):
            raise UsageError("kind must be 'K' or 'Kinf'")
        if self.fn(0.0) != 0.0:
            raise UsageError("a K-function must vanish at zero")
        grid = np.concatenate([[0.0], np.geomspace(1e-6, 1e3, 40)])
        vals = np.array([self.fn(float(s)) for s in grid])
        if np.any(np.diff(vals) <= 0):
            raise UsageError("K-function is not strictly increasing on the spot-check grid")

    @classmethod
    def quadratic(cls, c):
        c = float(c)
        if c <= 0:
            raise UsageError("quadratic K-function needs a positive coefficient")
        return cls(lambda s: c * s * s, lambda v: np.sqrt(max(v, 0.0) / c), "Kinf",
                   lambda s: 2.0 * c * s, c)

    def __call__(self, s):
        return self.fn(s)

    def slope(self, s, h=1e-7):
        if self.derivative is not None:
            return self.derivative(s)
        lo = max(s - h, 0.0)
        return (self.fn(s + h) - self.fn(lo)) / (s + h - lo)

    def inv(self, v):
        if self.inverse is None:
            raise UsageError("this K-function has no inverse")
        return self.inverse(v)


@dataclass(frozen=True)
class FieWeights:
    """Decay rate and comparison functions of a general incremental IOSS Lyapunov function."""

    eta: float
    alpha1: KFunction
    alpha2: KFunction
    sigma_w: KFunction
    sigma_y: KFunction

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise UsageError("eta must lie in [0, 1)")

    @classmethod
    def from_certificate(cls, cert: DiossCertificate):
        """Quadratic comparison functions implied by a quadratic certificate."""
        return cls(
            cert.eta,
            KFunction.quadratic(np.linalg.eigvalsh(cert.P1)[0]),
            KFunction.quadratic(np.linalg.eigvalsh(cert.P2)[-1]),
            KFunction.quadratic(max(np.linalg.eigvalsh(cert.Q)[-1], 1e-300)),
            KFunction.quadratic(max(np.linalg.eigvalsh(cert.R)[-1], 1e-300)),
        )

    @property
    def is_quadratic(self):
        return all(k.coef is not None for k in (self.alpha2, self.sigma_w, self.sigma_y))


def _as_window(model, inputs, outputs):
    outputs = np.asarray(outputs, dtype=float).reshape(-1, model.p)
    Mt = outputs.shape[0]
    if inputs is None:
        inputs = np.zeros((Mt, model.m))
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.m) if model.m else np.zeros((Mt, 0))
    if inputs.shape[0] != Mt:
        raise UsageError(f"window has {inputs.shape[0]} inputs but {Mt} outputs")
    return inputs, outputs


def _check_seq(w_seq, y_est, y_meas):
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float)) if np.size(w_seq) else np.zeros((0, 0))
    y_est = np.atleast_2d(np.asarray(y_est, dtype=float)) if np.size(y_est) else np.zeros((0, 0))
    y_meas = np.atleast_2d(np.asarray(y_meas, dtype=float)) if np.size(y_meas) else np.zeros((0, 0))
    if not (len(w_seq) == len(y_est) == len(y_meas)):
        raise UsageError("disturbance, estimated output and measurement sequences differ in length")
    return w_seq, y_est, y_meas


def mhe_cost(cfg, prior, x_init, w_seq, y_seq_est, y_meas):
    """Discounted MHE objective.

    ``2 eta^Mt ||x_init - prior||^2_P2
    + sum_{j=1}^{Mt} eta^(j-1) (2 ||w_{t-j}||^2_Q + ||yhat_{t-j} - y_{t-j}||^2_R)``

    ``cfg`` is an :class:`MheConfig` or a certificate.
    """
    cert = getattr(cfg, "cert", cfg)
    w_seq, y_est, y_meas = _check_seq(w_seq, y_seq_est, y_meas)
    Mt = len(w_seq)
    eta = cert.eta
    d = np.asarray(x_init, dtype=float) - np.asarray(prior, dtype=float)
    total = 2.0 * eta ** Mt * float(d @ cert.P2 @ d)
    for k in range(Mt):
        disc = eta ** (Mt - 1 - k)
        e = y_est[k] - y_meas[k]
        total += disc * (2.0 * float(w_seq[k] @ cert.Q @ w_seq[k]) + float(e @ cert.R @ e))
    return total


def fie_cost(weights: FieWeights, prior, x_init, w_seq, y_seq_est, y_meas):
    """Discounted FIE objective with comparison functions.

    ``eta^t alpha2(2 ||x_init - prior||)
    + sum_{j=1}^{t} eta^(j-1) (sigma_w(2 ||w_{t-j}||) + sigma_y(||yhat_{t-j} - y_{t-j}||))``
    """
    w_seq, y_est, y_meas = _check_seq(w_seq, y_seq_est, y_meas)
    t = len(w_seq)
    eta = weights.eta
    d = np.asarray(x_init, dtype=float) - np.asarray(prior, dtype=float)
    total = eta ** t * weights.alpha2(2.0 * float(np.linalg.norm(d)))
    for k in range(t):
        disc = eta ** (t - 1 - k)
        total += disc * (weights.sigma_w(2.0 * float(np.linalg.norm(w_seq[k])))
                         + weights.sigma_y(float(np.linalg.norm(y_est[k] - y_meas[k]))))
    return total


def rollout(model: SystemModel, x_init, w_seq, inputs):
    """Forward simulation of a window: states (Mt+1, n), outputs (Mt, p)."""
    Mt = len(w_seq)
    xs = np.empty((Mt + 1, model.n))
    ys = np.empty((Mt, model.p))
    xs[0] = x_init
    for k in range(Mt):
        xs[k + 1], ys[k] = step(model, xs[k], inputs[k], w_seq[k])
    return xs, ys


class _Shooting:
    """Stacked residuals and Jacobian of a weighted shooting problem.

    The decision vector is ``z = (x_init, w_0, ..., w_{Mt-1})``.  Residual
    blocks: ``S_prior (x_init - prior)``, ``S_w[k] w_k``,
    ``S_y[k] (y_k - y_meas_k)`` and the exterior penalty on state/output box
    violations.  ``n_main`` counts the non-penalty residuals.
    """

    def __init__(self, model, prior, inputs, outputs, S_prior, S_w, S_y, penalty):
        self.model = model
        self.prior = np.asarray(prior, dtype=float)
        self.inputs = inputs
        self.outputs = outputs
        self.Mt = outputs.shape[0]
        self.S_prior = S_prior
        self.S_w = S_w
        self.S_y = S_y
        self.sqrt_pen = np.sqrt(penalty)
        n, q = model.n, model.q
        self.lower = np.concatenate([model.sets.X.lower, np.tile(model.sets.W.lower, self.Mt)])
        self.upper = np.concatenate([model.sets.X.upper, np.tile(model.sets.W.upper, self.Mt)])
        self.nz = n + self.Mt * q

    def split(self, z):
        n, q = self.model.n, self.model.q
        return z[:n], z[n:].reshape(self.Mt, q)

    def trajectory(self, z):
        x_init, w = self.split(z)
        model = self.model
        Mt = self.Mt
        xs = np.empty((Mt + 1, model.n))
        ys = np.empty((Mt, model.p))
        A = np.empty((Mt, model.n, model.n))
        B = np.empty((Mt, model.n, model.q))
        C = np.empty((Mt, model.p, model.n))
        D = np.empty((Mt, model.p, model.q))
        xs[0] = x_init
        for k in range(Mt):
            xs[k + 1], ys[k] = step(model, xs[k], self.inputs[k], w[k])
            A[k], B[k], C[k], D[k] = model.linearize(xs[k], self.inputs[k], w[k])
        return xs, ys, (A, B, C, D)

    def __call__(self, z):
        model = self.model
        n, p = model.n, model.p
        x_init, w = self.split(z)
        xs, ys, lin = self.trajectory(z)
        Sx, Sy = kernels.shooting_sensitivities(*lin) if self.Mt else (
            np.eye(n)[None], np.zeros((0, p, n)))
        res = [self.S_prior @ (x_init - self.prior)]
        jac = [np.hstack([self.S_prior, np.zeros((n, self.nz - n))])]
        for k in range(self.Mt):
            res.append(self.S_w[k] @ w[k])
            Jw = np.zeros((self.S_w[k].shape[0], self.nz))
            Jw[:, n + k * model.q:n + (k + 1) * model.q] = self.S_w[k]
            jac.append(Jw)
            res.append(self.S_y[k] @ (ys[k] - self.outputs[k]))
            jac.append(self.S_y[k] @ Sy[k])
        X, Y = model.sets.X, model.sets.Y
        vx = X.violation(xs[1:])
        vy = Y.violation(ys)
        res.append(self.sqrt_pen * vx.reshape(-1))
        jac.append(self.sqrt_pen * (Sx[1:] * (vx != 0)[:, :, None]).reshape(-1, self.nz))
        res.append(self.sqrt_pen * vy.reshape(-1))
        jac.append(self.sqrt_pen * (Sy * (vy != 0)[:, :, None]).reshape(-1, self.nz))
        return np.concatenate(res), np.vstack(jac)

    def violation(self, xs, ys):
        v = 0.0
        if self.Mt:
            v = max(np.abs(self.model.sets.X.violation(xs[1:])).max(),
                    np.abs(self.model.sets.Y.violation(ys)).max())
        return float(v)


def _check_prior(model, prior, solver):
    prior = np.asarray(prior, dtype=float).reshape(-1)
    if prior.shape[0] != model.n:
        raise UsageError(f"prior has length {prior.shape[0]}, model expects {model.n}")
    if not model.sets.X.contains(prior, tol=solver.prior_tol):
        raise UsageError("prior lies outside the state constraint set X")
    return prior


def _initial_guess(model, prior, Mt, warm_start, true_candidate, solver):
    if warm_start is not None:
        x0, w = warm_start
        return np.concatenate([np.asarray(x0, dtype=float),
                               np.asarray(w, dtype=float).reshape(-1)])
    if solver.warm_start == "true-sequence" and true_candidate is not None:
        x0, w = true_candidate
        return np.concatenate([np.asarray(x0, dtype=float),
                               np.asarray(w, dtype=float).reshape(-1)])
    return np.concatenate([model.sets.X.project(prior), np.zeros(Mt * model.q)])


def _finish(model, prob, z, cost_fn, lm_iters, converged, true_candidate):
    x_init, w = prob.split(z)
    xs, ys = rollout(model, x_init, w, prob.inputs)
    cost = cost_fn(x_init, w, ys)
    cand_cost = None
    used = False
    if true_candidate is not None:
        cx, cw = true_candidate
        cx = np.asarray(cx, dtype=float).reshape(model.n)
        cw = np.asarray(cw, dtype=float).reshape(prob.Mt, model.q)
        cxs, cys = rollout(model, cx, cw, prob.inputs)
        cand_cost = cost_fn(cx, cw, cys)
        if cand_cost < cost:
            x_init, w, xs, ys, cost, used = cx, cw, cxs, cys, cand_cost, True
    for a in (x_init, w, xs, ys):
        a.setflags(write=False)
    return EstimateResult(x_init, w, xs, ys, float(cost), cand_cost, bool(converged),
                          int(lm_iters), used, prob.violation(xs, ys))


def _solve_least_squares(model, prior, inputs, outputs, S_prior, S_w, S_y, cost_fn,
                         solver, warm_start, true_candidate):
    Mt = outputs.shape[0]
    prob = _Shooting(model, prior, inputs, outputs, S_prior, S_w, S_y, solver.penalty_weight)
    z0 = _initial_guess(model, prior, Mt, warm_start, true_candidate, solver)
    if z0.shape[0] != prob.nz:
        raise UsageError(f"warm start has {z0.shape[0]} entries, expected {prob.nz}")
    lm = projected_lm(prob, z0, prob.lower, prob.upper, solver.max_iterations,
                      solver.gradient_tol, solver.step_tol, solver.levenberg_lambda0)
    return _finish(model, prob, lm.z, cost_fn, lm.iterations, lm.converged, true_candidate)


def solve_mhe(model: SystemModel, cfg: MheConfig, prior, inputs, outputs,
              true_candidate=None, warm_start=None):
    """Solve the MHE problem over a window of ``Mt <= M`` past measurements.

    ``true_candidate = (x_{t-Mt}, w_{t-Mt..t-1})`` enables candidate
    dominance: the returned cost never exceeds the candidate's.
    ``warm_start = (x_init, w_seq)`` overrides the default initial guess.
    """
    solver = cfg.solver
    prior = _check_prior(model, prior, solver)
    inputs, outputs = _as_window(model, inputs, outputs)
    Mt = outputs.shape[0]
    if Mt > cfg.M:
        raise UsageError(f"window length {Mt} exceeds the horizon M={cfg.M}")
    cert = cfg.cert
    if cert.n != model.n or cert.Q.shape[0] != model.q or cert.R.shape[0] != model.p:
        raise UsageError("certificate dimensions do not match the model")
    eta = cert.eta
    S_prior = psd_sqrt(2.0 * eta ** Mt * cert.P2)
    SQ, SR = psd_sqrt(cert.Q), psd_sqrt(cert.R)
    disc = [eta ** (Mt - 1 - k) for k in range(Mt)]
    S_w = [np.sqrt(2.0 * d) * SQ for d in disc]
    S_y = [np.sqrt(d) * SR for d in disc]

    def cost_fn(x_init, w, ys):
        return mhe_cost(cert, prior, x_init, w, ys, outputs)

    return _solve_least_squares(model, prior, inputs, outputs, S_prior, S_w, S_y, cost_fn,
                                solver, warm_start, true_candidate)


def solve_fie(model: SystemModel, weights: FieWeights, prior, inputs, outputs,
              true_candidate=None, warm_start=None, solver: SolverConfig = SolverConfig()):
    """Full information estimate over the whole history ``y_0 .. y_{t-1}``.

    Quadratic comparison functions go through the least-squares solver;
    general ones through L-BFGS-B on the same shooting parametrization.
    """
    prior = _check_prior(model, prior, solver)
    inputs, outputs = _as_window(model, inputs, outputs)
    t = outputs.shape[0]
    eta = weights.eta

    def cost_fn(x_init, w, ys):
        return fie_cost(weights, prior, x_init, w, ys, outputs)

    if weights.is_quadratic:
        a2, cw, cy = weights.alpha2.coef, weights.sigma_w.coef, weights.sigma_y.coef
        S_prior = np.sqrt(4.0 * a2 * eta ** t) * np.eye(model.n)
        disc = [eta ** (t - 1 - k) for k in range(t)]
        S_w = [np.sqrt(4.0 * cw * d) * np.eye(model.q) for d in disc]
        S_y = [np.sqrt(cy * d) * np.eye(model.p) for d in disc]
        return _solve_least_squares(model, prior, inputs, outputs, S_prior, S_w, S_y,
                                    cost_fn, solver, warm_start, true_candidate)
    return _solve_general_fie(model, weights, prior, inputs, outputs, cost_fn, solver,
                              warm_start, true_candidate)


def _solve_general_fie(model, weights, prior, inputs, outputs, cost_fn, solver,
                       warm_start, true_candidate):
    t = outputs.shape[0]
    eta = weights.eta
    n, q = model.n, model.q
    # the penalty residuals of the shooting problem, weights themselves unused
    eye_n, eye_q, eye_p = np.eye(n), np.eye(q), np.eye(model.p)
    prob = _Shooting(model, prior, inputs, outputs, eye_n, [eye_q] * t, [eye_p] * t,
                     solver.penalty_weight)

    def norm_term(kfun, v, scale, disc):
        nv = float(np.linalg.norm(v))
        val = disc * kfun(scale * nv)
        if nv == 0.0:
            return val, np.zeros_like(v)
        return val, disc * kfun.slope(scale * nv) * scale * v / nv

    def objective(z):
        x_init, w = prob.split(z)
        # residual layout: prior (n), then per step w_k (q) and y_k - y_meas_k (p), then penalties
        r, J = prob(z)
        val = 0.0
        grad = np.zeros_like(z)
        v, g = norm_term(weights.alpha2, x_init - prob.prior, 2.0, eta ** t)
        val += v
        grad[:n] += g
        off = n
        for k in range(t):
            disc = eta ** (t - 1 - k)
            v, g = norm_term(weights.sigma_w, w[k], 2.0, disc)
            val += v
            grad[n + k * q:n + (k + 1) * q] += g
            off += q
            e = r[off:off + model.p]
            Je = J[off:off + model.p]
            v, g = norm_term(weights.sigma_y, e, 1.0, disc)
            val += v
            grad += Je.T @ g
            off += model.p
        pen = r[off:]
        val += float(pen @ pen)
        grad += 2.0 * J[off:].T @ pen
        return val, grad

    z0 = _initial_guess(model, prior, t, warm_start, true_candidate, solver)
    bounds = list(zip(np.where(np.isfinite(prob.lower), prob.lower, None),
                      np.where(np.isfinite(prob.upper), prob.upper, None)))
    res = minimize(objective, z0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": solver.max_iterations * 10,
                            "gtol": solver.gradient_tol, "ftol": 1e-15})
    z = np.clip(res.x, prob.lower, prob.upper)
    return _finish(model, prob, z, cost_fn, res.nit, res.success, true_candidate)


def shift_warm_start(prev: EstimateResult, Mt_new: int, q: int):
    """Initial guess for the next window from the previous solution.

    A full sliding window drops its oldest step; a growing one keeps its
    start.  The new disturbance is guessed as zero.
    """
    Mt_prev = prev.w_seq.shape[0]
    w_prev = prev.w_seq.reshape(Mt_prev, q)
    if Mt_new == Mt_prev + 1:
        return prev.x_init.copy(), np.vstack([w_prev, np.zeros((1, q))])
    if Mt_new == Mt_prev and Mt_new > 0:
        return prev.x_seq[1].copy(), np.vstack([w_prev[1:], np.zeros((1, q))])
    if Mt_new == 0:
        return prev.x_seq[-1].copy(), np.zeros((0, q))
    raise UsageError(f"cannot shift a window of length {Mt_prev} to {Mt_new}")
