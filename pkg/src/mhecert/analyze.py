"""Horizon conditions, M-step decrease monitors and error bounds.

All functions are pure.  For certificates with ``P1 != P2`` the incremental
Lyapunov function has no closed form, so monitors use the two-sided bounds
``||a-b||^2_P1 <= W(a, b) <= ||a-b||^2_P2``: the lower bound on the
quantity being bounded, the upper bound on the quantities bounding it.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .certify import DiossCertificate
from .exceptions import HorizonError, UsageError

__all__ = [
    "ContractionSpec",
    "RgesBound",
    "METHODS",
    "min_horizon",
    "horizon_condition",
    "contraction_specs",
    "comparison_rows",
    "comparison_csv",
    "w_lower",
    "w_upper",
    "disturbance_sum",
    "one_shot_bound",
    "one_shot_residual",
    "mstep_decrease_bound",
    "mstep_decrease_residual",
    "rges_error_bound",
    "alt_lyapunov_value",
    "alt_lyapunov_residual",
    "fie_error_bound",
    "fie_lyapunov_bound",
]

METHODS = ("proposed", "allan2021FIE", "knuefer2021MHE", "allan2019moving")


@dataclass(frozen=True)
class ContractionSpec:
    """A sufficient horizon condition of the form ``C mu^M < 1``.

    ``is_lower_bound`` marks rows whose constants are only known up to a
    strict lower bound, so the resulting horizon is a lower bound too.
    """

    C: float
    mu: float
    method_tag: str
    is_lower_bound: bool = False

    def __post_init__(self):
        if not self.C > 0:
            raise UsageError(f"C must be positive, got {self.C}")
        if not 0.0 <= self.mu < 1.0:
            raise UsageError(f"mu must lie in [0, 1), got {self.mu}")
        if self.method_tag not in METHODS:
            raise UsageError(f"unknown method {self.method_tag!r}")

    def min_horizon(self):
        return min_horizon(self.C, self.mu)


def min_horizon(C, mu):
    """Smallest integer ``M >= 0`` with ``C * mu**M < 1`` (strict)."""
    C = float(C)
    mu = float(mu)
    if not C > 0:
        raise UsageError("C must be positive")
    if mu < 0:
        raise UsageError("mu must be nonnegative")
    if C < 1.0:
        return 0
    if mu >= 1.0:
        raise HorizonError(f"no finite horizon: C={C} >= 1 and mu={mu} >= 1")
    if mu == 0.0:
        return 1
    M = max(0, math.ceil(-math.log(C) / math.log(mu)))
    # the log formula can land one off either way under rounding
    while M > 0 and C * mu ** (M - 1) < 1.0:
        M -= 1
    while not C * mu ** M < 1.0:
        M += 1
    return M


def horizon_condition(cert: DiossCertificate, M: int):
    """``(rho, rho_M, satisfied)`` with ``rho_M = 4 eta^M lambda_max(P2, P1)``.

    ``rho = (4 lambda_max(P2, P1))**(1/M) * eta`` for ``M >= 1``; for
    ``M = 0`` it is reported as ``nan``.
    """
    if int(M) != M or M < 0:
        raise UsageError("M must be a nonnegative integer")
    M = int(M)
    lam = cert.ratio
    rho_M = 4.0 * cert.eta ** M * lam
    rho = (4.0 * lam) ** (1.0 / M) * cert.eta if M >= 1 else float("nan")
    return float(rho), float(rho_M), bool(rho_M < 1.0)


@dataclass(frozen=True)
class RgesBound:
    """Decay rate and weights of the exponential error bound."""

    rho: float
    P1: np.ndarray
    P2: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise UsageError(f"rho must lie in [0, 1), got {self.rho}")

    @classmethod
    def from_certificate(cls, cert: DiossCertificate, M: int):
        rho, rho_M, ok = horizon_condition(cert, M)
        if not ok:
            raise HorizonError(f"horizon M={M} violates the contraction condition "
                               f"(4 eta^M lambda = {rho_M:.6g} >= 1)")
        return cls(rho, cert.P1, cert.P2, cert.Q)


def contraction_specs(cert: DiossCertificate):
    """Contraction conditions of the proposed analysis and three earlier ones."""
    c1 = float(np.linalg.eigvalsh(cert.P1)[0])
    c2 = float(np.linalg.eigvalsh(cert.P2)[-1])
    eta = cert.eta
    k = c2 / c1
    return [
        ContractionSpec(4.0 * cert.ratio, eta, "proposed"),
        ContractionSpec(math.sqrt(4.0 * k), (1.0 - (1.0 - eta) / (4.0 * k)) ** 0.25,
                        "allan2021FIE", is_lower_bound=True),
        ContractionSpec(8.0 * k, eta, "knuefer2021MHE"),
        ContractionSpec(3.0 * math.sqrt(8.0 * k), math.sqrt(eta), "allan2019moving"),
    ]


def comparison_rows(cert: DiossCertificate):
    return [{"method": s.method_tag, "C": s.C, "mu": s.mu, "M_min": s.min_horizon(),
             "is_lower_bound": s.is_lower_bound} for s in contraction_specs(cert)]


def comparison_csv(cert: DiossCertificate):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "C", "mu", "M_min", "is_lower_bound"])
    for r in comparison_rows(cert):
        w.writerow([r["method"], repr(r["C"]), repr(r["mu"]), r["M_min"],
                    str(r["is_lower_bound"]).lower()])
    return buf.getvalue()


def w_lower(cert: DiossCertificate, a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(d @ cert.P1 @ d)


def w_upper(cert: DiossCertificate, a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    return float(d @ cert.P2 @ d)


def disturbance_sum(cert: DiossCertificate, w_window):
    """``sum_{j=1}^{Mt} eta^(j-1) ||w_{t-j}||^2_Q`` for an oldest-first window."""
    w = np.asarray(w_window, dtype=float)
    if w.size == 0:
        return 0.0
    w = w.reshape(-1, cert.Q.shape[0])
    Mt = w.shape[0]
    disc = cert.eta ** np.arange(Mt - 1, -1, -1, dtype=float)
    return float(disc @ np.einsum("ka,ab,kb->k", w, cert.Q, w))


def one_shot_bound(cert: DiossCertificate, W_past, cost, w_window):
    """Right side of the single-window bound on ``W(xhat_t, x_t)``."""
    Mt = np.asarray(w_window).reshape(-1, cert.Q.shape[0]).shape[0] if np.size(w_window) else 0
    return (2.0 * cert.eta ** Mt * cert.ratio * W_past + cost
            + 2.0 * disturbance_sum(cert, w_window))


def one_shot_residual(cert, W_now, W_past, cost, w_window):
    return W_now - one_shot_bound(cert, W_past, cost, w_window)


def mstep_decrease_bound(cert: DiossCertificate, W_past, w_window, rho=None):
    """``4 eta^Mt lambda W_past + 4 sum``, or ``rho^Mt W_past + 4 sum`` given ``rho``."""
    Mt = np.asarray(w_window).reshape(-1, cert.Q.shape[0]).shape[0] if np.size(w_window) else 0
    factor = 4.0 * cert.eta ** Mt * cert.ratio if rho is None else float(rho) ** Mt
    return factor * W_past + 4.0 * disturbance_sum(cert, w_window)


def mstep_decrease_residual(cert: DiossCertificate, W_now, W_past, w_window, rho=None):
    """``W_now`` minus the M-step decrease bound; the guarantee is ``<= 0``."""
    return W_now - mstep_decrease_bound(cert, W_past, w_window, rho)


def rges_error_bound(bound: RgesBound, e0_P2norm, w_history, t):
    """Bound on ``||xhat_t - x_t||_P1`` from the initial error and past disturbances.

    ``w_history`` holds ``w_0 .. w_{t-1}`` oldest-first.
    """
    rho = bound.rho
    if not 0.0 <= rho < 1.0:
        raise UsageError("rho must lie in [0, 1)")
    t = int(t)
    first = 4.0 * math.sqrt(rho) ** t * float(e0_P2norm)
    if t == 0:
        return first
    w = np.asarray(w_history, dtype=float).reshape(-1, bound.Q.shape[0])[:t]
    if w.shape[0] < t:
        raise UsageError(f"disturbance history has {w.shape[0]} entries, need {t}")
    # q indexes w_{t-q-1}: q = 0 is the most recent
    qn = np.sqrt(np.maximum(np.einsum("ka,ab,kb->k", w, bound.Q, w), 0.0))[::-1]
    r4 = rho ** 0.25
    second = float((4.0 / (1.0 - r4) * r4 ** np.arange(t) * qn).max())
    return max(first, second)


def alt_lyapunov_value(cert: DiossCertificate, M: int, W_past, mhe_cost_value, w_window):
    """Lyapunov-like value combining past error, optimal cost and disturbance energy.

    ``2 eta^M lambda W_past + V + 2 sum_{j=1}^{M} eta^(j-1) ||w_{t-j}||^2_Q``.
    """
    w = np.asarray(w_window, dtype=float).reshape(-1, cert.Q.shape[0]) if np.size(w_window) \
        else np.zeros((0, cert.Q.shape[0]))
    if w.shape[0] < M:
        raise UsageError(f"disturbance window has {w.shape[0]} entries, need M={M}")
    w = w[w.shape[0] - M:]
    return (2.0 * cert.eta ** M * cert.ratio * W_past + mhe_cost_value
            + 2.0 * disturbance_sum(cert, w))


def alt_lyapunov_residual(cert: DiossCertificate, M: int, V_now, V_past, w_window):
    """``V(t+M) - (4 eta^M lambda V(t) + 4 sum)`` over the window ending at ``t+M``."""
    w = np.asarray(w_window, dtype=float).reshape(-1, cert.Q.shape[0])
    if w.shape[0] < M:
        raise UsageError(f"disturbance window has {w.shape[0]} entries, need M={M}")
    w = w[w.shape[0] - M:]
    return V_now - (4.0 * cert.eta ** M * cert.ratio * V_past + 4.0 * disturbance_sum(cert, w))


def _norms(w_history, t):
    """Euclidean norms of ``w_0 .. w_{t-1}``; a 1-D history is read as scalars."""
    if t == 0:
        return np.zeros(0)
    w = np.asarray(w_history, dtype=float)
    if w.ndim <= 1:
        w = w.reshape(-1, 1)
    if w.shape[0] < t:
        raise UsageError(f"disturbance history has {w.shape[0]} entries, need {t}")
    return np.linalg.norm(w[:t], axis=1)


def fie_error_bound(weights, e0_norm, w_history, t):
    """Bound on ``||xhat_t - x_t||`` for full information estimation.

    ``max{2 a1^-1(4 eta^t a2(2|e0|)), max_j 2 a1^-1(4/(1-sqrt eta) sqrt(eta)^j sw(2|w_{t-j-1}|))}``
    """
    a1, a2, sw = weights.alpha1, weights.alpha2, weights.sigma_w
    if a1.inverse is None:
        raise UsageError("alpha1 needs an inverse for the error bound")
    eta = weights.eta
    t = int(t)
    out = 2.0 * a1.inv(4.0 * eta ** t * a2(2.0 * float(e0_norm)))
    if t:
        wn = _norms(w_history, t)[::-1]
        se = math.sqrt(eta)
        for j in range(t):
            out = max(out, 2.0 * a1.inv(4.0 / (1.0 - se) * se ** j * sw(2.0 * float(wn[j]))))
    return float(out)


def fie_lyapunov_bound(weights, W0, w_history, t):
    """``2 eta^t a2(2 a1^-1(W0)) + 2 sum_{j=1}^{t} eta^(j-1) sw(2 |w_{t-j}|)``."""
    a1, a2, sw = weights.alpha1, weights.alpha2, weights.sigma_w
    if a1.inverse is None:
        raise UsageError("alpha1 needs an inverse for the bound")
    eta = weights.eta
    t = int(t)
    total = 2.0 * eta ** t * a2(2.0 * a1.inv(float(W0)))
    if t:
        wn = _norms(w_history, t)
        for k in range(t):
            total += 2.0 * eta ** (t - 1 - k) * sw(2.0 * float(wn[k]))
    return float(total)
