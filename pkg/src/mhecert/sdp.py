"""Log-det barrier method for small dense linear matrix inequality programs.

Solves

    maximize    c @ y
    subject to  F0[i] + sum_j y[j] * F[i, j]  > 0   for every block i

where blocks of equal size are stacked into one group.  The problems met
here have a handful of variables and a few dozen blocks of size <= 10, so
everything is dense and the Newton system is formed explicitly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LmiGroup:
    F0: np.ndarray  # (N, d, d)
    F: np.ndarray   # (N, k, d, d)

    def value(self, y):
        return self.F0 + np.einsum("j,njab->nab", y, self.F)


@dataclass
class BarrierResult:
    y: np.ndarray
    objective: float
    gap: float
    newton_steps: int
    converged: bool


def _chol_ok(groups, y):
    for g in groups:
        try:
            np.linalg.cholesky(g.value(y))
        except np.linalg.LinAlgError:
            return False
    return True


def _barrier_terms(groups, y):
    val = 0.0
    grad = np.zeros_like(y)
    hess = np.zeros((y.size, y.size))
    for g in groups:
        Fy = g.value(y)
        L = np.linalg.cholesky(Fy)
        val -= 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
        Finv = np.linalg.inv(Fy)
        G = np.einsum("nab,njbc->njac", Finv, g.F)
        grad -= np.einsum("njaa->j", G)
        hess += np.einsum("njab,nlba->jl", G, G)
    return val, grad, hess


def _max_step(groups, y, dy):
    """Largest ``alpha`` keeping ``F(y + alpha dy)`` positive definite."""
    alpha = np.inf
    for g in groups:
        L = np.linalg.cholesky(g.value(y))
        dF = np.einsum("j,njab->nab", dy, g.F)
        X = np.linalg.solve(L, dF)
        S = np.linalg.solve(L, np.swapaxes(X, 1, 2))
        lam = np.linalg.eigvalsh(0.5 * (S + np.swapaxes(S, 1, 2)))[:, 0].min()
        if lam < 0:
            alpha = min(alpha, -1.0 / lam)
    return alpha


def _barrier_value(groups, y):
    val = 0.0
    for g in groups:
        try:
            L = np.linalg.cholesky(g.value(y))
        except np.linalg.LinAlgError:
            return np.inf
        val -= 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
    return val


def maximize(c, groups, y0, gap_tol=1e-9, t0=1.0, growth=20.0, max_newton=100):
    """Barrier method from the strictly feasible point ``y0``."""
    c = np.asarray(c, dtype=float)
    y = np.asarray(y0, dtype=float).copy()
    if not _chol_ok(groups, y):
        raise ValueError("starting point is not strictly feasible")
    barrier_dim = sum(g.F0.shape[0] * g.F0.shape[1] for g in groups)  # sum of block sizes
    t = t0
    steps = 0
    converged = False
    while True:
        for _ in range(max_newton):
            val, grad, hess = _barrier_terms(groups, y)
            g_tot = -t * c + grad
            # Jacobi scaling: margin and gain variables differ by ~12 decades
            dsc = 1.0 / np.sqrt(np.maximum(np.diag(hess), 1e-300))
            Hs = hess * dsc[:, None] * dsc[None, :]
            try:
                dy = -dsc * np.linalg.solve(Hs + 1e-13 * np.eye(y.size), dsc * g_tot)
            except np.linalg.LinAlgError:
                dy = -dsc * np.linalg.lstsq(Hs, dsc * g_tot, rcond=None)[0]
            decrement = float(-g_tot @ dy)
            if decrement < 0:
                break
            if decrement / 2.0 <= 1e-7:
                break
            f0 = -t * (c @ y) + val
            slope = g_tot @ dy
            alpha = min(1.0, 0.99 * _max_step(groups, y, dy))
            while alpha > 1e-14:
                y_new = y + alpha * dy
                f_new = -t * (c @ y_new) + _barrier_value(groups, y_new)
                if f_new <= f0 + 0.25 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                break
            if alpha * np.abs(dy).max() <= 1e-15 * (1.0 + np.abs(y).max()):
                break
            y = y_new
            steps += 1
        gap = barrier_dim / t
        if gap <= gap_tol:
            converged = True
            break
        if t > 1e18:
            break
        t *= growth
    return BarrierResult(y, float(c @ y), barrier_dim / t, steps, converged)
