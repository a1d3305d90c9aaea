"""Box-constrained Levenberg-Marquardt for small dense least-squares problems."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LmResult:
    z: np.ndarray
    residual: np.ndarray
    value: float
    iterations: int
    converged: bool
    reason: str


def _gauss_newton_polish(fun, z, r, J, F, free, lower, upper, step_tol):
    """One undamped projected Gauss-Newton step, or None if it is negligible or worse."""
    step = np.zeros_like(z)
    step[free] = np.linalg.lstsq(J[:, free], -r, rcond=None)[0]
    z_new = np.clip(z + step, lower, upper)
    if np.abs(z_new - z).max(initial=0.0) <= step_tol * (1.0 + np.abs(z).max(initial=0.0)):
        return None
    r_new, J_new = fun(z_new)
    F_new = float(r_new @ r_new)
    # near the optimum the true decrease is below the rounding level of F
    if not F_new <= F * (1.0 + 1e-12):
        return None
    return z_new, r_new, J_new, F_new


def projected_lm(fun, z0, lower, upper, max_iterations=100, gradient_tol=1e-10,
                 step_tol=1e-12, lambda0=1e-3, armijo=1e-4):
    """Minimize ``||r(z)||^2`` subject to ``lower <= z <= upper``.

    ``fun(z)`` returns ``(r, J)``.  Variables sitting on a bound with the
    gradient pointing outward are frozen for the step; the remaining ones
    take a Marquardt-damped Gauss-Newton step, which is projected back onto
    the box and accepted under an Armijo condition on the projected step.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    z = np.clip(np.asarray(z0, dtype=float), lower, upper)
    r, J = fun(z)
    F = float(r @ r)
    lam = lambda0
    it = 0
    polish = 0
    while True:
        g = J.T @ r
        free = ~(((z <= lower) & (g > 0)) | ((z >= upper) & (g < 0)))
        # first-order test in column-scaled form: the residual is orthogonal
        # to every free Jacobian column up to a relative gradient_tol, which
        # does not depend on how strongly each variable is weighted
        cols = np.sqrt(np.einsum("ij,ij->j", J, J))
        scaled = np.abs(g[free]) / np.maximum(cols[free], 1e-300)
        if F == 0.0 or scaled.max(initial=0.0) <= gradient_tol * np.sqrt(F):
            # a small gradient still leaves an error of order H^-1 g on
            # ill-conditioned problems, so finish with undamped Gauss-Newton
            # steps until they stop paying off
            polished = F > 0.0 and polish < 3 and _gauss_newton_polish(fun, z, r, J, F, free,
                                                                       lower, upper, step_tol)
            if not polished:
                return LmResult(z, r, F, it, True, "gradient")
            polish += 1
            it += 1
            z, r, J, F = polished
            continue
        if it >= max_iterations:
            return LmResult(z, r, F, it, False, "max_iterations")
        it += 1
        Jf = J[:, free]
        H = Jf.T @ Jf
        dH = np.diag(H).copy()
        dH = np.maximum(dH, 1e-12 * max(dH.max(initial=0.0), 1e-300))
        try:
            step_f = np.linalg.solve(H + lam * np.diag(dH), -g[free])
        except np.linalg.LinAlgError:
            lam *= 10.0
            continue
        step = np.zeros_like(z)
        step[free] = step_f
        accepted = False
        alpha = 1.0
        for _ in range(8):
            z_new = np.clip(z + alpha * step, lower, upper)
            dz = z_new - z
            r_new, J_new = fun(z_new)
            F_new = float(r_new @ r_new)
            if F_new <= F + 2.0 * armijo * float(g @ dz):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            lam *= 10.0
            if lam > 1e16:
                return LmResult(z, r, F, it, False, "stalled")
            continue
        small = np.abs(dz).max(initial=0.0) <= step_tol * (1.0 + np.abs(z).max(initial=0.0))
        z, r, J, F = z_new, r_new, J_new, F_new
        lam = max(lam * (0.3 if alpha == 1.0 else 2.0), 1e-15)
        if small:
            return LmResult(z, r, F, it, True, "step")
