"""Small dense linear-algebra helpers shared by the certificate and solver code."""
import numpy as np

from .exceptions import UsageError

# PSD tests accept eigenvalues down to -PSD_RTOL * (1 + ||M||_F)
PSD_RTOL = 1e-9


def as_square(M, name="matrix"):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise UsageError(f"{name} must be square, got shape {M.shape}")
    return M


def symmetrized(M, name="matrix", rtol=1e-10):
    M = as_square(M, name)
    if not np.allclose(M, M.T, rtol=0.0, atol=rtol * (1.0 + np.abs(M).max(initial=0.0))):
        raise UsageError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def psd_threshold(M):
    return -PSD_RTOL * (1.0 + np.linalg.norm(M))


def is_psd(M):
    if M.size == 0:
        return True
    return bool(np.linalg.eigvalsh(M)[0] >= psd_threshold(M))


def is_pd(M):
    if M.size == 0:
        return True
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return bool(np.linalg.eigvalsh(M)[0] > 0.0)


def psd_sqrt(M):
    """A factor ``S`` with ``S.T @ S == M`` for symmetric PSD ``M``.

    Tiny negative eigenvalues from rounding are clipped to zero.
    """
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return M.copy()
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))).T


def weighted_sqnorm(v, M):
    v = np.asarray(v, dtype=float)
    return float(v @ M @ v)


def generalized_eigmax(Anum, Bden):
    """Largest ``lam`` with ``det(Anum - lam * Bden) = 0`` for SPD inputs.

    Whitened through the Cholesky factor of ``Bden``:
    ``lam_max(L^-1 Anum L^-T)``.
    """
    Anum = symmetrized(Anum, "Anum")
    Bden = symmetrized(Bden, "Bden")
    if Anum.shape != Bden.shape:
        raise UsageError("generalized_eigmax needs matrices of equal size")
    if not is_pd(Anum):
        raise UsageError("Anum is not positive definite")
    try:
        L = np.linalg.cholesky(Bden)
    except np.linalg.LinAlgError:
        raise UsageError("Bden is not positive definite") from None
    Linv_A = np.linalg.solve(L, Anum)
    S = np.linalg.solve(L, Linv_A.T)
    return float(np.linalg.eigvalsh(0.5 * (S + S.T))[-1])
