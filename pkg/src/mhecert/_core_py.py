"""Pure numpy implementations of the hot kernels.

These are the reference versions: the compiled ``_core`` module must agree
with them (bitwise for the generator, to rounding for the sensitivities).
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MUL1 = np.uint64(0xBF58476D1CE4E5B9)
_MUL2 = np.uint64(0x94D049BB133111EB)
_INV_2_53 = 1.0 / 9007199254740992.0

BACKEND = "python"


def _mix64(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _MUL1
    z = (z ^ (z >> np.uint64(27))) * _MUL2
    return z ^ (z >> np.uint64(31))


def uniform01(seed, times, n_coords):
    """Stateless uniforms in [0, 1) indexed by (seed, time, coordinate).

    Returns an array of shape ``(len(times), n_coords)``.
    """
    times = np.asarray(times, dtype=np.int64).astype(np.uint64)
    coords = np.arange(n_coords, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        h = _mix64(h ^ times)[:, None]
        h = _mix64(h ^ coords[None, :])
    return (h >> np.uint64(11)).astype(np.float64) * _INV_2_53


def shooting_sensitivities(A, B, C, D):
    """Derivatives of a single-shooting rollout w.r.t. (x_0, w_0, ..., w_{M-1}).

    Given the per-step Jacobians ``A[k] = df/dx``, ``B[k] = df/dw``,
    ``C[k] = dh/dx`` and ``D[k] = dh/dw`` along the rollout, returns
    ``Sx`` of shape (M+1, n, n+M*q) with ``Sx[k] = dx_k/dz`` and ``Sy`` of
    shape (M, p, n+M*q) with ``Sy[k] = dy_k/dz``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    D = np.asarray(D, dtype=float)
    M, n, q = B.shape
    p = C.shape[1]
    nz = n + M * q
    Sx = np.zeros((M + 1, n, nz))
    Sy = np.zeros((M, p, nz))
    Sx[0, :, :n] = np.eye(n)
    for k in range(M):
        # columns beyond the current disturbance are still zero
        width = n + k * q
        cols = slice(n + k * q, n + (k + 1) * q)
        Sx[k + 1, :, :width] = A[k] @ Sx[k, :, :width]
        Sx[k + 1, :, cols] = B[k]
        Sy[k, :, :width] = C[k] @ Sx[k, :, :width]
        Sy[k, :, cols] = D[k]
    return Sx, Sy
