# cython: language_level=3
"""Compiled versions of the kernels in ``_core_py``."""
import numpy as np

from libc.stdint cimport int64_t, uint64_t

BACKEND = "cython"

cdef uint64_t _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double _INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = z + _GOLDEN
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


def uniform01(seed, times, Py_ssize_t n_coords):
    cdef int64_t[::1] t = np.ascontiguousarray(times, dtype=np.int64).reshape(-1)
    cdef Py_ssize_t nt = t.shape[0]
    out_arr = np.empty((nt, n_coords), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef uint64_t hs = _mix64(<uint64_t>(seed & 0xFFFFFFFFFFFFFFFF))
    cdef uint64_t ht
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(nt):
            ht = _mix64(hs ^ <uint64_t>t[i])
            for j in range(n_coords):
                out[i, j] = <double>(_mix64(ht ^ <uint64_t>j) >> 11) * _INV_2_53
    return out_arr


def shooting_sensitivities(A, B, C, D):
    cdef double[:, :, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[:, :, ::1] b = np.ascontiguousarray(B, dtype=np.float64)
    cdef double[:, :, ::1] c = np.ascontiguousarray(C, dtype=np.float64)
    cdef double[:, :, ::1] d = np.ascontiguousarray(D, dtype=np.float64)
    cdef Py_ssize_t M = b.shape[0], n = b.shape[1], q = b.shape[2], p = c.shape[1]
    cdef Py_ssize_t nz = n + M * q
    Sx_arr = np.zeros((M + 1, n, nz))
    Sy_arr = np.zeros((M, p, nz))
    cdef double[:, :, ::1] Sx = Sx_arr
    cdef double[:, :, ::1] Sy = Sy_arr
    cdef Py_ssize_t k, i, j, l, width, off
    cdef double acc
    with nogil:
        for i in range(n):
            Sx[0, i, i] = 1.0
        for k in range(M):
            width = n + k * q
            off = n + k * q
            for i in range(n):
                for j in range(width):
                    acc = 0.0
                    for l in range(n):
                        acc = acc + a[k, i, l] * Sx[k, l, j]
                    Sx[k + 1, i, j] = acc
                for j in range(q):
                    Sx[k + 1, i, off + j] = b[k, i, j]
            for i in range(p):
                for j in range(width):
                    acc = 0.0
                    for l in range(n):
                        acc = acc + c[k, i, l] * Sx[k, l, j]
                    Sy[k, i, j] = acc
                for j in range(q):
                    Sy[k, i, off + j] = d[k, i, j]
    return Sx_arr, Sy_arr
