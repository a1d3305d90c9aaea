"""Quadratic incremental IOSS certificates from the differential-dynamics LMI.

A certificate ``(P, Q, R, eta)`` makes ``W(x, x') = ||x - x'||_P^2`` a
Lyapunov function with

    W(f(x,u,w), f(x',u,w')) <= eta W(x, x') + ||w - w'||_Q^2 + ||y - y'||_R^2

whenever the block matrix built by :func:`lmi_matrix` is negative
semidefinite at every linearization point of ``X x U x W`` (constant metric,
affine output map, convex sets).  Verification samples that condition on
box vertices or grids; synthesis fixes ``eta`` on a grid and maximizes the
LMI margin with the barrier solver in :mod:`mhecert.sdp`.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sdp
from .exceptions import CertificationError, UsageError
from .linalg import generalized_eigmax, is_pd, is_psd, symmetrized
from .model import Box, SystemModel

__all__ = [
    "DiossCertificate",
    "LmiSample",
    "SamplingPlan",
    "VerificationReport",
    "lmi_matrix",
    "lmi_matrices",
    "sample_points",
    "linearize_samples",
    "verify_certificate",
    "synthesize_certificate",
    "affinity_check",
    "generalized_eigmax",
    "reference_reactor_certificate",
    "certificate_to_json",
    "certificate_from_json",
    "load_certificate",
    "save_certificate",
]


@dataclass(frozen=True, eq=False)
class DiossCertificate:
    """Exponential incremental IOSS data: bounds ``P1 <= W <= P2``, gains ``Q``, ``R``.

    ``P`` is the constant metric checked by the LMI; it defaults to ``P1``
    and must satisfy ``P1 <= P <= P2``.  ``transform`` is an optional
    linear change of coordinates ``xbar = T x`` used during verification.
    """

    P1: np.ndarray
    P2: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    eta: float
    transform: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    margin: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        P1 = symmetrized(self.P1, "P1")
        P2 = symmetrized(self.P2, "P2")
        Q = symmetrized(self.Q, "Q")
        R = symmetrized(self.R, "R")
        P = P1 if self.P is None else symmetrized(self.P, "P")
        if not (P1.shape == P2.shape == P.shape):
            raise UsageError("P1, P2 and P must have equal shape")
        if not is_pd(P1) or not is_pd(P2):
            raise UsageError("P1 and P2 must be positive definite")
        if not is_psd(P2 - P1):
            raise UsageError("P1 <= P2 violated")
        if not is_psd(Q) or not is_psd(R):
            raise UsageError("Q and R must be positive semidefinite")
        eta = float(self.eta)
        if not 0.0 <= eta < 1.0:
            raise UsageError(f"eta must lie in [0, 1), got {eta}")
        T = self.transform
        if T is not None:
            T = np.asarray(T, dtype=float)
            if T.shape != P1.shape or abs(np.linalg.det(T)) < 1e-300 or np.linalg.cond(T) > 1e12:
                raise UsageError("transform must be a nonsingular n x n matrix")
        for name, value in (("P1", P1), ("P2", P2), ("Q", Q), ("R", R), ("P", P), ("transform", T)):
            if value is not None:
                value = np.array(value)
                value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "eta", eta)

    def __eq__(self, other):
        if not isinstance(other, DiossCertificate):
            return NotImplemented
        pairs = [(getattr(self, k), getattr(other, k)) for k in ("P1", "P2", "Q", "R", "P", "transform")]
        return self.eta == other.eta and all(
            (a is None and b is None) or (a is not None and b is not None and np.array_equal(a, b))
            for a, b in pairs)

    __hash__ = None

    @classmethod
    def quadratic(cls, P, Q, R, eta, transform=None, margin=None):
        """Certificate for ``W = ||x - x'||_P^2`` (so ``P1 = P2 = P``)."""
        P = np.atleast_2d(np.asarray(P, dtype=float))
        return cls(P, P, np.atleast_2d(Q), np.atleast_2d(R), eta, transform, None, margin)

    @property
    def n(self):
        return self.P1.shape[0]

    @property
    def is_quadratic(self):
        return np.array_equal(self.P1, self.P2)

    @property
    def ratio(self):
        """``lambda_max(P2, P1)``."""
        if self.is_quadratic:
            return 1.0
        return generalized_eigmax(self.P2, self.P1)

    def with_eta(self, eta):
        return DiossCertificate(self.P1, self.P2, self.Q, self.R, eta, self.transform, self.P)

    def scaled(self, c):
        T = self.transform
        return DiossCertificate(c * self.P1, c * self.P2, c * self.Q, c * self.R, self.eta,
                                T, None if self.P is None else c * self.P)

    def W(self, a, b):
        """``||a - b||_P^2``, the Lyapunov function of a quadratic certificate."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        return float(d @ self.P @ d)


def reference_reactor_certificate():
    """The reactor certificate as printed (three decimals, eta = 0.91)."""
    P = np.array([[1.249, 1.146], [1.146, 1.053]])
    return DiossCertificate.quadratic(P, 1e4 * np.eye(3), np.array([[100.0]]), 0.91)


@dataclass(frozen=True)
class LmiSample:
    point: tuple
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        n, q = self.B.shape
        p = self.C.shape[0]
        if self.A.shape != (n, n) or self.C.shape != (p, n) or self.D.shape != (p, q):
            raise UsageError("inconsistent linearization shapes")


def lmi_matrix(sample: LmiSample, P, Q, R, eta):
    """The (n+q) x (n+q) LMI block matrix at one linearization point.

    ``[[A'PA - eta P - C'RC, A'PB - C'RD], [B'PA - D'RC, B'PB - Q - D'RD]]``
    """
    A, B, C, D = sample.A, sample.B, sample.C, sample.D
    P, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (P, Q, R))
    AB = np.hstack([A, B])
    CD = np.hstack([C, D])
    n = A.shape[0]
    M = AB.T @ P @ AB - CD.T @ R @ CD
    M[:n, :n] -= eta * P
    M[n:, n:] -= Q
    return 0.5 * (M + M.T)


def lmi_matrices(A, B, C, D, P, Q, R, eta):
    """Batched :func:`lmi_matrix` over stacked linearizations of shape (N, ...)."""
    AB = np.concatenate([A, B], axis=2)
    CD = np.concatenate([C, D], axis=2)
    n = A.shape[1]
    M = np.einsum("kai,ab,kbj->kij", AB, P, AB) - np.einsum("kai,ab,kbj->kij", CD, R, CD)
    M[:, :n, :n] -= eta * P
    M[:, n:, n:] -= Q
    return 0.5 * (M + np.swapaxes(M, 1, 2))


@dataclass(frozen=True)
class SamplingPlan:
    """How linearization points are drawn from ``X x U x W``.

    ``vertices``: every vertex of the box restricted to ``scheduled``
    coordinates (indices into the stacked vector ``(x, u, w)``; default all),
    other coordinates at the box midpoint.  ``grid``: a tensor grid with
    ``grid_counts[i]`` points along coordinate ``i`` (1 means midpoint).
    """

    mode: str = "vertices"
    grid_counts: Optional[tuple] = None
    scheduled: Optional[tuple] = None

    def __post_init__(self):
        if self.mode not in ("vertices", "grid"):
            raise UsageError(f"unknown sampling mode {self.mode!r}")
        if self.mode == "grid" and not self.grid_counts:
            raise UsageError("grid mode needs grid_counts")
        if self.grid_counts is not None:
            counts = tuple(int(c) for c in self.grid_counts)
            if any(c < 1 for c in counts):
                raise UsageError("grid counts must be positive")
            object.__setattr__(self, "grid_counts", counts)
        if self.scheduled is not None:
            object.__setattr__(self, "scheduled", tuple(sorted(int(i) for i in self.scheduled)))


def _joint_box(model: SystemModel):
    s = model.sets
    return Box(np.concatenate([s.X.lower, s.U.lower, s.W.lower]),
               np.concatenate([s.X.upper, s.U.upper, s.W.upper]))


def _split(model, z):
    n, m = model.n, model.m
    return z[:n], z[n:n + m], z[n + m:]


def sample_points(model: SystemModel, plan: SamplingPlan):
    """Stacked points ``(x, u, w)`` of the plan, shape (N, n+m+q)."""
    box = _joint_box(model)
    dim = box.dim
    if plan.mode == "vertices":
        sched = range(dim) if plan.scheduled is None else plan.scheduled
        sched = [i for i in sched if 0 <= i < dim]
        lo, hi = box.lower[sched], box.upper[sched]
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise UsageError("vertex sampling needs finite bounds on every scheduled coordinate")
        base = box.midpoint
        if not np.all(np.isfinite(base)):
            raise UsageError("vertex sampling needs a finite midpoint")
        choices = [sorted({a, b}) for a, b in zip(lo, hi)]
        pts = []
        for combo in itertools.product(*choices):
            z = base.copy()
            z[sched] = combo
            pts.append(z)
        return np.array(pts).reshape(-1, dim)
    counts = plan.grid_counts
    if len(counts) != dim:
        raise UsageError(f"grid needs {dim} counts (x, u, w), got {len(counts)}")
    axes = []
    for i, c in enumerate(counts):
        if c == 1:
            axes.append([box.midpoint[i]])
        else:
            if not (np.isfinite(box.lower[i]) and np.isfinite(box.upper[i])):
                raise UsageError(f"grid coordinate {i} is unbounded")
            axes.append(np.linspace(box.lower[i], box.upper[i], c))
    return np.array(list(itertools.product(*axes))).reshape(-1, dim)


def linearize_samples(model: SystemModel, points, transform=None):
    """Stacked ``(A, B, C, D)`` at each point, optionally in ``xbar = T x`` coordinates."""
    mats = [model.linearize(*_split(model, z)) for z in points]
    A, B, C, D = (np.array([m[i] for m in mats]) for i in range(4))
    if transform is not None:
        T = np.asarray(transform, dtype=float)
        Tinv = np.linalg.inv(T)
        A = np.einsum("ab,kbc,cd->kad", T, A, Tinv)
        B = np.einsum("ab,kbc->kac", T, B)
        C = np.einsum("kab,bc->kac", C, Tinv)
    return A, B, C, D


def affinity_check(model: SystemModel, box: Optional[Box] = None, scheduled_dims=None,
                   n_lines=16, seed=0, rtol=1e-10):
    """True iff vertex sampling over ``scheduled_dims`` is exact for the LMI.

    Checks that ``[A B]`` is jointly affine in the scheduled coordinates
    (three collinear points on random and axis-aligned lines), does not vary
    with the remaining coordinates, and that ``C``, ``D`` are constant.
    Under these conditions every quadratic form ``v' M(z) v`` of the LMI
    matrix is convex in the scheduled variables, so its maximum over the box
    sits on a vertex.
    """
    box = _joint_box(model) if box is None else box
    dim = box.dim
    sched = list(range(dim)) if scheduled_dims is None else sorted(scheduled_dims)
    others = [i for i in range(dim) if i not in sched]
    if sched and not (np.all(np.isfinite(box.lower[sched])) and np.all(np.isfinite(box.upper[sched]))):
        raise UsageError("affinity check needs finite bounds on the scheduled coordinates")
    rng = np.random.default_rng(seed)
    base = box.midpoint

    def random_point():
        z = base.copy()
        if sched:
            z[sched] = rng.uniform(box.lower[sched], box.upper[sched])
        return z

    def jac(z):
        A, B, C, D = model.linearize(*_split(model, z))
        return np.hstack([A, B]), np.hstack([C, D])

    def close(a, b):
        return np.all(np.abs(a - b) <= rtol * (1.0 + np.maximum(np.abs(a), np.abs(b))))

    ab0, cd0 = jac(base)
    lines = []
    for i in sched:
        a = base.copy()
        b = base.copy()
        a[i], b[i] = box.lower[i], box.upper[i]
        lines.append((a, b))
    lines += [(random_point(), random_point()) for _ in range(n_lines)]
    for a, b in lines:
        (ja, ca), (jb, cb) = jac(a), jac(b)
        for tau in (1.0 / 3.0, 0.5):
            jc, cc = jac(a + tau * (b - a))
            if not close(jc, (1 - tau) * ja + tau * jb):
                return False
        for cmat in (ca, cb, cc):
            if not close(cmat, cd0):
                return False
    for i in others:
        lo = box.lower[i] if np.isfinite(box.lower[i]) else base[i] - 10.0
        hi = box.upper[i] if np.isfinite(box.upper[i]) else base[i] + 10.0
        for value in (lo, hi, 0.5 * (lo + hi) + 0.25 * (hi - lo)):
            z = random_point()
            ref_ab, ref_cd = jac(z)
            z[i] = value
            ab, cd = jac(z)
            if not (close(ab, ref_ab) and close(cd, ref_cd)):
                return False
    return True


@dataclass(frozen=True)
class VerificationReport:
    worst_eigenvalue: float
    worst_point: np.ndarray
    eigenvalues: np.ndarray
    order_ok: bool
    soundness: str
    tol: float

    @property
    def passed(self):
        return bool(self.order_ok and self.worst_eigenvalue <= self.tol)

    @property
    def n_samples(self):
        return self.eigenvalues.shape[0]

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        pt = ", ".join(f"{v:.6g}" for v in self.worst_point)
        return (f"{status}: worst LMI eigenvalue {self.worst_eigenvalue:.6e} "
                f"(tol {self.tol:g}) at (x,u,w) = ({pt}); {self.n_samples} samples; "
                f"P1 <= P <= P2: {'yes' if self.order_ok else 'no'}; soundness: {self.soundness}")


def _metric_in_coordinates(cert):
    P = cert.P
    if cert.transform is None:
        return P
    Tinv = np.linalg.inv(cert.transform)
    return Tinv.T @ P @ Tinv


def verify_certificate(model: SystemModel, cert: DiossCertificate,
                       plan: SamplingPlan = SamplingPlan(), tol=1e-6):
    """Worst LMI eigenvalue over the plan, plus the ``P1 <= P <= P2`` check.

    The report is labelled ``exact`` only for vertex plans whose scheduled
    coordinates pass :func:`affinity_check`; otherwise ``heuristic``.
    """
    if cert.n != model.n or cert.Q.shape[0] != model.q or cert.R.shape[0] != model.p:
        raise UsageError("certificate dimensions do not match the model")
    points = sample_points(model, plan)
    A, B, C, D = linearize_samples(model, points, cert.transform)
    Pbar = _metric_in_coordinates(cert)
    M = lmi_matrices(A, B, C, D, Pbar, cert.Q, cert.R, cert.eta)
    eigs = np.linalg.eigvalsh(M)[:, -1]
    k = int(np.argmax(eigs))
    order_ok = is_psd(cert.P - cert.P1) and is_psd(cert.P2 - cert.P)
    sound = "heuristic"
    if plan.mode == "vertices" and affinity_check(model, scheduled_dims=plan.scheduled):
        sound = "exact"
    return VerificationReport(float(eigs[k]), points[k].copy(), eigs, order_ok, sound, float(tol))


def _sym_basis(n, trace_free):
    basis = []
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    if trace_free:
        for i in range(n - 1):
            E = np.zeros((n, n))
            E[i, i] = 1.0
            E[n - 1, n - 1] = -1.0
            basis.append(E)
    else:
        for i in range(n):
            E = np.zeros((n, n))
            E[i, i] = 1.0
            basis.append(E)
    return basis


def _diag_basis(n):
    basis = []
    for i in range(n):
        E = np.zeros((n, n))
        E[i, i] = 1.0
        basis.append(E)
    return basis


def _max_margin(A, B, C, D, eta, diag_qr, q_max, r_max, eps):
    """Maximize ``s`` with ``LMI(P, Q, R) <= -s I`` at every sample, ``trace P = n``.

    Returns ``(s, P, Q, R)``.
    """
    N, n, q = B.shape
    p = C.shape[1]
    Pb = _sym_basis(n, trace_free=True)
    Qb = _diag_basis(q) if diag_qr else _sym_basis(q, trace_free=False)
    Rb = _diag_basis(p) if diag_qr else _sym_basis(p, trace_free=False)
    kP, kQ, kR = len(Pb), len(Qb), len(Rb)
    k = kP + kQ + kR + 1  # last variable is the margin s
    Zq, Zr = np.zeros((q, q)), np.zeros((p, p))
    Zpn = np.zeros((n, n))

    def lmi(P, Q, R):
        return lmi_matrices(A, B, C, D, P, Q, R, eta)

    d = n + q
    # -LMI(P, Q, R) - s I > 0, with P = I + sum p_j Pb_j
    F0 = -lmi(np.eye(n), Zq, Zr)
    F = np.empty((N, k, d, d))
    for j, E in enumerate(Pb):
        F[:, j] = -(lmi(E, Zq, Zr))
    for j, E in enumerate(Qb):
        F[:, kP + j] = -(lmi(Zpn, E, Zr))
    for j, E in enumerate(Rb):
        F[:, kP + kQ + j] = -(lmi(Zpn, Zq, E))
    F[:, -1] = -np.eye(d)
    groups = [sdp.LmiGroup(F0, F)]

    def group_for(block_basis, offset, const, sign, size):
        G0 = np.array([const])
        G = np.zeros((1, k, size, size))
        for j, E in enumerate(block_basis):
            G[0, offset + j] = sign * E
        return sdp.LmiGroup(G0, G)

    # P - eps I > 0
    groups.append(group_for(Pb, 0, (1.0 - eps) * np.eye(n), 1.0, n))
    # 0 < Q < q_max I, 0 < R < r_max I
    groups.append(group_for(Qb, kP, np.zeros((q, q)), 1.0, q))
    groups.append(group_for(Qb, kP, q_max * np.eye(q), -1.0, q))
    groups.append(group_for(Rb, kP + kQ, np.zeros((p, p)), 1.0, p))
    groups.append(group_for(Rb, kP + kQ, r_max * np.eye(p), -1.0, p))

    y0 = np.zeros(k)
    y0[kP:kP + kQ] = [0.5 * q_max if np.trace(E) else 0.0 for E in Qb]
    y0[kP + kQ:kP + kQ + kR] = [0.5 * r_max if np.trace(E) else 0.0 for E in Rb]
    P0 = np.eye(n)
    Q0 = sum((y0[kP + j] * E for j, E in enumerate(Qb)), Zq.copy())
    R0 = sum((y0[kP + kQ + j] * E for j, E in enumerate(Rb)), Zr.copy())
    y0[-1] = -(np.linalg.eigvalsh(lmi(P0, Q0, R0))[:, -1].max() + 1.0)

    c = np.zeros(k)
    c[-1] = 1.0
    res = sdp.maximize(c, groups, y0)
    y = res.y
    P = np.eye(n) + sum(y[j] * E for j, E in enumerate(Pb))
    Q = sum((y[kP + j] * E for j, E in enumerate(Qb)), Zq.copy())
    R = sum((y[kP + kQ + j] * E for j, E in enumerate(Rb)), Zr.copy())
    return float(y[-1]), P, Q, R


def _unique_linearizations(A, B, C, D):
    """Drop repeated samples; vertex plans often differ only in ignored coordinates."""
    seen = {}
    for i in range(A.shape[0]):
        key = b"".join(np.ascontiguousarray(M[i]).tobytes() for M in (A, B, C, D))
        seen.setdefault(key, i)
    idx = sorted(seen.values())
    return A[idx], B[idx], C[idx], D[idx]


def synthesize_certificate(model: SystemModel, plan: SamplingPlan = SamplingPlan(),
                           eta_grid=None, objective="minimize-eta", diag_qr=True,
                           q_max=1e6, r_max=1e6, eps=1e-6):
    """Find ``(P, Q, R, eta)`` with the LMI negative semidefinite on the plan.

    For each ``eta`` in the grid the margin ``s`` of ``LMI <= -s I`` is
    maximized under ``trace P = n``, ``P >= eps I`` and ``0 <= Q, R <= cap``.
    ``minimize-eta`` returns the smallest ``eta`` with ``s >= 0``;
    ``maximize-margin`` the ``eta`` with the largest ``s``.
    """
    if objective not in ("minimize-eta", "maximize-margin"):
        raise UsageError(f"unknown objective {objective!r}")
    if eta_grid is None:
        eta_grid = np.round(np.arange(0.5, 1.0, 0.01), 10)
    eta_grid = sorted(float(e) for e in eta_grid)
    if not eta_grid or eta_grid[0] < 0.0 or eta_grid[-1] >= 1.0:
        raise UsageError("eta grid must be non-empty and inside [0, 1)")
    points = sample_points(model, plan)
    A, B, C, D = _unique_linearizations(*linearize_samples(model, points))
    results = {}

    def solve(eta):
        if eta not in results:
            results[eta] = _max_margin(A, B, C, D, eta, diag_qr, q_max, r_max, eps)
        return results[eta]

    if objective == "minimize-eta":
        # feasibility is monotone in eta, so bisect over the sorted grid
        lo, hi = 0, len(eta_grid) - 1
        if solve(eta_grid[hi])[0] >= 0.0:
            while lo < hi:
                mid = (lo + hi) // 2
                if solve(eta_grid[mid])[0] >= 0.0:
                    hi = mid
                else:
                    lo = mid + 1
            eta = eta_grid[hi]
        else:
            eta = max(results, key=lambda e: results[e][0])
    else:
        for eta in eta_grid:
            solve(eta)
        eta = max(results, key=lambda e: results[e][0])
    best = (results[eta][0], eta) + tuple(results[eta][1:])
    s, eta, P, Q, R = best
    if s < 0.0:
        raise CertificationError(
            f"LMI infeasible on the eta grid; best margin {s:.3e} at eta={eta}",
            best_margin=s, best_eta=eta)
    P, Q, R = (0.5 * (M + M.T) for M in (P, Q, R))
    return DiossCertificate.quadratic(P, Q, R, eta, margin=s)


def certificate_to_json(cert: DiossCertificate):
    doc = {
        "P": cert.P.tolist(),
        "Q": cert.Q.tolist(),
        "R": cert.R.tolist(),
        "eta": cert.eta,
        "transform": None if cert.transform is None else cert.transform.tolist(),
    }
    if not cert.is_quadratic or not np.array_equal(cert.P, cert.P1):
        doc["P1"] = cert.P1.tolist()
        doc["P2"] = cert.P2.tolist()
    return doc


def certificate_from_json(doc):
    try:
        P = np.asarray(doc["P"], dtype=float)
        Q = np.asarray(doc["Q"], dtype=float)
        R = np.asarray(doc["R"], dtype=float)
        eta = float(doc["eta"])
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"malformed certificate: {exc}") from None
    T = doc.get("transform")
    T = None if T is None else np.asarray(T, dtype=float)
    if "P1" in doc or "P2" in doc:
        P1 = np.asarray(doc.get("P1", P), dtype=float)
        P2 = np.asarray(doc.get("P2", P), dtype=float)
        return DiossCertificate(P1, P2, Q, R, eta, T, P)
    return DiossCertificate.quadratic(P, Q, R, eta, T)


def save_certificate(cert, path):
    # json writes floats with repr(), which round-trips every double exactly
    with open(path, "w") as fh:
        json.dump(certificate_to_json(cert), fh, indent=2)
        fh.write("\n")


def load_certificate(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    return certificate_from_json(doc)
