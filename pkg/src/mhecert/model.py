"""Discrete-time perturbed systems x+ = f(x, u, w), y = h(x, u, w).

Models are plain callbacks with analytic Jacobians.  Constraint sets are
per-coordinate boxes; an unbounded coordinate is an infinite bound.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import UsageError

__all__ = [
    "Box",
    "ConstraintSets",
    "SystemModel",
    "Trajectory",
    "JacobianReport",
    "step",
    "simulate",
    "check_jacobians",
    "reactor_model",
    "linear_model",
    "model_from_config",
    "load_model",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Box:
    """Closed box ``{z : lower <= z <= upper}``; bounds may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(np.atleast_1d(self.lower)).reshape(-1)
        hi = _frozen(np.atleast_1d(self.upper)).reshape(-1)
        if lo.shape != hi.shape:
            raise UsageError(f"box bounds differ in length: {lo.shape} vs {hi.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
            raise UsageError("box bounds must not be NaN")
        if np.any(lo > hi):
            raise UsageError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unbounded(cls, dim):
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @classmethod
    def symmetric(cls, bound, dim):
        return cls(np.full(dim, -bound), np.full(dim, bound))

    @property
    def dim(self):
        return self.lower.shape[0]

    @property
    def is_finite(self):
        return bool(np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper)))

    @property
    def midpoint(self):
        lo = np.where(np.isfinite(self.lower), self.lower, 0.0)
        hi = np.where(np.isfinite(self.upper), self.upper, 0.0)
        mid = 0.5 * (lo + hi)
        # half-infinite coordinates: stay on the finite side
        mid = np.where(np.isfinite(self.lower) & ~np.isfinite(self.upper), self.lower, mid)
        mid = np.where(~np.isfinite(self.lower) & np.isfinite(self.upper), self.upper, mid)
        return mid

    def contains(self, z, tol=0.0):
        z = np.asarray(z, dtype=float).reshape(-1)
        if z.shape[0] != self.dim:
            raise UsageError(f"expected a vector of length {self.dim}, got {z.shape[0]}")
        return bool(np.all(z >= self.lower - tol) and np.all(z <= self.upper + tol))

    def project(self, z):
        return np.clip(np.asarray(z, dtype=float), self.lower, self.upper)

    def violation(self, z):
        """Per-coordinate distance outside the box (zero inside)."""
        z = np.asarray(z, dtype=float)
        return np.maximum(z - self.upper, 0.0) - np.maximum(self.lower - z, 0.0)

    def to_list(self):
        return [[float(a), float(b)] for a, b in zip(self.lower, self.upper)]


@dataclass(frozen=True)
class ConstraintSets:
    X: Box
    U: Box
    W: Box
    Y: Box


@dataclass(frozen=True)
class SystemModel:
    """A perturbed system with dimensions, callbacks, Jacobians and boxes.

    ``jac_f`` returns ``(df/dx, df/dw)`` and ``jac_h`` returns
    ``(dh/dx, dh/dw)``.
    """

    n: int
    m: int
    q: int
    p: int
    f: Callable
    h: Callable
    jac_f: Callable
    jac_h: Callable
    sets: ConstraintSets
    name: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for space, box, dim in (
            ("X", self.sets.X, self.n),
            ("U", self.sets.U, self.m),
            ("W", self.sets.W, self.q),
            ("Y", self.sets.Y, self.p),
        ):
            if box.dim != dim:
                raise UsageError(f"box {space} has dimension {box.dim}, expected {dim}")

    def _check(self, x, u, w):
        x = np.asarray(x, dtype=float).reshape(-1)
        u = np.zeros(0) if u is None else np.asarray(u, dtype=float).reshape(-1)
        w = np.asarray(w, dtype=float).reshape(-1)
        for label, v, dim in (("x", x, self.n), ("u", u, self.m), ("w", w, self.q)):
            if v.shape[0] != dim:
                raise UsageError(f"{label} has length {v.shape[0]}, model expects {dim}")
        return x, u, w

    def linearize(self, x, u, w):
        """Return ``(A, B, C, D)`` at the point."""
        x, u, w = self._check(x, u, w)
        A, B = self.jac_f(x, u, w)
        C, D = self.jac_h(x, u, w)
        return (
            np.asarray(A, dtype=float).reshape(self.n, self.n),
            np.asarray(B, dtype=float).reshape(self.n, self.q),
            np.asarray(C, dtype=float).reshape(self.p, self.n),
            np.asarray(D, dtype=float).reshape(self.p, self.q),
        )


def step(model: SystemModel, x, u, w):
    """One step of the system: returns ``(f(x,u,w), h(x,u,w))``."""
    x, u, w = model._check(x, u, w)
    x_next = np.asarray(model.f(x, u, w), dtype=float).reshape(model.n)
    y = np.asarray(model.h(x, u, w), dtype=float).reshape(model.p)
    return x_next, y


@dataclass(frozen=True)
class Trajectory:
    """States x_0..x_T and inputs, disturbances, outputs for steps 0..T-1."""

    states: np.ndarray
    inputs: np.ndarray
    disturbances: np.ndarray
    outputs: np.ndarray
    start_time: int = 0

    def __post_init__(self):
        T = self.inputs.shape[0]
        if not (self.states.shape[0] == T + 1 and self.disturbances.shape[0] == T
                and self.outputs.shape[0] == T):
            raise UsageError("inconsistent trajectory lengths")

    @property
    def T(self):
        return self.inputs.shape[0]

    def replays(self, model: SystemModel):
        """True iff re-simulating from ``states[0]`` reproduces everything bitwise."""
        again = simulate(model, self.states[0], self.inputs, self.disturbances, self.start_time)
        return (np.array_equal(again.states, self.states)
                and np.array_equal(again.outputs, self.outputs))


def simulate(model: SystemModel, x0, inputs, disturbances, start_time=0):
    disturbances = np.asarray(disturbances, dtype=float).reshape(-1, model.q)
    T = disturbances.shape[0]
    if inputs is None:
        inputs = np.zeros((T, model.m))
    inputs = np.asarray(inputs, dtype=float).reshape(T, model.m)
    states = np.empty((T + 1, model.n))
    outputs = np.empty((T, model.p))
    states[0] = np.asarray(x0, dtype=float).reshape(model.n)
    for k in range(T):
        states[k + 1], outputs[k] = step(model, states[k], inputs[k], disturbances[k])
    return Trajectory(_frozen(states), _frozen(inputs), _frozen(disturbances),
                      _frozen(outputs), start_time)


@dataclass(frozen=True)
class JacobianReport:
    deviation: dict
    tol: float

    @property
    def max_deviation(self):
        return max(self.deviation.values())

    @property
    def passed(self):
        return self.max_deviation <= self.tol


def check_jacobians(model: SystemModel, samples, tol=1e-5, h=1e-6):
    """Compare analytic Jacobians against central differences.

    The deviation of a block is ``max |analytic - fd| / (1 + |analytic|)``
    over all entries and all sample points ``(x, u, w)``.
    """
    dev = {"A": 0.0, "B": 0.0, "C": 0.0, "D": 0.0}

    def fd(fun, z, make):
        cols = []
        for i in range(z.shape[0]):
            e = np.zeros_like(z)
            e[i] = h
            cols.append((fun(*make(z + e)) - fun(*make(z - e))) / (2 * h))
        return np.array(cols).T if cols else None

    for x, u, w in samples:
        x, u, w = model._check(x, u, w)
        A, B, C, D = model.linearize(x, u, w)
        fx = lambda *a: step(model, *a)[0]
        hx = lambda *a: step(model, *a)[1]
        pairs = (
            ("A", A, fd(fx, x, lambda z: (z, u, w))),
            ("B", B, fd(fx, w, lambda z: (x, u, z))),
            ("C", C, fd(hx, x, lambda z: (z, u, w))),
            ("D", D, fd(hx, w, lambda z: (x, u, z))),
        )
        for key, exact, approx in pairs:
            if approx is None or exact.size == 0:
                continue
            err = np.max(np.abs(exact - approx.reshape(exact.shape)) / (1.0 + np.abs(exact)))
            dev[key] = max(dev[key], float(err))
    return JacobianReport(dev, tol)


def reactor_model(k1=0.16, k2=0.0064, dt=0.1, x_box=((0.1, 4.5), (0.1, 4.5)), w_bound=1e-3):
    """Euler-discretized batch reactor 2A <-> B with additive disturbances.

    States are the two concentrations, there is no input, and the single
    output is their sum; disturbances enter with gains 5, 2 and 10.
    """
    gain = np.array([5.0, 2.0])
    B = np.array([[5.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    C = np.array([[1.0, 1.0]])
    D = np.array([[0.0, 0.0, 10.0]])

    def f(x, u, w):
        r = k1 * x[0] ** 2
        return np.array([
            x[0] + dt * (-2.0 * r + 2.0 * k2 * x[1]) + gain[0] * w[0],
            x[1] + dt * (r - k2 * x[1]) + gain[1] * w[1],
        ])

    def h(x, u, w):
        return np.array([x[0] + x[1] + 10.0 * w[2]])

    def jac_f(x, u, w):
        A = np.array([
            [1.0 - 4.0 * dt * k1 * x[0], 2.0 * dt * k2],
            [2.0 * dt * k1 * x[0], 1.0 - dt * k2],
        ])
        return A, B.copy()

    def jac_h(x, u, w):
        return C.copy(), D.copy()

    x_box = np.asarray(x_box, dtype=float)
    sets = ConstraintSets(
        X=Box(x_box[:, 0], x_box[:, 1]),
        U=Box.unbounded(0),
        W=Box.symmetric(w_bound, 3),
        Y=Box.unbounded(1),
    )
    params = {"model": "reactor", "k1": k1, "k2": k2, "dt": dt,
              "x_box": x_box.tolist(), "w_bound": w_bound}
    return SystemModel(2, 0, 3, 1, f, h, jac_f, jac_h, sets, name="reactor", params=params)


def linear_model(A, B, C, D, x_box=None, w_box=None):
    """Time-invariant model x+ = A x + B w, y = C x + D w (no input)."""
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, C, D))
    n, q = B.shape
    p = C.shape[0]
    A.setflags(write=False)
    B.setflags(write=False)
    C.setflags(write=False)
    D.setflags(write=False)
    X = Box.unbounded(n) if x_box is None else Box(*np.asarray(x_box, dtype=float).T)
    W = Box.unbounded(q) if w_box is None else Box(*np.asarray(w_box, dtype=float).T)
    sets = ConstraintSets(X=X, U=Box.unbounded(0), W=W, Y=Box.unbounded(p))
    params = {"model": "linear", "A": A.tolist(), "B": B.tolist(), "C": C.tolist(),
              "D": D.tolist(), "x_box": None if x_box is None else X.to_list(),
              "w_box": None if w_box is None else W.to_list()}
    return SystemModel(
        n, 0, q, p,
        f=lambda x, u, w: A @ x + B @ w,
        h=lambda x, u, w: C @ x + D @ w,
        jac_f=lambda x, u, w: (A.copy(), B.copy()),
        jac_h=lambda x, u, w: (C.copy(), D.copy()),
        sets=sets, name="linear", params=params,
    )


def model_from_config(cfg):
    """Build a built-in model from its JSON-style configuration dict."""
    if not isinstance(cfg, dict) or "model" not in cfg:
        raise UsageError("model config must be an object with a 'model' key")
    kind = cfg["model"]
    if kind == "reactor":
        kwargs = {k: cfg[k] for k in ("k1", "k2", "dt", "x_box", "w_bound") if k in cfg}
        return reactor_model(**kwargs)
    if kind == "linear":
        try:
            return linear_model(cfg["A"], cfg["B"], cfg["C"], cfg["D"],
                                cfg.get("x_box"), cfg.get("w_box"))
        except KeyError as exc:
            raise UsageError(f"linear model config lacks {exc}") from None
    raise UsageError(f"unknown model {kind!r}")


def load_model(path):
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    return model_from_config(cfg)
