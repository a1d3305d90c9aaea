"""Closed-loop plant/estimator simulation with per-step bound monitoring.

Each step draws a disturbance from a stateless seeded generator, advances
the plant, solves the estimator and evaluates the enabled monitors.  A
monitor residual is ``lhs - bound``; it counts as a violation when it
exceeds ``MONITOR_RTOL * (1 + |bound|)`` and the monitor's premises hold.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .analyze import (
    RgesBound,
    alt_lyapunov_residual,
    alt_lyapunov_value,
    fie_error_bound,
    fie_lyapunov_bound,
    horizon_condition,
    mstep_decrease_bound,
    one_shot_bound,
    rges_error_bound,
    w_lower,
    w_upper,
)
from .certify import (
    DiossCertificate,
    SamplingPlan,
    certificate_from_json,
    certificate_to_json,
    load_certificate,
    verify_certificate,
)
from .estimate import FieWeights, MheConfig, SolverConfig, shift_warm_start, solve_fie, solve_mhe
from .exceptions import PlantConstraintError, UsageError
from .model import Box, SystemModel, load_model, model_from_config, step

__all__ = [
    "DEFAULT_SEED",
    "MONITORS",
    "MONITOR_RTOL",
    "CSV_COLUMNS",
    "ScenarioConfig",
    "StepRecord",
    "SimulationLog",
    "sample_disturbance",
    "sample_disturbances",
    "run_scenario",
    "export_log",
    "load_log",
    "load_scenario",
    "scenario_from_dict",
]

DEFAULT_SEED = 12345
MONITOR_RTOL = 1e-8

# one_shot:     W(xhat_t, x_t) against the single-window bound (any feasible solution)
# mstep:        M-step decrease of W (needs candidate dominance)
# envelope:     exponential error envelope on ||e_t||_P1 (needs the horizon condition)
# alt_lyapunov: decrease of the combined Lyapunov-like value over M steps
# fie_lyapunov: bound on W(xhat_t, x_t) for full information estimation
# fie_envelope: error envelope for full information estimation
MONITORS = ("one_shot", "mstep", "envelope", "alt_lyapunov", "fie_lyapunov", "fie_envelope")
MHE_MONITORS = ("one_shot", "mstep", "envelope", "alt_lyapunov")
FIE_MONITORS = ("fie_lyapunov", "fie_envelope")

# the plot-data export keeps the established column names
CSV_COLUMNS = ("t", "x1", "x2", "xhat1", "xhat2", "err_norm", "W_delta", "cost",
               "res_eq11", "res_eq12", "res_eq15")
_CSV_MONITOR = {"res_eq11": "one_shot", "res_eq12": "mstep", "res_eq15": "envelope"}


def sample_disturbances(seed, times, box: Box):
    """Uniform draws from ``box`` for each time in ``times``, shape (len(times), dim)."""
    lo, hi = box.lower, box.upper
    if not box.is_finite:
        raise UsageError("cannot sample uniformly from an unbounded box")
    u = kernels.uniform01(int(seed), np.asarray(times, dtype=np.int64), box.dim)
    w = np.minimum(lo + u * (hi - lo), hi)
    return np.where(lo == hi, lo, w)


def sample_disturbance(seed, t, box: Box):
    """Uniform draw from ``box``, a pure function of ``(seed, t)``."""
    return sample_disturbances(seed, [t], box)[0]


@dataclass(frozen=True)
class ScenarioConfig:
    model: SystemModel
    cert: DiossCertificate
    M: int = 15
    estimator: str = "mhe"
    x0_true: tuple = (3.0, 1.0)
    x0_hat: tuple = (0.1, 4.5)
    T: int = 300
    seed: int = DEFAULT_SEED
    disturbance: str = "uniform-box"
    monitors: tuple = MHE_MONITORS
    solver: SolverConfig = field(default_factory=SolverConfig)
    use_candidate: bool = True

    def __post_init__(self):
        if self.estimator not in ("mhe", "fie"):
            raise UsageError("estimator must be 'mhe' or 'fie'")
        if self.disturbance not in ("uniform-box", "zero"):
            raise UsageError("disturbance must be 'uniform-box' or 'zero'")
        if int(self.T) != self.T or self.T < 1:
            raise UsageError("T must be a positive integer")
        if int(self.M) != self.M or self.M < 0:
            raise UsageError("M must be a nonnegative integer")
        unknown = set(self.monitors) - set(MONITORS)
        if unknown:
            raise UsageError(f"unknown monitors {sorted(unknown)}; choose from {MONITORS}")
        X = self.model.sets.X
        for name in ("x0_true", "x0_hat"):
            v = tuple(float(a) for a in np.asarray(getattr(self, name), dtype=float).reshape(-1))
            if len(v) != self.model.n:
                raise UsageError(f"{name} has length {len(v)}, model expects {self.model.n}")
            if not X.contains(np.array(v)):
                raise UsageError(f"{name} lies outside X")
            object.__setattr__(self, name, v)
        if self.disturbance == "uniform-box" and not self.model.sets.W.is_finite:
            raise UsageError("uniform-box disturbances need a bounded W")
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "monitors", tuple(self.monitors))

    @property
    def mhe_config(self):
        return MheConfig(self.M, self.cert, self.solver)

    def to_dict(self):
        return {
            "model": dict(self.model.params),
            "cert": certificate_to_json(self.cert),
            "M": self.M,
            "estimator": self.estimator,
            "x0_true": list(self.x0_true),
            "x0_hat": list(self.x0_hat),
            "T": self.T,
            "seed": self.seed,
            "disturbance": self.disturbance,
            "monitors": list(self.monitors),
            "solver": {k: getattr(self.solver, k) for k in SolverConfig.__dataclass_fields__},
            "use_candidate": self.use_candidate,
        }


@dataclass(frozen=True)
class StepRecord:
    t: int
    x: tuple
    x_hat: tuple
    error: tuple  # x - x_hat
    err_norm: float
    W_delta: float
    cost: float
    candidate_cost: Optional[float]
    converged: bool
    iterations: int
    used_candidate: bool
    max_violation: float
    residuals: dict
    bounds: dict

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("x", "x_hat", "error"):
            d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class SimulationLog:
    scenario: dict
    records: tuple
    summary: dict
    wall_time: float = field(default=0.0, compare=False)

    @property
    def errors(self):
        return np.array([r.err_norm for r in self.records])

    @property
    def final_error(self):
        return self.records[-1].err_norm if self.records else float("nan")

    def violations(self):
        return self.summary.get("violations", {})

    @property
    def ok(self):
        return not any(self.summary.get("violations", {}).values())

    def residual_series(self, monitor):
        return [r.residuals.get(monitor) for r in self.records]


def _violates(residual, bound):
    return residual > MONITOR_RTOL * (1.0 + abs(bound))


def _check_plant(model, x, t):
    if not model.sets.X.contains(x):
        raise PlantConstraintError(
            f"plant state {x.tolist()} left X at t={t}; the model assumption is violated",
            t=t, state=x.copy())


def _simulate_plant(cfg: ScenarioConfig):
    model = cfg.model
    T = cfg.T
    if cfg.disturbance == "zero":
        w = np.zeros((T, model.q))
    else:
        w = sample_disturbances(cfg.seed, np.arange(T), model.sets.W)
    xs = np.empty((T + 1, model.n))
    ys = np.empty((T, model.p))
    xs[0] = cfg.x0_true
    _check_plant(model, xs[0], 0)
    zero_u = np.zeros(model.m)
    for t in range(T):
        xs[t + 1], ys[t] = step(model, xs[t], zero_u, w[t])
        _check_plant(model, xs[t + 1], t + 1)
    return xs, ys, w


def run_scenario(cfg: ScenarioConfig, verify=True):
    """Simulate plant and estimator for ``T`` steps and monitor the bounds.

    Records cover ``t = 0 .. T``; the estimate at ``t`` uses ``y_0 .. y_{t-1}``.
    Raises :class:`PlantConstraintError` if the plant leaves X.
    """
    start = time.perf_counter()
    model, cert = cfg.model, cfg.cert
    if cert.n != model.n or cert.Q.shape[0] != model.q or cert.R.shape[0] != model.p:
        raise UsageError("certificate dimensions do not match the model")
    xs, ys, w = _simulate_plant(cfg)
    T, M = cfg.T, cfg.M
    inputs = np.zeros((T, model.m))
    is_mhe = cfg.estimator == "mhe"
    monitors = [m for m in cfg.monitors if m in (MHE_MONITORS if is_mhe else FIE_MONITORS)]

    cert_report = None
    if verify:
        try:
            cert_report = verify_certificate(model, cert, SamplingPlan())
        except UsageError:
            cert_report = None
        if cert_report is not None and not cert_report.passed:
            warnings.warn(f"certificate does not verify for this model "
                          f"(worst LMI eigenvalue {cert_report.worst_eigenvalue:.3e})",
                          RuntimeWarning, stacklevel=2)

    rho, rho_M, horizon_ok = horizon_condition(cert, M)
    guaranteed = {
        "one_shot": True,
        "mstep": cfg.use_candidate and horizon_ok,
        "envelope": horizon_ok,
        "alt_lyapunov": cfg.use_candidate and horizon_ok,
        "fie_lyapunov": True,
        "fie_envelope": True,
    }
    rges = RgesBound(rho, cert.P1, cert.P2, cert.Q) if horizon_ok and M >= 1 else None
    weights = FieWeights.from_certificate(cert)
    x_hat = np.empty_like(xs)
    x_hat[0] = cfg.x0_hat
    e0 = xs[0] - x_hat[0]
    e0_P2 = math.sqrt(max(float(e0 @ cert.P2 @ e0), 0.0))
    W0_upper = w_upper(cert, x_hat[0], xs[0])
    V_alt = {}
    records = []
    prev = None
    solver = cfg.solver
    for t in range(T + 1):
        Mt = min(t, M) if is_mhe else t
        s = t - Mt
        window_w = w[s:t]
        candidate = (xs[s], window_w) if cfg.use_candidate else None
        warm = None
        if prev is not None and solver.warm_start == "previous-shifted":
            warm = shift_warm_start(prev, Mt, model.q)
        if is_mhe:
            res = solve_mhe(model, cfg.mhe_config, x_hat[s], inputs[s:t], ys[s:t],
                            true_candidate=candidate, warm_start=warm)
        else:
            res = solve_fie(model, weights, x_hat[0], inputs[:t], ys[:t],
                            true_candidate=candidate, warm_start=warm, solver=solver)
        prev = res
        x_hat[t] = res.x_hat
        err = xs[t] - x_hat[t]
        residuals, bounds = {}, {}

        W_now = w_lower(cert, x_hat[t], xs[t])
        W_past = w_upper(cert, x_hat[s], xs[s])
        if "one_shot" in monitors:
            b = one_shot_bound(cert, W_past, res.cost, window_w)
            residuals["one_shot"], bounds["one_shot"] = W_now - b, b
        if "mstep" in monitors:
            b = mstep_decrease_bound(cert, W_past, window_w)
            residuals["mstep"], bounds["mstep"] = W_now - b, b
        if "envelope" in monitors and rges is not None:
            b = rges_error_bound(rges, e0_P2, w[:t], t)
            lhs = math.sqrt(max(float(err @ cert.P1 @ err), 0.0))
            residuals["envelope"], bounds["envelope"] = lhs - b, b
        if "alt_lyapunov" in monitors and M >= 1 and t >= M:
            V_alt[t] = alt_lyapunov_value(cert, M, w_upper(cert, x_hat[t - M], xs[t - M]),
                                          res.cost, window_w)
            if t - M in V_alt:
                r = alt_lyapunov_residual(cert, M, V_alt[t], V_alt[t - M], window_w)
                residuals["alt_lyapunov"], bounds["alt_lyapunov"] = r, V_alt[t] - r
        if "fie_lyapunov" in monitors:
            b = fie_lyapunov_bound(weights, W0_upper, w[:t], t)
            residuals["fie_lyapunov"], bounds["fie_lyapunov"] = W_now - b, b
        if "fie_envelope" in monitors:
            b = fie_error_bound(weights, float(np.linalg.norm(e0)), w[:t], t)
            residuals["fie_envelope"], bounds["fie_envelope"] = float(np.linalg.norm(err)) - b, b

        records.append(StepRecord(
            t=t,
            x=tuple(float(a) for a in xs[t]),
            x_hat=tuple(float(a) for a in x_hat[t]),
            error=tuple(float(a) for a in err),
            err_norm=float(np.linalg.norm(err)),
            W_delta=cert.W(x_hat[t], xs[t]),
            cost=res.cost,
            candidate_cost=res.candidate_cost,
            converged=res.converged,
            iterations=res.iterations,
            used_candidate=res.used_candidate,
            max_violation=res.max_violation,
            residuals={k: float(v) for k, v in residuals.items()},
            bounds={k: float(v) for k, v in bounds.items()},
        ))

    summary = _summarize(records, monitors, guaranteed, horizon_ok, rho, rho_M, cert_report)
    return SimulationLog(cfg.to_dict(), tuple(records), summary, time.perf_counter() - start)


def _summarize(records, monitors, guaranteed, horizon_ok, rho, rho_M, cert_report):
    max_res, viol = {}, {}
    for m in monitors:
        vals = [(r.residuals[m], r.bounds[m]) for r in records if m in r.residuals]
        max_res[m] = max((v for v, _ in vals), default=None)
        n_bad = sum(_violates(v, b) for v, b in vals)
        viol[m] = n_bad if guaranteed[m] else 0
    return {
        "final_error": records[-1].err_norm,
        "max_error_after_half": max(r.err_norm for r in records[len(records) // 2:]),
        "max_residual": max_res,
        "violations": viol,
        "guaranteed": {m: guaranteed[m] for m in monitors},
        "nonconverged_steps": sum(not r.converged for r in records),
        "candidate_used_steps": sum(r.used_candidate for r in records),
        "horizon_condition": {"rho": None if math.isnan(rho) else rho, "rho_M": rho_M,
                              "satisfied": horizon_ok},
        "certificate_verified": None if cert_report is None else cert_report.passed,
        "worst_lmi_eigenvalue": None if cert_report is None else cert_report.worst_eigenvalue,
        "backend": kernels.BACKEND,
    }


def _fmt(v):
    if v is None:
        return ""
    return format(float(v), ".17g")


def export_log(log: SimulationLog, path, fmt="csv"):
    """Write the log as plot-ready CSV or as JSON mirroring its structure."""
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in log.records:
                row = [str(r.t)] + [_fmt(v) for v in r.x[:2]] + [_fmt(v) for v in r.x_hat[:2]]
                row += [_fmt(r.err_norm), _fmt(r.W_delta), _fmt(r.cost)]
                row += [_fmt(r.residuals.get(_CSV_MONITOR[c])) for c in CSV_COLUMNS[8:]]
                w.writerow(row)
    elif fmt == "json":
        doc = {"scenario": log.scenario, "summary": log.summary, "wall_time": log.wall_time,
               "records": [r.to_dict() for r in log.records]}
        with open(path, "w") as fh:
            json.dump(doc, fh, allow_nan=True)
            fh.write("\n")
    else:
        raise UsageError(f"unknown log format {fmt!r}")


def load_log(path):
    """Read a JSON log written by :func:`export_log`."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    try:
        records = tuple(StepRecord.from_dict(r) for r in doc["records"])
        return SimulationLog(doc["scenario"], records, doc["summary"], doc.get("wall_time", 0.0))
    except (KeyError, TypeError) as exc:
        raise UsageError(f"{path}: malformed log ({exc})") from None


def _resolve(ref, base, loader, builder):
    if isinstance(ref, str):
        return loader(ref if os.path.isabs(ref) else os.path.join(base, ref))
    if isinstance(ref, dict):
        return builder(ref)
    raise UsageError("expected a file path or an inline object")


def scenario_from_dict(doc, base_dir="."):
    """Build a :class:`ScenarioConfig`; model and cert may be paths relative to ``base_dir``."""
    if not isinstance(doc, dict):
        raise UsageError("scenario must be a JSON object")
    try:
        model = _resolve(doc["model"], base_dir, load_model, model_from_config)
        cert = _resolve(doc["cert"], base_dir, load_certificate, certificate_from_json)
    except KeyError as exc:
        raise UsageError(f"scenario lacks {exc}") from None
    kwargs = {k: doc[k] for k in ("M", "estimator", "x0_true", "x0_hat", "T", "seed",
                                  "disturbance", "use_candidate") if k in doc}
    if "monitors" in doc:
        kwargs["monitors"] = tuple(doc["monitors"])
    if "solver" in doc:
        try:
            kwargs["solver"] = SolverConfig(**doc["solver"])
        except TypeError as exc:
            raise UsageError(f"bad solver settings: {exc}") from None
    known = {"model", "cert", "monitors", "solver"} | set(kwargs)
    extra = set(doc) - known - {"description"}
    if extra:
        raise UsageError(f"unknown scenario keys {sorted(extra)}")
    return ScenarioConfig(model, cert, **kwargs)


def load_scenario(path):
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: {exc}") from None
    return scenario_from_dict(doc, os.path.dirname(os.path.abspath(path)))
