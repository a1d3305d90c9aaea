"""Command-line front end.

Exit codes: 0 success, 1 analytical failure (certificate rejected, no
certificate found, monitor violated, plant left X), 2 usage or I/O error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import warnings

import numpy as np

from .analyze import comparison_csv, comparison_rows
from .certify import (
    SamplingPlan,
    load_certificate,
    save_certificate,
    synthesize_certificate,
    verify_certificate,
)
from .exceptions import CertificationError, PlantConstraintError, UsageError
from .harness import export_log, load_scenario, run_scenario
from .model import load_model

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "MHECERT_SEED"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(text):
    try:
        counts = tuple(int(c) for c in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}; expected n1,n2,...") from None
    return counts


def _eta_grid(text):
    try:
        a, b, s = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eta grid {text!r}; expected a:b:step") from None
    if not s > 0 or b < a:
        raise argparse.ArgumentTypeError("eta grid needs a <= b and step > 0")
    n = int(np.floor((b - a) / s + 1e-9)) + 1
    return [round(a + k * s, 12) for k in range(n)]


def build_parser():
    p = _Parser(prog="mhecert", description=(
        "Certificates, horizon analysis and simulation for discounted moving horizon "
        "estimation. Exit codes: 0 ok, 1 analytical failure, 2 usage/IO error."))
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("verify", help="check a certificate's LMI on the model's box")
    v.add_argument("--model", required=True)
    v.add_argument("--cert", required=True)
    v.add_argument("--grid", type=_grid, default=None,
                   help="tensor grid counts over (x, u, w) instead of box vertices")
    v.add_argument("--tol", type=float, default=1e-6,
                   help="largest accepted LMI eigenvalue (default 1e-6)")

    s = sub.add_parser("synthesize", help="search for a quadratic certificate")
    s.add_argument("--model", required=True)
    s.add_argument("--eta-grid", type=_eta_grid, default=_eta_grid("0.5:0.99:0.01"),
                   help="decay-rate grid a:b:step (default 0.5:0.99:0.01)")
    qr = s.add_mutually_exclusive_group()
    qr.add_argument("--diag-qr", dest="diag_qr", action="store_true", default=True,
                    help="diagonal Q and R (default)")
    qr.add_argument("--full-qr", dest="diag_qr", action="store_false",
                    help="full symmetric Q and R")
    s.add_argument("--out", default=None, help="write the certificate JSON here")

    h = sub.add_parser("horizon", help="minimal horizons of four contraction conditions")
    h.add_argument("--cert", required=True)

    sim = sub.add_parser("simulate", help="closed-loop estimator simulation",
                         description="Flag overrides take precedence over the scenario file; "
                         f"the seed resolves as --seed, then ${SEED_ENV}, then the file.")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--format", choices=("csv", "json"), default="csv")
    sim.add_argument("--horizon", type=int, default=None, help="override the horizon M")
    sim.add_argument("--eta", type=float, default=None, help="override the certificate eta")
    sim.add_argument("--seed", type=int, default=None, help="override the disturbance seed")
    sim.add_argument("--steps", type=int, default=None, help="override the length T")

    c = sub.add_parser("compare", help="write the horizon comparison table as CSV")
    c.add_argument("--cert", required=True)
    c.add_argument("--out", required=True)
    return p


def cmd_verify(args):
    model = load_model(args.model)
    cert = load_certificate(args.cert)
    plan = SamplingPlan("grid", args.grid) if args.grid else SamplingPlan()
    report = verify_certificate(model, cert, plan, tol=args.tol)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_synthesize(args):
    model = load_model(args.model)
    try:
        cert = synthesize_certificate(model, eta_grid=args.eta_grid, diag_qr=args.diag_qr)
    except CertificationError as exc:
        print(f"no certificate: {exc}")
        return EXIT_FAIL
    print(f"eta = {cert.eta:g}, margin = {cert.margin:.6e}")
    print(f"P = {cert.P.tolist()}")
    print(f"Q diag = {np.diag(cert.Q).tolist()}, R diag = {np.diag(cert.R).tolist()}")
    if args.out:
        save_certificate(cert, args.out)
        print(f"written to {args.out}")
    return EXIT_OK


def _print_table(rows):
    print(f"{'method':<16} {'C':>14} {'mu':>12} {'M_min':>10}")
    for r in rows:
        m = f"{'>' if r['is_lower_bound'] else ''}{r['M_min']}"
        print(f"{r['method']:<16} {r['C']:>14.6g} {r['mu']:>12.8f} {m:>10}")


def cmd_horizon(args):
    cert = load_certificate(args.cert)
    _print_table(comparison_rows(cert))
    return EXIT_OK


def cmd_compare(args):
    cert = load_certificate(args.cert)
    text = comparison_csv(cert)
    with open(args.out, "w") as fh:
        fh.write(text)
    _print_table(comparison_rows(cert))
    return EXIT_OK


def _seed_override(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env, 0)
        except ValueError:
            raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None
    return None


def cmd_simulate(args):
    cfg = load_scenario(args.scenario)
    changes = {}
    if args.horizon is not None:
        changes["M"] = args.horizon
    if args.eta is not None:
        changes["cert"] = cfg.cert.with_eta(args.eta)
    if args.steps is not None:
        changes["T"] = args.steps
    seed = _seed_override(args)
    if seed is not None:
        changes["seed"] = seed
    if changes:
        cfg = dataclasses.replace(cfg, **changes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            log = run_scenario(cfg)
        except PlantConstraintError as exc:
            print(f"aborted: {exc}")
            return EXIT_FAIL
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    export_log(log, args.out, args.format)
    sm = log.summary
    hc = sm["horizon_condition"]
    print(f"T={cfg.T} M={cfg.M} seed={cfg.seed} estimator={cfg.estimator} "
          f"final_error={sm['final_error']:.6e} "
          f"horizon_condition={'met' if hc['satisfied'] else 'NOT met'} "
          f"(4 eta^M lambda = {hc['rho_M']:.6g})")
    for m, r in sm["max_residual"].items():
        status = "guaranteed" if sm["guaranteed"][m] else "not guaranteed (informational)"
        rtxt = "n/a" if r is None else f"{r:.6e}"
        print(f"  monitor {m:<13} max residual {rtxt:>14}  violations {sm['violations'][m]:>4}  {status}")
    print(f"log written to {args.out}")
    return EXIT_OK if log.ok else EXIT_FAIL


COMMANDS = {
    "verify": cmd_verify,
    "synthesize": cmd_synthesize,
    "horizon": cmd_horizon,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OSError, KeyError, TypeError, ValueError) as exc:
        print(f"mhecert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
