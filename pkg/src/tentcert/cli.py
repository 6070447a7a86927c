"""Batch command-line interface.

Subcommands: estimate (compute the MLE heights), certify (alpha-test heights
against candidate or explicit subdivisions, optionally with digit
refinement), closed-form (one-cell segment heights), tentplot (piecewise
linear export).  All heights cross the JSON boundary as decimal strings;
outputs are deterministic for identical inputs and flags.

Exit codes: 0 success, 2 invalid input, 3 estimate did not converge
(partial result written), 4 no candidate system certifies, 5 a system
expansion exceeded the term budget.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from fractions import Fraction

import gmpy2

from ._num import mpfr_to_decimal, prec_ctx, to_mpfr
from .alphacert import certify
from .geometry import (
    HeightVector,
    PointConfig,
    Subdivision,
    induced_subdivision,
    refine_to_triangulation,
)
from .lambert import one_cell_heights
from .objective import reduce_objective
from .polysys import DEFAULT_TERM_BUDGET, TermBudgetExceeded
from .refine import (
    CandidateSystem,
    candidate_systems,
    complete_subdivision,
    default_start_digit,
    digit_refine,
)
from .solver import SolveSettings, maximize

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_NO_CONVERGENCE = 3
EXIT_NOT_CERTIFIED = 4
EXIT_TERM_BUDGET = 5


def _threads_cap() -> int:
    """TENTCERT_THREADS caps internal parallelism (evaluation is serial)."""
    try:
        return max(1, int(os.environ.get("TENTCERT_THREADS", "1")))
    except ValueError:
        return 1


def _load_config(path: str) -> PointConfig:
    with open(path) as fh:
        data = json.load(fh)
    return PointConfig.from_json(data)


def _load_heights(source, precision: int):
    """Heights from a JSON file ({"heights": [...]}) or inline JSON list."""
    if isinstance(source, str) and source.strip().startswith("["):
        data = json.loads(source)
    else:
        with open(source) as fh:
            data = json.load(fh)
    if isinstance(data, dict):
        data = data["heights"]
    return [str(v) for v in data]


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True)
    if path in (None, "-"):
        print(text)
    else:
        with open(path, "w") as fh:
            fh.write(text + "\n")


def cmd_estimate(args) -> int:
    try:
        X = _load_config(args.input)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    settings = SolveSettings(
        precision=args.precision,
        tol_flat=Fraction(args.tol_flat),
        gtol=Fraction(args.gtol))
    result = maximize(X, settings=settings)
    payload = {
        "heights": [mpfr_to_decimal(v, args.digits) for v in result.heights.values],
        "digits": args.digits,
        "subdivision": [list(c) for c in result.subdivision.cells],
        "objective": mpfr_to_decimal(result.objective, args.digits),
        "integral": mpfr_to_decimal(result.integral, args.digits),
        "iterations": result.iterations,
        "converged": result.converged,
        "warnings": result.warnings,
    }
    _write_json(args.output, payload)
    return EXIT_OK if result.converged else EXIT_NO_CONVERGENCE


def _candidates_for(args, X, heights):
    precision = args.precision
    if args.subdivision == "auto":
        hv = HeightVector(tuple(heights), precision)
        return candidate_systems(
            X, X.weights, hv, tol_flat=Fraction(args.tol_flat),
            term_budget=args.term_budget)
    cells = json.loads(args.subdivision)
    S = complete_subdivision(X, [tuple(c) for c in cells])
    chart = reduce_objective(X, refine_to_triangulation(S, X), S, X.weights)
    return [CandidateSystem("explicit", S, chart, X, args.term_budget)]


def cmd_certify(args) -> int:
    try:
        X = _load_config(args.input)
        height_strs = _load_heights(args.heights, args.precision)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    if len(height_strs) != X.n:
        print("error: heights length mismatch", file=sys.stderr)
        return EXIT_BAD_INPUT
    precision = args.precision
    with prec_ctx(precision):
        heights = [to_mpfr(s, precision) for s in height_strs]
    candidates = _candidates_for(args, X, heights)

    report = {"candidates": [], "certified": False}
    budget_hit = False
    certified_cert = None
    for cand in candidates:
        entry = {
            "label": cand.label,
            "cells": [list(c) for c in cand.subdivision.cells],
            "free_indices": list(cand.free_indices),
        }
        resid = cand.residual_vector(heights, precision)
        entry["residual_vector"] = [mpfr_to_decimal(v, 12) for v in resid]
        try:
            system = cand.build()
        except TermBudgetExceeded as e:
            entry["system"] = "term-budget-exceeded"
            entry["diagnostic"] = str(e)
            budget_hit = True
            report["candidates"].append(entry)
            continue
        if args.dump_system:
            _write_json(f"{args.dump_system}.{cand.label}.json", system.to_json())
        point = cand.project(heights)
        cert = certify(system, point, precision)
        if args.refine and not cert.certified and cert.reason and \
                "singular" not in cert.reason:
            p0 = args.start_digit or default_start_digit(height_strs)
            try:
                res = digit_refine(system, point, p0,
                                   max_stall=args.max_stall,
                                   precision_floor=precision)
            except Exception as e:  # infeasible k, singular rounds
                entry["refine"] = f"failed: {e}"
                res = None
            if res is not None and res.success:
                cert = res.certificate
                entry["refine"] = {"rounds": res.rounds, "digits": res.digits}
            elif res is not None:
                entry["refine"] = f"failed: {res.reason}"
        entry["certificate"] = cert.to_json()
        report["candidates"].append(entry)
        if cert.certified and certified_cert is None:
            certified_cert = cert
            report["certified"] = True
            report["certified_label"] = cand.label
            break
    _write_json(args.output, report)
    if certified_cert is not None:
        return EXIT_OK
    return EXIT_TERM_BUDGET if budget_hit else EXIT_NOT_CERTIFIED


def cmd_closed_form(args) -> int:
    try:
        w1 = Fraction(args.w1)
        w2 = Fraction(args.w2)
        vol = Fraction(args.vol)
    except (ValueError, ZeroDivisionError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    precision = max(args.precision, int(args.digits * 3.33) + 32)
    try:
        y1, y2 = one_cell_heights(w1, w2, vol, precision)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    payload = {
        "heights": [mpfr_to_decimal(y1, args.digits), mpfr_to_decimal(y2, args.digits)],
        "digits": args.digits,
    }
    _write_json(args.output, payload)
    return EXIT_OK


def cmd_tentplot(args) -> int:
    try:
        X = _load_config(args.input)
        height_strs = _load_heights(args.heights, args.precision)
    except (OSError, ValueError, KeyError) as e:
        print(f"error: invalid input: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    precision = args.precision
    hv = HeightVector.from_decimals(height_strs, precision)
    S = induced_subdivision(X, hv, Fraction(args.tol_flat))
    T = refine_to_triangulation(S, X)
    digits = args.digits
    if X.dim == 1:
        breakpoints = sorted({i for s in T.simplices for i in s.vertices},
                             key=lambda i: X.points[i][0])
        rows = [(str(X.points[i][0]), mpfr_to_decimal(hv.values[i], digits))
                for i in breakpoints]
        payload = {
            "dimension": 1,
            "breakpoints": [r[0] for r in rows],
            "values": [r[1] for r in rows],
            "cells": [list(c) for c in S.cells],
        }
        csv_lines = ["x,height"] + [f"{a},{b}" for a, b in rows]
    else:
        tris = []
        for s in T.simplices:
            tris.append({
                "vertices": list(s.vertices),
                "coordinates": [[str(c) for c in X.points[i]] for i in s.vertices],
                "heights": [mpfr_to_decimal(hv.values[i], digits) for i in s.vertices],
            })
        payload = {
            "dimension": 2,
            "triangles": tris,
            "cells": [list(c) for c in S.cells],
        }
        csv_lines = ["triangle,vertex,x,y,height"]
        for t_idx, t in enumerate(tris):
            for v_idx, i in enumerate(t["vertices"]):
                x0, x1 = t["coordinates"][v_idx]
                csv_lines.append(f"{t_idx},{i},{x0},{x1},{t['heights'][v_idx]}")
    base = args.out_prefix
    _write_json(f"{base}.json" if base else None, payload)
    if base:
        with open(f"{base}.csv", "w") as fh:
            fh.write("\n".join(csv_lines) + "\n")
    else:
        print("\n".join(csv_lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tentcert",
        description="Log-concave MLE tent functions with alpha-theory certification")
    parser.add_argument("--verbose", action="store_true", help="log refinement rounds")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--precision", type=int, default=256, help="working precision in bits")
        p.add_argument("--tol-flat", dest="tol_flat", default="1/100000000",
                       help="relative facet-merge tolerance")
        p.add_argument("--gtol", default=f"1/{1 << 40}", help="gradient tolerance")
        p.add_argument("--max-stall", dest="max_stall", type=int, default=5)
        p.add_argument("--term-budget", dest="term_budget", type=int,
                       default=DEFAULT_TERM_BUDGET)
        p.add_argument("--output", "-o", default=None, help="output path (default stdout)")

    p = sub.add_parser("estimate", help="compute the MLE height vector")
    p.add_argument("input", help="input.json with points and weights")
    p.add_argument("--digits", type=int, default=12, help="output decimal digits")
    common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("certify", help="alpha-certify heights against subdivisions")
    p.add_argument("input")
    p.add_argument("heights", help="heights JSON file or inline JSON list")
    p.add_argument("--subdivision", default="auto",
                   help='"auto" or explicit JSON cell list, e.g. [[0,1],[1,2]]')
    p.add_argument("--refine", action="store_true", help="run digit refinement")
    p.add_argument("--start-digit", dest="start_digit", type=int, default=None)
    p.add_argument("--dump-system", dest="dump_system", default=None,
                   help="path prefix for system JSON dumps")
    common(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("closed-form", help="one-cell segment heights via Lambert form")
    p.add_argument("w1")
    p.add_argument("w2")
    p.add_argument("vol")
    p.add_argument("--digits", type=int, default=12)
    common(p)
    p.set_defaults(func=cmd_closed_form)

    p = sub.add_parser("tentplot", help="piecewise-linear tent description")
    p.add_argument("input")
    p.add_argument("heights")
    p.add_argument("--digits", type=int, default=12)
    p.add_argument("--out-prefix", dest="out_prefix", default=None,
                   help="write <prefix>.json and <prefix>.csv")
    common(p)
    p.set_defaults(func=cmd_tentplot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                            format="%(message)s")
    _threads_cap()
    try:
        return args.func(args)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
