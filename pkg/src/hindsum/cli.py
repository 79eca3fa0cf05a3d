"""Command-line entry point.

Every subcommand writes one versioned JSON report (CSV for `nil orbit`) that
embeds the configuration it came from.  Exit status: 0 success, 2 when a
verification or search produced a negative outcome, 1 on operational errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from fractions import Fraction
from typing import Any, Sequence

import numpy as np

from . import __version__, kernels

REPORT_VERSION = 1
EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE = 0, 1, 2


class InputError(Exception):
    pass


def _default_window() -> int:
    return int(os.environ.get("HINDSUM_WINDOW", "100000"))


def _default_threads() -> int:
    return int(os.environ.get("HINDSUM_THREADS", "1"))


def _load_json(path: str) -> Any:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as e:
        raise InputError(f"{path}: {e.strerror}") from e
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}") from e


def _load_spec(path: str, loader):
    doc = _load_json(path)
    try:
        return loader(doc)
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"{path}: invalid document: {e}") from e


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _jsonable(x):
    if isinstance(x, Fraction):
        return str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, complex):
        return {"re": x.real, "im": x.imag}
    raise TypeError(f"cannot serialize {type(x).__name__}")


def _config(args: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out")}


def _emit(args, command: str, result: Any, status: str) -> str:
    doc = {
        "version": REPORT_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": _config(args),
        "status": status,
        "result": result,
    }
    text = json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n"
    _write(args, text)
    return text


def _write(args, text: str):
    if getattr(args, "out", None):
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# --- subcommands -----------------------------------------------------------------


def cmd_straus(args) -> int:
    from .setspec import FolnerWindow, window_density
    from .straus import density_bound, make_straus, refute_fixed_B

    A = make_straus(args.primes)
    result: dict[str, Any] = {"primes": args.primes}
    status = "ok"
    if args.density:
        bound = density_bound(args.primes)
        measured = window_density(A, FolnerWindow(1, args.window))
        result["density_bound"] = str(bound)
        result["density_bound_float"] = float(bound)
        result["measured_density"] = str(measured)
        result["measured_density_float"] = float(measured)
    prefixes: list[list[int]] = []
    if args.B:
        prefixes.append(sorted(set(_int_list(args.B))))
    if args.random_B:
        rng = np.random.default_rng(args.seed)
        for _ in range(args.count):
            vals = rng.choice(np.arange(1, args.max_value + 1), size=args.random_B, replace=False)
            prefixes.append(sorted(int(v) for v in vals))
    if prefixes:
        reports = []
        for B in prefixes:
            rep = refute_fixed_B(args.primes, B, args.K, args.t_bound, args.window, A)
            reports.append(rep.to_json() | {"B": B, "complete": rep.complete})
            if not rep.complete:
                status = "unresolved"
        result["refutations"] = reports
    _emit(args, "straus", result, status)
    return EXIT_OK if status == "ok" else EXIT_NEGATIVE


def _budget(args):
    from .searcher import SearchBudget

    return SearchBudget(
        window=args.window,
        max_scan=args.max_scan,
        backtrack_depth=args.budget,
        target_B_size=max(args.target_size, args.K),
        K=args.K,
        lookahead=args.lookahead,
        threshold=args.threshold,
    )


def cmd_search(args) -> int:
    from .searcher import search_mixed, search_thmA, search_thmB
    from .setspec import from_json

    A = _load_spec(args.set, from_json)
    budget = _budget(args)
    if args.kind == "thma":
        out = search_thmA(A, args.ell, budget, args.force_zero_shifts)
    elif args.kind == "thmb":
        out = search_thmB(A, budget, args.force_zero_shifts)
    else:
        out = search_mixed(A, args.ell, budget, args.force_zero_shifts)
    ok = getattr(out, "verified", False)
    _emit(args, f"search {args.kind}", out.to_json(), "verified" if ok else "failure")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_verify(args) -> int:
    from .searcher import verify
    from .setspec import from_json
    from .sumsets import SumsetCertificate

    cert = _load_spec(args.cert, SumsetCertificate.from_json)
    A = _load_spec(args.set, from_json)
    window = args.window if args.window is not None else cert.window
    report = verify(cert, A, window)
    _emit(args, "verify", report.to_json(), report.status)
    return EXIT_NEGATIVE if report.status == "fail" else EXIT_OK


def _system(args):
    from .nilsystem import AffineTorusSystem

    return AffineTorusSystem(args.s, args.alpha)


def cmd_nil_orbit(args) -> int:
    from .nilsystem import orbit_floats, parse_point

    system = _system(args)
    base = parse_point(_int_free(args.base)) if args.base else None
    mode = args.mode or ("exact" if system.rational else "floating")
    pts = orbit_floats(system, base, args.n, mode, start=args.start)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n"] + [f"x{j}" for j in range(1, system.s + 1)])
    for i, row in enumerate(pts):
        w.writerow([args.start + i] + [repr(float(v)) for v in row])
    _write(args, buf.getvalue())
    return EXIT_OK


def _int_free(text: str) -> list[str]:
    return [x.strip() for x in text.split(",") if x.strip()]


def cmd_nil_omega(args) -> int:
    from .nilsystem import omega_sample, projection_strictness

    if args.check:
        rep = projection_strictness(args.s, args.k, args.samples, args.seed)
        _emit(args, "nil omega", rep, "strict" if rep["strict"] else "not-strict")
        return EXIT_OK if rep["strict"] else EXIT_NEGATIVE
    pts = omega_sample(args.s, args.k, args.samples, args.seed)
    _write(args, json.dumps(pts.tolist()) + "\n")
    return EXIT_OK


def cmd_nil_seminorm(args) -> int:
    from .ergodic import ghk_seminorm
    from .functions import function_from_json

    f = _load_spec(args.f, function_from_json)
    est = ghk_seminorm(_system(args), f, args.k, args.H, args.N, base=args.base_case)
    _emit(args, "nil seminorm", est.to_json(), "ok")
    return EXIT_OK


def _boxes(args, count: int):
    from .nilsystem import TorusBox

    if args.boxes:
        doc = _load_json(args.boxes)
        try:
            boxes = [TorusBox.from_json(d) for d in doc]
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"{args.boxes}: invalid box list: {e}") from e
        if len(boxes) != count:
            raise InputError(f"{args.boxes}: expected {count} boxes, got {len(boxes)}")
        return boxes
    return [TorusBox.cube(args.s, Fraction(args.side))] * count


def cmd_nil_progressive(args) -> int:
    from . import ergodic

    system = _system(args)
    threads = args.threads
    if args.mode == "left":
        boxes = _boxes(args, args.k)
        res = ergodic.left_progressive_scan(system, None, boxes, args.n_max, args.N, args.threshold, threads)
        make = lambda h: ergodic.left_pattern(boxes, h[0])  # noqa: E731
    elif args.mode == "right":
        boxes = _boxes(args, args.k - 1)
        res = ergodic.right_progressive_scan(system, None, boxes, args.n_max, args.N, args.threshold, threads)
        make = lambda h: ergodic.right_pattern(boxes, h[0])  # noqa: E731
    else:
        boxes = _boxes(args, args.k)
        res = ergodic.multiple_right_progressive_scan(
            system, None, boxes, args.ell, args.n_max, args.m_max, args.N, args.threshold, threads, args.max_hits
        )
        make = lambda h: ergodic.multi_pattern(boxes, args.ell, h[0], h[1])  # noqa: E731
    out = res.to_json()
    if args.recount:
        out["recounts"] = [str(ergodic.recount_pattern(system, None, make(h), args.N)) for h in res.hits]
    _emit(args, "nil progressive", out, "hits" if res.hits else "no-hits")
    return EXIT_OK


def cmd_repro(args) -> int:
    from .ergodic import appendix_a2_repro

    alpha = None if args.alpha is None else args.alpha
    rep = appendix_a2_repro(args.N, args.M, alpha, args.threads, args.tolerance)
    ok = all(r["within_tolerance"] for r in rep["numeric"].values())
    _emit(args, "repro appendix-a2", rep, "ok" if ok else "out-of-tolerance")
    return EXIT_OK if ok else EXIT_NEGATIVE


def cmd_density(args) -> int:
    from .setspec import FolnerWindow, banach_density_estimate, from_json, window_density

    A = _load_spec(args.set, from_json)
    prefix = window_density(A, FolnerWindow(1, args.window))
    result: dict[str, Any] = {"prefix_density": str(prefix), "prefix_density_float": float(prefix)}
    if args.length:
        val, best = banach_density_estimate(A, args.length, args.windows, args.stride)
        result["banach_estimate"] = str(val)
        result["banach_estimate_float"] = float(val)
        result["best_window"] = {"start": best.start, "length": best.length}
    _emit(args, "density", result, "ok")
    return EXIT_OK


# --- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hindsum", description="Finite-sum structures in dense sets of integers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({kernels.BACKEND} kernels)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, window=True, threads=False):
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--seed", type=int, default=0)
        if window:
            sp.add_argument("--window", type=_positive, default=_default_window())
        if threads:
            sp.add_argument("--threads", type=_positive, default=_default_threads())

    sp = sub.add_parser("straus", help="density and fixed-B refutations for Straus sets")
    common(sp)
    sp.add_argument("--primes", type=_int_list, default=[5, 13, 29, 103])
    sp.add_argument("--density", action="store_true")
    sp.add_argument("--B", help="comma-separated prefix to refute")
    sp.add_argument("--random-B", type=_positive, help="size of random prefixes to refute")
    sp.add_argument("--max-value", type=_positive, default=10_000)
    sp.add_argument("--count", type=_positive, default=1)
    sp.add_argument("--K", type=_positive, default=110)
    sp.add_argument("--t-bound", type=int, default=100)
    sp.set_defaults(func=cmd_straus)

    sp = sub.add_parser("search", help="search for a sumset certificate")
    sp.add_argument("kind", choices=["thma", "thmb", "mixed"])
    common(sp)
    sp.add_argument("--set", required=True, help="set description (JSON)")
    sp.add_argument("--ell", type=int, default=0)
    sp.add_argument("--K", type=_positive, default=3)
    sp.add_argument("--budget", type=_positive, default=200, help="total backtracking steps")
    sp.add_argument("--max-scan", type=_positive, default=2000)
    sp.add_argument("--target-size", type=_positive, default=6)
    sp.add_argument("--lookahead", type=_positive, default=2000)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--force-zero-shifts", action="store_true")
    sp.set_defaults(func=cmd_search)

    sp = sub.add_parser("verify", help="check a certificate against a set")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--cert", required=True)
    sp.add_argument("--set", required=True)
    sp.add_argument("--window", type=_positive, default=None)
    sp.set_defaults(func=cmd_verify)

    nil = sub.add_parser("nil", help="affine torus systems").add_subparsers(dest="nil_command", required=True)

    def system_args(sp, s=2):
        sp.add_argument("--s", type=_positive, default=s)
        sp.add_argument("--alpha", default="sqrt2")

    sp = nil.add_parser("orbit", help="orbit coordinates as CSV")
    common(sp, window=False)
    system_args(sp, 3)
    sp.add_argument("--n", type=_positive, default=1000)
    sp.add_argument("--start", type=int, default=1)
    sp.add_argument("--base", help="comma-separated starting point")
    sp.add_argument("--mode", choices=["exact", "floating"])
    sp.set_defaults(func=cmd_nil_orbit)

    sp = nil.add_parser("omega", help="samples of the diagonal-pattern manifolds")
    common(sp, window=False)
    sp.add_argument("--s", type=_positive, default=3)
    sp.add_argument("--k", type=_positive, default=2)
    sp.add_argument("--samples", type=_positive, default=1000)
    sp.add_argument("--check", action="store_true", help="report projection strictness instead")
    sp.set_defaults(func=cmd_nil_omega)

    sp = nil.add_parser("seminorm", help="uniformity seminorm estimate")
    common(sp, window=False)
    system_args(sp)
    sp.add_argument("--f", required=True, help="function description (JSON)")
    sp.add_argument("--k", type=int, default=2)
    sp.add_argument("--H", type=_positive, default=64)
    sp.add_argument("--N", type=_positive, default=100_000)
    sp.add_argument("--base-case", choices=["ergodic", "vdc"], default="ergodic")
    sp.set_defaults(func=cmd_nil_seminorm)

    sp = nil.add_parser("progressive", help="progressiveness scans")
    common(sp, window=False, threads=True)
    system_args(sp)
    sp.add_argument("--mode", choices=["left", "right", "multi"], required=True)
    sp.add_argument("--k", type=_positive, default=2)
    sp.add_argument("--ell", type=_positive, default=1)
    sp.add_argument("--boxes", help="JSON list of boxes")
    sp.add_argument("--side", default="2/5", help="cube side when --boxes is not given")
    sp.add_argument("--n-max", type=_positive, default=100)
    sp.add_argument("--m-max", type=_positive, default=100)
    sp.add_argument("--N", type=_positive, default=10_000)
    sp.add_argument("--threshold", type=float, default=None)
    sp.add_argument("--max-hits", type=_positive, default=20)
    sp.add_argument("--recount", action="store_true")
    sp.set_defaults(func=cmd_nil_progressive)

    rp = sub.add_parser("repro", help="worked examples").add_subparsers(dest="repro_command", required=True)
    sp = rp.add_parser("appendix-a2", help="three-step norm comparison")
    common(sp, window=False, threads=True)
    sp.add_argument("--N", type=_positive, default=200_000)
    sp.add_argument("--M", type=_positive, default=500)
    sp.add_argument("--alpha", default=None)
    sp.add_argument("--tolerance", type=float, default=0.02)
    sp.set_defaults(func=cmd_repro)

    sp = sub.add_parser("density", help="window and Banach density estimates")
    common(sp)
    sp.add_argument("--set", required=True)
    sp.add_argument("--length", type=_positive)
    sp.add_argument("--windows", type=_positive, default=10)
    sp.add_argument("--stride", type=_positive, default=1000)
    sp.set_defaults(func=cmd_density)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OverflowError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
