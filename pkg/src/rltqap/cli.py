"""Command-line interface: ``rltqap bound | estimate | verify``."""

from __future__ import annotations

import argparse
import logging
import re
import sys
from pathlib import Path

from .ascent import DEFAULT_MEMORY_BUDGET, EngineConfig, Runtime, StopReason, run
from .errors import RLTQAPError
from .model import BRUTE_FORCE_CAP, brute_force_optimum, evaluate_permutation, load_instance, parse_permutation
from .runtime.transport import DEFAULT_TIMEOUT, load_hosts
from .tensors import estimate_memory, format_bytes

log = logging.getLogger("rltqap")

_UNITS = {"": 1, "K": 1024, "M": 1024**2, "G": 1024**3, "T": 1024**4}


def parse_size(text: str) -> int:
    """``"8G"``, ``"512M"``, ``"1073741824"`` -> bytes (binary units)."""
    m = re.fullmatch(r"\s*([0-9.]+)\s*([KMGT]?)i?B?\s*", text, re.IGNORECASE)
    if not m:
        raise argparse.ArgumentTypeError(f"bad size {text!r}")
    return int(float(m.group(1)) * _UNITS[m.group(2).upper()])


def _add_instance(p: argparse.ArgumentParser, required: bool = True):
    p.add_argument("--instance", required=required, type=Path, help="QAPLIB instance file")
    p.add_argument("--swap", action="store_true",
                   help="read the first matrix as distances instead of flows")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rltqap", description="RLT dual-ascent lower bounds for the QAP")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bound", help="compute a lower bound")
    _add_instance(b)
    b.add_argument("--level", type=int, choices=(1, 2, 3), default=3)
    b.add_argument("--workers", type=int, default=1, help="in-process worker count")
    b.add_argument("--transport", choices=("inprocess", "sockets"), default="inprocess")
    b.add_argument("--hosts", type=Path, help="host list (host:port per line) for --transport sockets")
    b.add_argument("--worker-id", type=int, default=0)
    b.add_argument("--scheme", default="block-cyclic", help="partition scheme")
    b.add_argument("--max-iters", type=int, default=300)
    b.add_argument("--target", type=float, default=None,
                   help="stop when LB reaches this value (default: known optimum if bundled)")
    b.add_argument("--no-target", action="store_true", help="ignore the bundled known optimum")
    b.add_argument("--precision", type=int, choices=(32, 64), default=64)
    b.add_argument("--mem-budget", type=parse_size, default=DEFAULT_MEMORY_BUDGET)
    b.add_argument("--timeout", type=float, default=DEFAULT_TIMEOUT, help="peer silence limit (s)")
    b.add_argument("--out", type=Path, help="write the JSON report here")
    b.add_argument("--csv", type=Path, help="write the convergence CSV here")

    e = sub.add_parser("estimate", help="tensor sizes and memory needs")
    _add_instance(e, required=False)
    e.add_argument("--n", type=int, help="instance size (instead of --instance)")
    e.add_argument("--level", type=int, choices=(1, 2, 3), default=3)
    e.add_argument("--precision", type=int, choices=(32, 64), default=64)
    e.add_argument("--workers", type=int, default=1)

    v = sub.add_parser("verify", help="evaluate a permutation and compare with brute force")
    _add_instance(v)
    v.add_argument("--perm", required=True, type=Path, help="permutation file (N integers or QAPLIB .sln)")
    v.add_argument("--cap", type=int, default=BRUTE_FORCE_CAP)
    return parser


def cmd_bound(args) -> int:
    inst = load_instance(args.instance, swap=args.swap)
    target = None if args.no_target else (args.target if args.target is not None else inst.known_optimum)
    if args.no_target:
        inst = inst.with_optimum(None)
    config = EngineConfig(max_iterations=args.max_iters, target=target, level=args.level,
                          precision=args.precision, memory_budget=args.mem_budget)
    if args.transport == "sockets":
        if args.hosts is None:
            raise SystemExit("--transport sockets requires --hosts")
        runtime = Runtime(transport="sockets", hosts=load_hosts(args.hosts), worker_id=args.worker_id,
                          scheme=args.scheme, timeout=args.timeout)
    else:
        runtime = Runtime(workers=args.workers, scheme=args.scheme, timeout=args.timeout)
    report = run(inst, config, runtime)
    if runtime.transport == "inprocess" or runtime.worker_id == 0:
        print(report.summary())
        if args.out:
            args.out.write_text(report.to_json())
        if args.csv:
            report.write_csv(args.csv)
    return 0 if report.stop_reason in (StopReason.TARGET_REACHED, StopReason.ITERATION_LIMIT,
                                       StopReason.STALLED) else 1


def cmd_estimate(args) -> int:
    if args.n is None and args.instance is None:
        raise SystemExit("estimate needs --instance or --n")
    n = args.n if args.n is not None else load_instance(args.instance).n
    est = estimate_memory(n, args.level, args.precision, args.workers)
    print(f"n={n} level={args.level} precision={args.precision}-bit workers={args.workers}")
    print(f"{'tensor':<8}{'entries':>22}{'bytes':>22}{'size':>12}")
    for name, entries, nbytes in est.rows():
        print(f"{name:<8}{entries:>22,}{nbytes:>22,}{format_bytes(nbytes):>12}")
    print(f"{'total':<8}{'':>22}{est.total_bytes:>22,}{format_bytes(est.total_bytes):>12}")
    print(f"{'worker':<8}{'':>22}{est.per_worker_bytes:>22,}{format_bytes(est.per_worker_bytes):>12}")
    return 0


def cmd_verify(args) -> int:
    inst = load_instance(args.instance, swap=args.swap)
    perm = parse_permutation(args.perm.read_text(), inst.n)
    cost = evaluate_permutation(inst, perm)
    print(f"cost: {cost:g}")
    if inst.n > args.cap:
        print(f"optimal: unknown (N > cap {args.cap})")
    else:
        best_perm, best = brute_force_optimum(inst, cap=args.cap)
        verdict = "yes" if cost <= best + 1e-9 * max(1.0, abs(best)) else "no"
        print(f"optimal: {verdict} (brute-force optimum {best:g})")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    handler = {"bound": cmd_bound, "estimate": cmd_estimate, "verify": cmd_verify}[args.command]
    try:
        return handler(args)
    except RLTQAPError as exc:
        phase = getattr(exc, "phase", None)
        where = f" in phase {phase}" if phase else ""
        print(f"error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
