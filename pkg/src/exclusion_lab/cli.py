"""Command line entry point: ``exclusion-lab {profile,simulate,verify,sweep}``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .harness import (
    KINDS,
    SpecError,
    emit_csv,
    parse_spec,
    run_experiment,
    split_documents,
    summarize,
    table_to_csv,
)
from .kernel import StepProfileParams, burgers_profile, integrated_profile, parse_kernel

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors already; keep that but raise instead."""

    def error(self, message):
        raise SpecError(message)


def _add_model_flags(p: argparse.ArgumentParser, required: bool = False) -> None:
    p.add_argument("--kernel", required=required, help="jump kernel literal, e.g. 1:0.667,-1:0.333")
    p.add_argument("--lambda", dest="lam", type=float, required=required, help="density left of 0")
    p.add_argument("--rho", type=float, required=required, help="density right of 0")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--spec", type=Path, help="experiment file (key = value lines)")
    _add_model_flags(p)
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--time", type=float, dest="t_final")
    p.add_argument("--interval", nargs=2, type=float, action="append", metavar=("U", "V"))
    p.add_argument("--replicas", type=int)
    p.add_argument("--buffer", type=int, dest="buffer_override")
    p.add_argument("--seed", type=lambda s: int(s, 0))
    p.add_argument("--n-max", type=int, dest="n_max", help="subadditive kind: array size")
    p.add_argument("--t-burn", type=float, dest="t_burn")
    p.add_argument("--out", type=Path, help="CSV destination (stdout if omitted)")
    p.add_argument("--timing", action="store_true", help="fill runtime_ms (output no longer byte-stable)")
    p.add_argument("--workers", type=int, help="worker processes (default: $EXCLUSION_LAB_WORKERS or CPU count)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="exclusion-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("profile", help="print f(u) on a grid or the integral of f over intervals")
    _add_model_flags(p, required=True)
    p.add_argument("--interval", nargs=2, type=float, action="append", metavar=("U", "V"))
    p.add_argument("--grid", nargs=3, type=float, metavar=("START", "STOP", "NUM"),
                   help="print u,f(u) for NUM points from START to STOP")

    _add_run_flags(sub.add_parser("simulate", help="run one experiment and write its CSV"))
    _add_run_flags(sub.add_parser("sweep", help="run every '---'-separated experiment in --spec"))

    p = sub.add_parser("verify", help="run the exact pathwise invariant suite")
    _add_model_flags(p)
    p.add_argument("--seed", type=lambda s: int(s, 0), default=0)
    p.add_argument("--replicas", type=int, default=20, help="seeds per check")
    p.add_argument("--sub-replicas", type=int, default=200, help="seeds for the subadditivity check")
    return parser


def _cmd_profile(args) -> int:
    kernel = parse_kernel(args.kernel)
    params = StepProfileParams(args.lam, args.rho)
    if not args.interval and not args.grid:
        raise SpecError("profile needs --interval U V or --grid START STOP NUM")
    for u, v in args.interval or []:
        print(repr(integrated_profile(u, v, kernel, params)))
    if args.grid:
        start, stop, num = args.grid
        if num < 1 or num != int(num):
            raise SpecError("--grid NUM must be a positive integer")
        print("u,f")
        for u in np.linspace(start, stop, int(num)):
            print(f"{float(u)!r},{burgers_profile(float(u), kernel, params)!r}")
    return EXIT_OK


def _overrides(args) -> dict:
    out = {
        "kind": args.kind, "kernel": args.kernel, "lam": args.lam, "rho": args.rho,
        "t_final": args.t_final, "replicas": args.replicas,
        "buffer_override": args.buffer_override, "seed": args.seed,
        "n_max": args.n_max, "t_burn": args.t_burn,
    }
    if args.interval:
        out["intervals"] = tuple((u, v) for u, v in args.interval)
    if args.timing:
        out["timing"] = True
    return out


def _read_spec(path: Optional[Path]) -> str:
    if path is None:
        return ""
    try:
        return path.read_text(encoding="utf-8")
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc.strerror or exc}") from None


def _write(table, out: Optional[Path], index: Optional[int] = None) -> None:
    if out is None:
        sys.stdout.write(table_to_csv(table))
        return
    if index is not None:
        out = out.with_name(f"{out.stem}_{index:03d}{out.suffix or '.csv'}")
    emit_csv(table, out)


def _report(table) -> int:
    for (u, v), (mean, err, n) in summarize(table).items():
        print(f"({u}, {v}): mean empirical {mean:.6f}, mean error {err:+.6f} over {n} replicas",
              file=sys.stderr)
    if "marginal_test" in table.metadata:
        print(f"marginal test: {table.metadata['marginal_test']}", file=sys.stderr)
    failed = table.failed_rows
    if failed:
        print(f"{len(failed)} failed or inadequate rows", file=sys.stderr)
    if table.metadata.get("marginal_test", "").startswith("fail"):
        return EXIT_FAIL
    return EXIT_FAIL if failed else EXIT_OK


def _cmd_simulate(args) -> int:
    spec = parse_spec(_read_spec(args.spec), **_overrides(args))
    table = run_experiment(spec, workers=args.workers)
    _write(table, args.out)
    return _report(table)


def _cmd_sweep(args) -> int:
    if args.spec is None:
        raise SpecError("sweep needs --spec PATH")
    docs = split_documents(_read_spec(args.spec))
    if not docs:
        raise SpecError(f"{args.spec} holds no experiments")
    specs = [parse_spec(d, **_overrides(args)) for d in docs]
    status = EXIT_OK
    for i, spec in enumerate(specs):
        table = run_experiment(spec, workers=args.workers)
        _write(table, args.out, index=i if len(specs) > 1 else None)
        status = max(status, _report(table))
    return status


def _cmd_verify(args) -> int:
    from .checks import run_suite

    kernel = parse_kernel(args.kernel) if args.kernel else None
    params = None
    if args.lam is not None or args.rho is not None:
        params = StepProfileParams(0.8 if args.lam is None else args.lam,
                                   0.3 if args.rho is None else args.rho)
    results = run_suite(kernel, params, seed=args.seed, n_seeds=args.replicas,
                        n_sub_seeds=args.sub_replicas, progress=print)
    return EXIT_OK if all(r.ok for r in results) else EXIT_FAIL


def _glue_kernel_values(argv: List[str]) -> List[str]:
    """``--kernel -1:1`` would read as an option; rewrite it as ``--kernel=-1:1``."""
    out: List[str] = []
    i = 0
    while i < len(argv):
        if argv[i] == "--kernel" and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and ":" in argv[i + 1]:
            out.append(f"--kernel={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(_glue_kernel_values(argv))
        handler = {"profile": _cmd_profile, "simulate": _cmd_simulate,
                   "sweep": _cmd_sweep, "verify": _cmd_verify}[args.command]
        return handler(args)
    except (SpecError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


cli_main = main


if __name__ == "__main__":
    sys.exit(main())
