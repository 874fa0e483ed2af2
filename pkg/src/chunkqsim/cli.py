"""Command-line entry point.

Exit codes: 0 success, 1 runtime or verification failure, 2 usage/input errors.
Every flag can also be supplied through an environment variable named
CHUNKQSIM_<FLAG>, e.g. CHUNKQSIM_ERROR_BOUND=1e-6; command-line values win.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import bench, circuit as cir, planner
from .device import Strategy
from .oracle import ORACLE_LIMIT, simulate_dense
from .pipeline import PipelineConfig, run

ENV_PREFIX = "CHUNKQSIM_"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _env_name(flag: str) -> str:
    return ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper()


def _truthy(s: str) -> bool:
    return s.strip().lower() in ("1", "true", "yes", "on")


def _apply_env(parser: argparse.ArgumentParser):
    """Use CHUNKQSIM_* variables as defaults for the parser's optional flags."""
    for action in parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        flag = max(action.option_strings, key=len)
        val = os.environ.get(_env_name(flag))
        if val is None:
            continue
        if isinstance(action, argparse._StoreTrueAction):
            action.default = _truthy(val)
        else:
            action.default = val  # argparse converts string defaults with the action's type


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _error_bound(s: str) -> float:
    v = float(s)
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"error bound must be finite and >= 0, got {s}")
    return v


def _fraction(s: str) -> float:
    v = float(s)
    if not 0 <= v <= 1:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {s}")
    return v


def _strategy(s: str) -> Strategy:
    try:
        return Strategy.parse(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown strategy {s!r}; choose from {[x.value for x in Strategy]}")


def _int_list(s: str) -> list[int]:
    try:
        return [int(x) for x in s.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}")


def _strategy_list(s: str) -> list[Strategy]:
    return [_strategy(x) for x in s.split(",") if x.strip()]


def _pipeline_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("pipeline")
    g.add_argument("--chunk-qubits", type=_positive_int, help="log2 amplitudes per compressed chunk (default min(16, n-2))")
    g.add_argument("--batch-qubits", type=_positive_int, help="log2 amplitudes per device batch (default min(n, max(20, c+2)))")
    g.add_argument("--error-bound", type=_error_bound, default=1e-5, help="absolute per-component bound; 0 = lossless")
    g.add_argument("--strategy", type=_strategy, default=Strategy.BUFFERED, help="synchronous | per_element | buffered")
    g.add_argument("--decompress-workers", type=_positive_int, default=2)
    g.add_argument("--recompress-workers", type=_positive_int, default=2)
    g.add_argument("--host-fraction", type=_fraction, default=0.0, help="fraction of each stage's batches run on host workers")
    g.add_argument("--pipeline-depth", type=_positive_int, default=2, help="batches in flight")
    g.add_argument("--kernel-workers", type=_positive_int, default=os.cpu_count() or 1)
    g.add_argument("--device-memory", type=_positive_int, help="device memory limit in bytes")
    g.add_argument("--renormalize", action="store_true", help="rescale to unit norm after the last stage")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="write JSON here instead of stdout")
    g.add_argument("--explain", action="store_true", help="print the stage plan table")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chunkqsim", description="Compressed-chunk state-vector simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate a QASM circuit and emit a JSON report")
    p.add_argument("input")
    _pipeline_flags(p)
    p.add_argument("--no-fidelity", action="store_true", help="skip the dense oracle comparison")

    p = sub.add_parser("verify", help="compare the pipeline against the dense oracle")
    p.add_argument("input")
    _pipeline_flags(p)
    p.add_argument("--min-fidelity", type=float, default=0.999)
    p.add_argument("--max-deviation", type=float, default=1e-12, help="lossless per-amplitude tolerance")

    p = sub.add_parser("bench-transfer", help="time gather/scatter per transfer strategy")
    p.add_argument("--exponents", type=_int_list, default=list(bench.DEFAULT_EXPONENTS))
    p.add_argument("--strategies", type=_strategy_list, default=list(Strategy))
    p.add_argument("--repetitions", type=_positive_int, default=3)
    p.add_argument("--chunk-qubits", type=_positive_int, default=16)
    p.add_argument("--device-memory", type=_positive_int)
    p.add_argument("--out")

    p = sub.add_parser("gen", help="write a generated circuit as QASM")
    p.add_argument("kind", choices=("ghz", "qft", "random"))
    p.add_argument("--qubits", type=_positive_int, required=True)
    p.add_argument("--depth", type=_positive_int, default=100, help="gate count for random circuits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    for action in sub.choices.values():
        _apply_env(action)
    _apply_env(parser)
    return parser


def _load_circuit(path: str) -> cir.Circuit:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}") from None
    try:
        return cir.parse_qasm(text)
    except cir.QasmError as e:
        raise UsageError(f"{path}: {e}") from None


def config_from_args(args, n: int) -> PipelineConfig:
    c = args.chunk_qubits if args.chunk_qubits is not None else (min(16, n - 2) if n > 2 else 1)
    m = args.batch_qubits if args.batch_qubits is not None else min(n, max(20, c + 2))
    cfg = PipelineConfig(
        chunk_qubits=c,
        batch_qubits=m,
        error_bound=args.error_bound,
        strategy=args.strategy,
        decompress_workers=args.decompress_workers,
        recompress_workers=args.recompress_workers,
        host_fraction=args.host_fraction,
        pipeline_depth=args.pipeline_depth,
        renormalize=args.renormalize,
        seed=args.seed,
        kernel_workers=args.kernel_workers,
        device_memory_bytes=args.device_memory,
    )
    errs = cfg.problems(n)
    if errs:
        raise UsageError("; ".join(errs))
    return cfg


def _emit(obj, out: str | None):
    text = json.dumps(obj, indent=2, default=str)
    if out:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text + "\n")
    else:
        print(text)


def _explain(args, circ: cir.Circuit, cfg: PipelineConfig):
    table = planner.explain(planner.plan(circ, cfg.chunk_qubits, cfg.batch_qubits))
    print(table, file=sys.stdout if args.out else sys.stderr)


def cmd_run(args) -> int:
    circ = _load_circuit(args.input)
    cfg = config_from_args(args, circ.num_qubits)
    if args.explain:
        _explain(args, circ, cfg)
    _, report = run(circ, cfg, with_fidelity=not args.no_fidelity)
    _emit(report.as_dict(), args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    circ = _load_circuit(args.input)
    if circ.num_qubits > ORACLE_LIMIT:
        raise UsageError(f"{circ.num_qubits} qubits exceeds oracle limit {ORACLE_LIMIT}")
    cfg = config_from_args(args, circ.num_qubits)
    if args.explain:
        _explain(args, circ, cfg)
    store, report = run(circ, cfg, with_fidelity=True)
    ref = simulate_dense(circ).amplitudes
    deviation = float(np.max(np.abs(store.to_dense() - ref)))
    if cfg.error_bound == 0:
        passed = deviation <= args.max_deviation
        criterion = f"max deviation {deviation:.3e} <= {args.max_deviation:.3e}"
    else:
        passed = report.fidelity >= args.min_fidelity
        criterion = f"fidelity {report.fidelity:.12f} >= {args.min_fidelity}"
    _emit(
        {
            "passed": passed,
            "criterion": criterion,
            "max_deviation": deviation,
            "fidelity": report.fidelity,
            "norm": report.norm,
            "digest": report.digest,
        },
        args.out,
    )
    if not passed:
        print(f"verification failed: {criterion} does not hold", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_bench_transfer(args) -> int:
    result = bench.bench_transfer(args.exponents, args.strategies, args.repetitions, args.chunk_qubits, args.device_memory)
    _emit(result, args.out)
    return EXIT_OK


def cmd_gen(args) -> int:
    n = args.qubits
    if args.kind == "ghz":
        circ = cir.ghz(n)
    elif args.kind == "qft":
        circ = cir.qft(n)
    else:
        circ = cir.random_circuit(n, args.depth, args.seed)
    text = cir.to_qasm(circ)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "bench-transfer": cmd_bench_transfer, "gen": cmd_gen}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
