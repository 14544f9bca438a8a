#!/usr/bin/env python3
"""
Command line entry point for the online verification engine

Exit codes: 0 every step holds, 1 some step is unknown, 2 a violation was
found, 3 the run failed.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from models.config import configure_logging
from models.errors import VerificationError
from models.network import load_network, random_network, save_network
from models.schemas import EngineConfig, ScenarioSpec, load_scenario
from models.verification import STEP_CSV_COLUMNS, Status
from services.benchmark_service import SCALABILITY_VARIABLES, TRADEOFF_KNOBS, default_configs, get_benchmark_service
from services.verification_service import get_verification_service

logger = logging.getLogger(__name__)

EXIT_HOLD = 0
EXIT_UNKNOWN = 1
EXIT_VIOLATED = 2
EXIT_ERROR = 3


def exit_code(statuses: Sequence[Status]) -> int:
    if Status.VIOLATED in statuses:
        return EXIT_VIOLATED
    if Status.UNKNOWN in statuses:
        return EXIT_UNKNOWN
    return EXIT_HOLD


def _scenario(args) -> ScenarioSpec:
    spec = load_scenario(args.scenario)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.branches is not None:
        overrides["params.branches"] = args.branches
    if getattr(args, "steps", None) is not None:
        overrides["horizon"] = args.steps
    return spec.with_updates(**overrides) if overrides else spec


def _config(args, accel: str = None) -> EngineConfig:
    return EngineConfig(
        accel_flags=accel if accel is not None else args.accel,
        synchronous=args.sync,
        seed=args.seed or 0,
    )


def _configs(args, kind) -> List[EngineConfig]:
    if args.accel is None:
        return default_configs(kind, _config(args, "none"))
    methods = ["none"] + [m for m in args.accel.split(";") if m.strip()]
    return [_config(args, m) for m in dict.fromkeys(methods)]


def _print_witnesses(records):
    for record in records:
        print(json.dumps({"witness": record}))


def cmd_verify_once(args) -> int:
    spec = _scenario(args)
    net = load_network(args.net) if args.net else None
    result = get_verification_service().verify_once(spec, net=net)
    if args.dump_branches:
        Path(args.dump_branches).write_text(json.dumps(result.store.to_dict()), encoding="utf-8")
    summary = result.to_dict()
    print(json.dumps(summary))
    if args.out:
        pd.DataFrame([{k: v for k, v in summary.items() if k != "witness"}]).to_csv(args.out, index=False)
    return exit_code([result.status])


def cmd_verify_online(args) -> int:
    spec = _scenario(args)
    net = load_network(args.net) if args.net else None
    result = get_verification_service().verify_online(spec, _config(args), net=net)
    frame = pd.DataFrame([r.to_row() for r in result.reports], columns=STEP_CSV_COLUMNS)
    if args.out:
        frame.to_csv(args.out, index=False)
    else:
        print(frame.to_string(index=False))
    if args.dump_branches:
        logger.info("--dump-branches applies to verify-once only")
    _print_witnesses(result.to_dict()["witnesses"])
    return exit_code([r.step_status for r in result.reports])


def cmd_bench_ablation(args) -> int:
    spec = _scenario(args)
    report = get_benchmark_service().run_experiment(spec, _configs(args, spec.kind))
    if args.out:
        report.to_csv(args.out)
    print(report.to_frame().to_string(index=False))
    _print_witnesses(report.witnesses)
    return exit_code(report.statuses)


def _values(raw: str) -> List[float]:
    values = []
    for item in raw.split(","):
        number = float(item)
        values.append(int(number) if number.is_integer() and "." not in item else number)
    return values


def cmd_bench_scalability(args) -> int:
    spec = _scenario(args)
    configs = _configs(args, spec.kind) if args.accel is not None else None
    frame = get_benchmark_service().sweep_scalability(spec, args.variable, _values(args.values), configs)
    if args.out:
        frame.to_csv(args.out, index=False)
    print(frame.to_string(index=False))
    return EXIT_HOLD


def cmd_bench_tradeoff(args) -> int:
    spec = _scenario(args)
    frame = get_benchmark_service().sweep_tradeoff(spec, args.knob, [float(v) for v in args.values.split(",")],
                                                   _config(args, "none"))
    if args.out:
        frame.to_csv(args.out, index=False)
    print(frame.to_string(index=False))
    return EXIT_HOLD


def cmd_gen_network(args) -> int:
    net = random_network(args.in_dim, args.out_dim, args.depth, args.width, args.seed or 0)
    out = args.out or "network.json"
    save_network(net, out)
    print(json.dumps({"file": out, "architecture": list(net.architecture)}))
    return EXIT_HOLD


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="online-verify", description="Online neural network verification")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("--scenario", required=True, help="scenario JSON file")
            p.add_argument("--net", help="network JSON file overriding the scenario network")
            p.add_argument("--branches", type=int, help="pre-split branch count")
            p.add_argument("--steps", type=int, help="horizon override")
            p.add_argument("--sync", action="store_true", help="build background certificates inline")
            p.add_argument("--dump-branches", help="write the branch store as JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)

    p = sub.add_parser("verify-once", help="single reach+branch run at t=0")
    common(p)
    p.set_defaults(func=cmd_verify_once)

    p = sub.add_parser("verify-online", help="stream a scenario through one accelerator set")
    common(p)
    p.add_argument("--accel", default="none", help="comma list, e.g. bmi,lb,rsr")
    p.set_defaults(func=cmd_verify_online)

    p = sub.add_parser("bench-ablation", help="compare accelerator sets on a scenario")
    common(p)
    p.add_argument("--accel", help="';'-separated accelerator sets; the baseline is always included")
    p.set_defaults(func=cmd_bench_ablation)

    p = sub.add_parser("bench-scalability", help="ablation across values of one scenario variable")
    common(p)
    p.add_argument("--accel", help="';'-separated accelerator sets")
    p.add_argument("--variable", required=True, choices=sorted(SCALABILITY_VARIABLES))
    p.add_argument("--values", required=True, help="comma list")
    p.set_defaults(func=cmd_bench_scalability)

    p = sub.add_parser("bench-tradeoff", help="time and coverage against an accelerator knob")
    common(p)
    p.add_argument("--knob", required=True, choices=sorted(TRADEOFF_KNOBS))
    p.add_argument("--values", required=True, help="ascending comma list")
    p.set_defaults(func=cmd_bench_tradeoff)

    p = sub.add_parser("gen-network", help="write a seeded random network")
    common(p, scenario=False)
    p.add_argument("--in-dim", type=int, default=9)
    p.add_argument("--out-dim", type=int, default=9)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--width", type=int, default=50)
    p.set_defaults(func=cmd_gen_network)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_ERROR if e.code else EXIT_HOLD
    configure_logging("DEBUG" if args.verbose else None)
    try:
        return args.func(args)
    except VerificationError as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (OSError, ValueError) as e:
        logger.error(f"Run failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
