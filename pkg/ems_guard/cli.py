"""Command-line front end: ``ems-guard <command> [options]``."""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, NoReturn, Optional

import numpy as np
from pydantic import ValidationError

from .core.config import get_config
from .core.exceptions import CaseParseError, EmsGuardError
from .core.logger import get_logger
from .core.models import ExperimentConfig
from .tools.attacks import evaluate_attack, random_attack, to_scenario, worst_case_attack, write_scenarios
from .tools.casegen import two_area_case
from .tools.experiments import (
    EXIT_MODEL,
    EXIT_OK,
    EXIT_USAGE,
    cmd_calibrate,
    cmd_ems,
    cmd_separation,
    load_experiment,
)
from .tools.lp import get_backend_manager
from .tools.netcase import dump_case, load_case
from .tools.ptdf import compute_ptdf
from .tools.sced import solve_sced, write_dispatch_report


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _targets(value: str) -> Any:
    if value == "auto-vulnerable":
        return value
    try:
        return [int(v) for v in value.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected branch ids like '169,251' or 'auto-vulnerable'") from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="Experiment JSON file")
    common.add_argument("--case", help="Case file (.m or .json)")
    common.add_argument("--alpha-cap", type=float, help="Load shift factor ceiling (default 0.10)")
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--targets", type=_targets, help="Branch ids or 'auto-vulnerable'")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--format", choices=["csv", "json"], help="Table format")
    common.add_argument("--parallel", type=int, help="Worker threads")
    common.add_argument("--backend", choices=["highs", "simplex"], help="LP back end")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")

    parser = _Parser(prog="ems-guard", description="LR attack detection and corrective dispatch")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    commands.add_parser("calibrate", parents=[common], help="Calibrate per-asset NPDSB thresholds")
    commands.add_parser("separation", parents=[common], help="Attack/noise separation dataset")
    ems = commands.add_parser("ems", parents=[common], help="Enhanced EMS on snapshots")
    ems.add_argument("--snapshots", help="JSON lines scenario file (default: seeded attack battery)")
    ems.add_argument("--d", type=int, action="append", dest="d_values", help="Pinned-bus count (repeatable)")

    commands.add_parser("sced", parents=[common], help="Base dispatch on forecast loads")
    attack = commands.add_parser("attack", parents=[common], help="Worst-case or random attack on one target")
    attack.add_argument("--alpha", type=float, help="Load shift factor (default: alpha cap)")
    attack.add_argument("--d", type=int, default=0, help="Sensitive buses pinned at random")
    commands.add_parser("ptdf", parents=[common], help="Write the PTDF matrix")

    casegen = commands.add_parser("casegen", parents=[common], help="Write a synthetic two-area case")
    casegen.add_argument("--buses", type=int, default=120, help="Number of buses")
    return parser


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Experiment file (if any) with command-line flags layered on top."""
    document: Dict[str, Any] = {}
    if args.config:
        document = json.loads(load_experiment(args.config).model_dump_json())
    overrides = {
        "case": args.case,
        "alpha_cap": args.alpha_cap,
        "master_seed": args.seed,
        "targets": args.targets,
        "output_dir": args.out,
        "format": args.format,
        "parallel": args.parallel,
        "snapshots": getattr(args, "snapshots", None),
        "d_values": getattr(args, "d_values", None),
    }
    document.update({k: v for k, v in overrides.items() if v is not None})
    if "case" not in document:
        raise CaseParseError("no case given (use --case or a --config file)")
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        raise CaseParseError(first["msg"], field=".".join(str(p) for p in first["loc"])) from None


def _report_backends() -> List[str]:
    """Print one status line per LP back end and return the ready ones."""
    logger = get_logger()
    manager = get_backend_manager()
    for name, status in manager.get_all_statuses().items():
        if status.status == "ready":
            logger.stage_status(f"{name} back end", "ready", ", ".join(status.capabilities))
        else:
            logger.stage_status(f"{name} back end", "error", status.error_message)
    return manager.get_ready_backends()


def _run(args: argparse.Namespace) -> int:
    config = get_config()
    logger = get_logger()
    experiment = _experiment(args)
    if args.command != "casegen":
        logger.startup_banner(config.to_dict(), Path(experiment.case).name)
        _report_backends()

    if args.command == "calibrate":
        return cmd_calibrate(experiment, config, args.backend).exit_code
    if args.command == "separation":
        return cmd_separation(experiment, config, args.backend).exit_code
    if args.command == "ems":
        return cmd_ems(experiment, config, args.backend).exit_code

    out = Path(experiment.output_dir)
    if args.command == "casegen":
        case = two_area_case(
            args.buses, experiment.master_seed, alpha_cap=experiment.alpha_cap, config=config
        )
        path = Path(experiment.case)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(dump_case(case.network), indent=1) + "\n", encoding="utf-8")
        logger.stage_status("casegen", "done",
                            f"{path}: binding tie {case.binding_tie}, targets {case.targets}, "
                            f"free tie {case.free_tie}")
        return EXIT_OK

    net = load_case(experiment.case, logger)
    ptdf = compute_ptdf(net, config)
    D = net.forecast_loads

    if args.command == "ptdf":
        out.mkdir(parents=True, exist_ok=True)
        frame = ptdf.to_frame()
        if experiment.format == "json":
            path = out / "ptdf.json"
            path.write_text(frame.to_json(orient="index", double_precision=12) + "\n", encoding="utf-8")
        else:
            path = out / "ptdf.csv"
            frame.to_csv(path, float_format="%.9g")
        logger.stage_status("ptdf", "done", str(path))
        return EXIT_OK

    if args.command == "sced":
        dispatch = solve_sced(net, ptdf, D, backend=args.backend, config=config)
        path = write_dispatch_report(net, dispatch, out / f"dispatch.{experiment.format}", experiment.format)
        summary = f"{dispatch.status}, cost {dispatch.total_cost:.2f}, binding {dispatch.binding_branches}"
        logger.stage_status("sced", "done" if dispatch.is_optimal else "error", summary)
        return EXIT_OK if dispatch.is_optimal else EXIT_MODEL

    # attack
    if experiment.targets == "auto-vulnerable" or len(experiment.targets) != 1:
        raise CaseParseError("attack needs exactly one --targets branch id")
    target = experiment.targets[0]
    alpha = experiment.alpha_cap if args.alpha is None else args.alpha
    if args.d:
        vector = random_attack(net, ptdf, D, target, alpha, args.d, experiment.master_seed,
                               backend=args.backend, config=config)
    else:
        vector = worst_case_attack(net, ptdf, D, target, alpha, backend=args.backend, config=config)
    impact = evaluate_attack(net, ptdf, D, vector.deviations, target, args.backend, config)
    write_scenarios(out / "attack.jsonl", [to_scenario(net, vector, 0)])
    (out / "attack_impact.json").write_text(impact.model_dump_json(indent=2) + "\n", encoding="utf-8")
    logger.stage_status(
        "attack", "done",
        f"line {target}: masked {vector.gain_mw:.2f} MW "
        f"over {int(np.count_nonzero(vector.deviations))} buses, "
        f"physical flow {impact.physical_flow:.2f} MW vs rating {impact.rating:.2f} MW",
    )
    return EXIT_OK if impact.sced_status == "optimal" else EXIT_MODEL


def main(argv: Optional[List[str]] = None) -> int:
    """Console entry point; returns the process exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logger = get_logger()
    if args.log_level:
        logger.set_level(args.log_level)

    try:
        return _run(args)
    except EmsGuardError as e:
        logger.error(str(e), args.command)
        return EXIT_USAGE
    except ValueError as e:
        logger.error(f"invalid input: {e}", args.command)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
