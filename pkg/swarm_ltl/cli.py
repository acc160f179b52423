"""Command-line front end: synth, refine, simulate, verify and plot.

Exit codes: 0 success, 1 input error, 2 unrealizable, 3 runtime violation or
failed verification.
"""

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from . import __version__
from .abstraction import build_dfts, save_dfts
from .config import LOG_ENV_VAR, check, configure_logging
from .io import (load_env_script, read_trajectory_csv, write_monitor_json, write_trace,
                 write_trajectory_csv)
from .plot import plot_svg
from .qp import FxtParams, QpConfig, fxt_params
from .sim import (MissionJob, SimConfig, generate_schedule, refine_loop, run_mission,
                  run_missions, scripted_schedule)
from .spec import Gr1Spec, load_gr1
from .synthesis import build_game, load_strategy, save_strategy, synthesize, verify_strategy
from .types import OverrideFile
from .world import GridWorld, load_world

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_UNREALIZABLE = 2
EXIT_VIOLATION = 3


@dataclass(frozen=True)
class RunConfig:
    world_path: Path
    spec_path: Path
    output_dir: Path = Path(".")
    seed: int = 0
    qp: QpConfig = field(default_factory=QpConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    mu: float = 2.0

    def __post_init__(self) -> None:
        for p in (self.world_path, self.spec_path):
            if not p.is_file():
                raise FileNotFoundError(f"No such file: {p}")

    @property
    def fxt(self) -> FxtParams:
        return fxt_params(self.mu, self.sim.T_ud)

    def load(self) -> tuple[GridWorld, Gr1Spec]:
        return load_world(self.world_path), load_gr1(self.spec_path)


def _overrides(args: argparse.Namespace, names: dict[str, str]) -> dict[str, Any]:
    return {key: getattr(args, attr) for attr, key in names.items()
            if getattr(args, attr, None) is not None}


def run_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the --config file, then command-line flags."""
    file: OverrideFile = {}
    if args.config is not None:
        file = check(OverrideFile, json.loads(Path(args.config).read_text()))

    qp = check(QpConfig, {**file.get("qp", {}), **_overrides(args, {"u_max": "u_max"})})
    sim = check(SimConfig, {**file.get("sim", {}),
                            **_overrides(args, {"dt": "dt", "t_ud": "T_ud", "steps":
                                                "max_symbolic_steps", "seed": "seed"})})
    fxt = {**file.get("fxt", {}), **_overrides(args, {"mu": "mu"})}
    unknown = set(fxt) - {"mu"}
    if unknown:
        raise ValueError(f"Unknown fxt overrides: {sorted(unknown)} (T_ud is a sim setting)")
    seed = args.seed if args.seed is not None else file.get("seed", sim.seed)
    return RunConfig(world_path=Path(args.world), spec_path=Path(args.spec),
                     output_dir=Path(args.out), seed=seed, qp=qp,
                     sim=replace(sim, seed=seed), mu=float(fxt.get("mu", 2.0)))  # type: ignore[arg-type]


def _prepare_output(cfg: RunConfig) -> Path:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    return cfg.output_dir


def _write_json(path: Path, data: object) -> None:
    path.write_text(json.dumps(data, indent=1) + "\n")


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    world, spec = cfg.load()
    dfts = build_dfts(world, switch_while_moving=not args.no_switch_while_moving)
    result = synthesize(dfts, spec)
    out = _prepare_output(cfg)
    _write_json(out / "synthesis.json", result.to_dict())
    if result.strategy is None:
        print("unrealizable", file=sys.stderr)
        return EXIT_UNREALIZABLE
    save_dfts(dfts, out / "dfts.json")
    save_strategy(result.strategy, spec.env_vars, out / "strategy.json")
    print(f"realizable: {len(result.strategy.nodes)} strategy nodes written to "
          f"{out / 'strategy.json'}")
    if result.report is not None and not result.report.passed:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_refine(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    world, spec = cfg.load()
    dfts, strategy, report = refine_loop(world, spec, cfg.qp, cfg.fxt, cfg.sim,
                                         probe_budget=args.probe_budget)
    out = _prepare_output(cfg)
    _write_json(out / "refinement.json", report.to_dict())
    save_dfts(dfts, out / "dfts.json")
    print(f"{report.rounds} rounds, {report.probes} probes, {len(report.pruned)} pruned")
    if strategy is None:
        print("unrealizable after pruning", file=sys.stderr)
        return EXIT_UNREALIZABLE
    save_strategy(strategy, spec.env_vars, out / "strategy.json")
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    world, spec = cfg.load()
    dfts = build_dfts(world)
    strategy = load_strategy(args.strategy, dfts)
    script = load_env_script(args.battery_script) if args.battery_script else None
    out = _prepare_output(cfg)

    if args.runs > 1:
        jobs = [MissionJob(cfg.world_path, cfg.spec_path, Path(args.strategy),
                           replace(cfg.sim, seed=cfg.seed + k), cfg.qp, cfg.fxt,
                           falsify_prob=args.falsify_prob, script=script)
                for k in range(args.runs)]
        reports = run_missions(jobs, args.workers)
        _write_json(out / "monitor.json", [r.to_dict() for r in reports])
        failed = sum(not r.passed for r in reports)
        print(f"{args.runs} runs, {failed} with violations")
        return EXIT_VIOLATION if failed else EXIT_OK

    if script is not None:
        schedule = scripted_schedule(spec, script)
    else:
        schedule = generate_schedule(spec, cfg.seed, cfg.sim.max_symbolic_steps,
                                     args.falsify_prob)
    dump_dir = None
    if args.dump_qp:
        dump_dir = Path(args.dump_qp)
        dump_dir.mkdir(parents=True, exist_ok=True)
    log, report = run_mission(world, dfts, strategy, schedule, cfg.sim, cfg.qp, cfg.fxt,
                              dump_dir=dump_dir)
    write_trajectory_csv(log, world.catalog.r, out / "trajectory.csv")
    write_monitor_json(report, out / "monitor.json")
    write_trace(log, spec.env_vars, out / "trace.txt")
    print(f"{report.steps_completed} steps, goal visits "
          f"{[len(v) for v in report.goal_visit_indices]}, "
          f"{'passed' if report.passed else 'FAILED'}")
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = run_config(args)
    world, spec = cfg.load()
    dfts = build_dfts(world)
    strategy = load_strategy(args.strategy, dfts)
    report = verify_strategy(build_game(dfts, spec), strategy)
    print(json.dumps(report.to_dict(), indent=1))
    return EXIT_OK if report.passed else EXIT_VIOLATION


def cmd_plot(args: argparse.Namespace) -> int:
    world = load_world(args.world)
    table = read_trajectory_csv(args.trajectory) if args.trajectory else None
    if table is not None and len(table) and table.r != world.catalog.r:
        raise ValueError(f"Trajectory has {table.r} robots, the world's formations have "
                         f"{world.catalog.r}")
    plot_svg(world, table, args.out)
    return EXIT_OK


def _probability(text: str) -> float:
    p = float(text)
    if not 0 <= p <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return p


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--world", required=True, help="world JSON file")
    p.add_argument("--spec", required=True, help="GR(1) specification file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", help="JSON file with qp/fxt/sim overrides")
    p.add_argument("--seed", type=int)
    p.add_argument("--u-max", dest="u_max", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-ud", dest="t_ud", type=float, help="reach deadline in seconds")
    p.add_argument("--mu", type=float, help="fixed-time gain parameter (> 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarm-ltl", description=__doc__.split("\n\n")[0],
        epilog=f"Log verbosity is read from {LOG_ENV_VAR} (e.g. INFO, DEBUG).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a strategy")
    _add_run_options(p)
    p.add_argument("--no-switch-while-moving", action="store_true",
                   help="only allow formation switches on stay moves")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("refine", help="synthesize and prune QP-infeasible transitions")
    _add_run_options(p)
    p.add_argument("--probe-budget", type=int, default=1)
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("simulate", help="run the closed loop and monitor it")
    _add_run_options(p)
    p.add_argument("--strategy", required=True)
    p.add_argument("--steps", type=int, help="number of symbolic steps")
    env = p.add_mutually_exclusive_group()
    env.add_argument("--battery-script", help="lines of 'step=K var=true|false'")
    env.add_argument("--falsify-prob", type=_probability, default=0.0)
    p.add_argument("--runs", type=int, default=1, help="independent runs with seeds seed..")
    p.add_argument("--workers", type=int)
    p.add_argument("--dump-qp", metavar="DIR", help="write segment-start and failing QPs")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("verify", help="check a strategy file exhaustively")
    _add_run_options(p)
    p.add_argument("--strategy", required=True)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("plot", help="render a world and trajectory as SVG")
    p.add_argument("--world", required=True)
    p.add_argument("--trajectory")
    p.add_argument("--out", required=True, help="SVG file")
    p.set_defaults(handler=cmd_plot)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except (ValueError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
