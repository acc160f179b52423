"""Closed-loop execution of a strategy on the single-integrator swarm."""

import logging
import math
from collections.abc import Iterable, Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray
from pydantic import ConfigDict

from .abstraction import Action, Dfts, State, build_dfts, prune_transition
from .geometry import (ControlInput, Formation, SwarmState, Vec2, centroid, displacement,
                       h_formation, h_waypoint, pairs)
from .qp import FxtParams, QpConfig, build_qp, dump_qp, fxt_params, solve_qp, split_solution
from .spec import Gr1Spec, assignment, atoms, eval_prop, load_gr1, next_atoms
from .synthesis import Strategy, StrategyError, env_valuations, load_strategy, synthesize
from .types import Valuation
from .world import (REGION_LABELS, FeasibilityRule, GridWorld, cell_of_point, load_world,
                    waypoint_of_cell)

logger = logging.getLogger(__name__)


class Outcome(str, Enum):
    REACHED = "reached"
    DEADLINE_EXCEEDED = "deadline_exceeded"
    QP_INFEASIBLE = "qp_infeasible"


@dataclass(frozen=True)
class SimConfig:
    __pydantic_config__ = ConfigDict(extra="forbid")

    dt: float = 0.01
    T_ud: float = 4.0
    max_symbolic_steps: int = 200
    seed: int = 0
    monitor_tol: float = 1e-3

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.T_ud / self.dt < 100:
            raise ValueError(f"dt={self.dt} is too coarse for T_ud={self.T_ud}"
                             " (need T_ud/dt >= 100)")
        if self.max_symbolic_steps < 0:
            raise ValueError("max_symbolic_steps must not be negative")
        if self.monitor_tol < 0:
            raise ValueError("monitor_tol must not be negative")


def integrate(state: SwarmState, u: ControlInput, dt: float) -> SwarmState:
    """Forward Euler step of x_i' = u_i."""
    if u.r != state.r:
        raise ValueError(f"Input for {u.r} robots applied to {state.r} robots")
    return SwarmState(state.positions + dt * u.inputs)


# Environment schedules

@dataclass(frozen=True, eq=False)
class EnvSchedule:
    """Proposes env valuations, then repairs them to satisfy the env assumptions.

    Scripted mode applies per-step variable assignments on top of the previous
    valuation. Random mode draws a proposal per step in which each variable is
    false with probability falsify_prob.
    """

    spec: Gr1Spec
    mode: Literal["scripted", "random"]
    script: Mapping[int, Mapping[str, bool]] = field(default_factory=dict)
    proposals: tuple[Valuation, ...] = ()
    falsify_prob: float = 0.0
    universe: frozenset[str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        names = {a for f in self.spec.formulas() for a in (*atoms(f), *next_atoms(f))}
        object.__setattr__(self, "universe", frozenset(names).union(self.spec.env_vars))
        known = set(self.spec.env_vars)
        for step, values in self.script.items():
            if step < 0:
                raise ValueError(f"Negative step in env script: {step}")
            unknown = set(values) - known
            if unknown:
                raise ValueError(f"Env script sets unknown variables: {sorted(unknown)}")

    def _requested(self, step: int, previous: Valuation) -> Valuation:
        if self.mode == "random":
            if step < len(self.proposals):
                return self.proposals[step]
            return frozenset(self.spec.env_vars)
        values = self.script.get(step, {})
        return frozenset(v for v in self.spec.env_vars
                         if values.get(v, v in previous))

    def _closest(self, requested: Valuation, candidates: Sequence[Valuation]) -> Valuation:
        if not candidates:
            raise ValueError("Environment assumptions admit no valuation here")
        return min(candidates, key=lambda v: len(v ^ requested))

    def initial(self, labels: frozenset[str]) -> Valuation:
        """Valuation for step 0, satisfying the env initial condition."""
        universe = self.universe | labels
        candidates = [v for v in env_valuations(self.spec.env_vars)
                      if eval_prop(self.spec.env_init, assignment(labels | v, universe))]
        return self._closest(self._requested(0, frozenset(self.spec.env_vars)), candidates)

    def next(self, step: int, labels: frozenset[str], current: Valuation) -> Valuation:
        """Valuation for step, given the full labels (system and env) at step - 1."""
        env = frozenset(self.spec.env_vars)
        now = assignment(labels, self.universe | labels)
        candidates = [v for v in env_valuations(self.spec.env_vars)
                      if all(eval_prop(f, now, assignment(v, env)) for f in self.spec.env_safety)]
        requested = self._requested(step, current)
        chosen = self._closest(requested, candidates)
        if chosen != requested:
            logger.debug("Step %d: env valuation %s repaired to %s", step,
                         sorted(requested), sorted(chosen))
        return chosen


def scripted_schedule(spec: Gr1Spec, script: Mapping[int, Mapping[str, bool]]) -> EnvSchedule:
    return EnvSchedule(spec, "scripted", script=dict(script))


def generate_schedule(spec: Gr1Spec, seed: int, length: int, falsify_prob: float) -> EnvSchedule:
    if not 0 <= falsify_prob <= 1:
        raise ValueError(f"falsify_prob must be in [0, 1], got {falsify_prob}")
    rng = np.random.default_rng(seed)
    draws = rng.random((length + 1, len(spec.env_vars)))
    proposals = tuple(frozenset(v for v, x in zip(spec.env_vars, row) if x >= falsify_prob)
                      for row in draws)
    return EnvSchedule(spec, "random", proposals=proposals, falsify_prob=falsify_prob)


# Logs

class Sample(NamedTuple):
    t: float
    positions: NDArray[np.float64]
    inputs: NDArray[np.float64]
    target_cell: tuple[int, int]
    formation: str
    delta1: float
    delta2: float
    qp_status: str


class TraceEntry(NamedTuple):
    step: int
    state: State
    env: Valuation
    action: Action


@dataclass
class TrajectoryLog:
    samples: list[Sample] = field(default_factory=list)
    symbolic_trace: list[TraceEntry] = field(default_factory=list)
    output_word: list[frozenset[str]] = field(default_factory=list)
    final: Optional[SwarmState] = None

    def states(self) -> Iterable[NDArray[np.float64]]:
        """Every sampled configuration followed by the final one."""
        yield from (s.positions for s in self.samples)
        if self.final is not None:
            yield self.final.positions


@dataclass
class Segment:
    step: int
    samples: list[Sample]
    outcome: Outcome
    elapsed: float
    final: SwarmState

    @property
    def delta1_positive(self) -> bool:
        return any(s.delta1 > 0 for s in self.samples)


def is_reached(state: SwarmState, w: Vec2, f: Formation, cfg: QpConfig) -> bool:
    if h_waypoint(centroid(state), w, cfg.d_G) > 0:
        return False
    return all(h_formation(displacement(state, i, j), f.f(i, j), cfg.d_F) <= 0
               for i, j in pairs(state.r))


def run_symbolic_step(state: SwarmState, target: tuple[Vec2, Formation], world: GridWorld,
                      cfg: QpConfig, params: FxtParams, dt: float, T_ud: float, *,
                      start_index: int = 0, step: int = 0,
                      dump_dir: Optional[Path] = None) -> tuple[Segment, Outcome]:
    """Drive the swarm to (w, f) until reached, the deadline passes or a QP fails.

    Samples are taken before each integration step at t = (start_index + k) dt.
    """
    w, f = target
    cell = cell_of_point(world, w)
    limit = math.floor(T_ud / dt + 1e-9)
    samples: list[Sample] = []
    k = 0
    while True:
        if is_reached(state, w, f, cfg):
            outcome = Outcome.REACHED
            break
        if k > limit:
            outcome = Outcome.DEADLINE_EXCEEDED
            break
        problem = build_qp(state, w, f, world, cfg, params)
        solution = solve_qp(problem, cfg.feas_tol, cfg.max_iter)
        t = (start_index + k) * dt
        if dump_dir is not None and (k == 0 or not solution.optimal):
            dump_qp(problem, dump_dir / f"qp_step{step:04d}_k{k:04d}.json", t=t, step=step,
                    status=solution.status.value)
        if not solution.optimal:
            samples.append(Sample(t, state.positions, np.zeros_like(state.positions), cell, f.id,
                                  0.0, 0.0, solution.status.value))
            logger.warning("Step %d: QP %s at t=%.2f", step, solution.status.value, t)
            outcome = Outcome.QP_INFEASIBLE
            break
        u, delta1, delta2 = split_solution(solution.z, state.r)
        samples.append(Sample(t, state.positions, u.inputs, cell, f.id, delta1, delta2,
                              solution.status.value))
        state = integrate(state, u, dt)
        k += 1
    logger.debug("Step %d: %s after %d samples", step, outcome.value, len(samples))
    return Segment(step, samples, outcome, len(samples) * dt, state), outcome


# Monitors

@dataclass
class SegmentReport:
    step: int
    outcome: Outcome
    reach_time: float
    delta1_positive: bool


@dataclass
class MonitorReport:
    min_pairwise_distance: float = math.inf
    min_obstacle_margin: float = math.inf
    reach_times: list[float] = field(default_factory=list)
    reach_deadline_violations: int = 0
    collision_violations: int = 0
    obstacle_violations: int = 0
    sys_safety_violations: int = 0
    goal_visit_indices: list[list[int]] = field(default_factory=list)
    delta1_positive_steps: int = 0
    centroid_obstacle_samples: int = 0
    # Samples inside the monitor_tol band above a barrier, not violations.
    near_misses: int = 0
    steps_completed: int = 0
    aborted: Optional[Outcome] = None
    segments: list[SegmentReport] = field(default_factory=list)

    @property
    def violations(self) -> int:
        return (self.reach_deadline_violations + self.collision_violations
                + self.obstacle_violations + self.sys_safety_violations)

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.aborted is None

    def to_dict(self) -> dict[str, object]:
        def finite(x: float) -> Optional[float]:
            return x if math.isfinite(x) else None

        return {
            "min_pairwise_distance": finite(self.min_pairwise_distance),
            "min_obstacle_margin": finite(self.min_obstacle_margin),
            "reach_times": self.reach_times,
            "reach_deadline_violations": self.reach_deadline_violations,
            "collision_violations": self.collision_violations,
            "obstacle_violations": self.obstacle_violations,
            "sys_safety_violations": self.sys_safety_violations,
            "goal_visit_indices": self.goal_visit_indices,
            "delta1_positive_steps": self.delta1_positive_steps,
            "centroid_obstacle_samples": self.centroid_obstacle_samples,
            "near_misses": self.near_misses,
            "steps_completed": self.steps_completed,
            "aborted": self.aborted.value if self.aborted else None,
            "passed": self.passed,
            "segments": [{"step": s.step, "outcome": s.outcome.value,
                          "reach_time": s.reach_time, "delta1_positive": s.delta1_positive}
                         for s in self.segments]}


class _Monitor:
    def __init__(self, world: GridWorld, qp_cfg: QpConfig, sim_cfg: SimConfig):
        self.world = world
        self.d_O = qp_cfg.d_O
        self.tol = sim_cfg.monitor_tol
        self.T_ud = sim_cfg.T_ud
        self.report = MonitorReport()

    def configuration(self, x: NDArray[np.float64]) -> None:
        dists = [float(np.linalg.norm(x[i] - x[j])) for i, j in pairs(len(x))]
        d = min(dists)
        self.report.min_pairwise_distance = min(self.report.min_pairwise_distance, d)
        if d < self.d_O:
            self.report.collision_violations += 1
        elif d < self.d_O + self.tol:
            self.report.near_misses += 1
        if self.world.obstacles:
            margin = min(o.barrier(p) for o in self.world.obstacles for p in x)
            self.report.min_obstacle_margin = min(self.report.min_obstacle_margin, margin)
            if margin < 0:
                self.report.obstacle_violations += 1
            elif margin < self.tol:
                self.report.near_misses += 1
        c = cell_of_point(self.world, np.clip(x.mean(axis=0), *self._clip_bounds()))
        if self.world.is_obstacle(c):
            self.report.centroid_obstacle_samples += 1

    def _clip_bounds(self) -> tuple[Vec2, Vec2]:
        xmin, xmax, ymin, ymax = self.world.bounds()
        return np.array((xmin, ymin)), np.array((xmax, ymax))

    def segment(self, seg: Segment) -> None:
        for s in seg.samples:
            self.configuration(s.positions)
            if s.delta1 > 0:
                self.report.delta1_positive_steps += 1
        report = SegmentReport(seg.step, seg.outcome, seg.elapsed, seg.delta1_positive)
        self.report.segments.append(report)
        if seg.outcome is Outcome.REACHED:
            self.report.reach_times.append(seg.elapsed)
            if seg.elapsed > self.T_ud:
                self.report.reach_deadline_violations += 1
        elif seg.outcome is Outcome.DEADLINE_EXCEEDED:
            self.report.reach_deadline_violations += 1


def _goal_steps(spec: Gr1Spec, word: Sequence[frozenset[str]],
                universe: frozenset[str]) -> list[list[int]]:
    return [[k for k, letter in enumerate(word) if eval_prop(g, assignment(letter, universe))]
            for g in spec.sys_justice]


def run_mission(world: GridWorld, dfts: Dfts, strategy: Strategy, schedule: EnvSchedule,
                cfg: SimConfig, qp_cfg: Optional[QpConfig] = None,
                params: Optional[FxtParams] = None, *,
                dump_dir: Optional[Path] = None) -> tuple[TrajectoryLog, MonitorReport]:
    qp_cfg = qp_cfg or QpConfig()
    params = params or fxt_params(T_ud=cfg.T_ud)
    spec = schedule.spec
    universe = REGION_LABELS.union(*dfts.labels.values(), spec.env_vars)
    monitor = _Monitor(world, qp_cfg, cfg)
    log = TrajectoryLog()

    s0 = dfts.initial
    e0 = schedule.initial(dfts.labels[s0])
    node = strategy.start((s0, e0))
    state = SwarmState.in_formation(world.cell_centre(s0.cell), world.catalog[s0.formation])
    sample_index = 0

    for k in range(cfg.max_symbolic_steps):
        s_k, e_k = strategy.nodes[node].position  # type: ignore[misc]
        letter = dfts.labels[s_k] | e_k
        log.output_word.append(letter)
        if not all(eval_prop(f, assignment(letter, universe)) for f in spec.sys_safety):
            monitor.report.sys_safety_violations += 1
        e_next = schedule.next(k + 1, letter, e_k)
        action, next_node = strategy.move(node, e_next)
        target = dfts.step(s_k, action)
        if target is None or strategy.nodes[next_node].position != (target, e_next):
            raise StrategyError(f"Strategy move {action} at {s_k} disagrees with the DFTS")

        w = waypoint_of_cell(world, target.cell)
        seg, outcome = run_symbolic_step(state, (w, world.catalog[target.formation]), world,
                                         qp_cfg, params, cfg.dt, cfg.T_ud,
                                         start_index=sample_index, step=k, dump_dir=dump_dir)
        log.samples.extend(seg.samples)
        sample_index += len(seg.samples)
        monitor.segment(seg)
        state = seg.final
        if outcome is not Outcome.REACHED:
            logger.error("Mission aborted at step %d: %s", k, outcome.value)
            monitor.report.aborted = outcome
            break
        log.symbolic_trace.append(TraceEntry(k, s_k, e_k, action))
        node = next_node
        monitor.report.steps_completed += 1

    log.final = state
    monitor.configuration(state.positions)
    monitor.report.goal_visit_indices = _goal_steps(spec, log.output_word, universe)
    report = monitor.report
    if report.violations:
        logger.warning("Mission finished with %d monitor violations", report.violations)
    logger.info("Mission: %d steps, min distance %.3f, goal visits %s", report.steps_completed,
                report.min_pairwise_distance, [len(v) for v in report.goal_visit_indices])
    return log, report


# Batch runs

@dataclass(frozen=True)
class MissionJob:
    """Everything a worker process needs to rebuild and run one mission."""

    world_path: Path
    spec_path: Path
    strategy_path: Path
    sim: SimConfig
    qp: QpConfig
    fxt: FxtParams
    falsify_prob: float = 0.0
    script: Optional[Mapping[int, Mapping[str, bool]]] = None


def _run_job(job: MissionJob) -> MonitorReport:
    world = load_world(job.world_path)
    spec = load_gr1(job.spec_path)
    dfts = build_dfts(world)
    strategy = load_strategy(job.strategy_path, dfts)
    if job.script is not None:
        schedule = scripted_schedule(spec, job.script)
    else:
        schedule = generate_schedule(spec, job.sim.seed, job.sim.max_symbolic_steps,
                                     job.falsify_prob)
    return run_mission(world, dfts, strategy, schedule, job.sim, job.qp, job.fxt)[1]


def run_missions(jobs: Sequence[MissionJob],
                 max_workers: Optional[int] = None) -> list[MonitorReport]:
    """Independent missions in worker processes, reports in job order."""
    if not jobs:
        return []
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(_run_job, jobs))


# Refinement

class RefineOutcome(str, Enum):
    REFINED = "refined"
    UNREALIZABLE = "unrealizable"


@dataclass
class RefinementReport:
    outcome: RefineOutcome
    rounds: int = 0
    probes: int = 0
    pruned: list[tuple[State, Action, str]] = field(default_factory=list)

    @property
    def realizable(self) -> bool:
        return self.outcome is RefineOutcome.REFINED

    def to_dict(self) -> dict[str, object]:
        return {"outcome": self.outcome.value, "realizable": self.realizable,
                "rounds": self.rounds, "probes": self.probes,
                "pruned": [{"source": {"cell": s.cell, "formation": s.formation},
                            "action": {"move": a.move, "switch": a.switch}, "reason": why}
                           for s, a, why in self.pruned]}


def _probe(world: GridWorld, dfts: Dfts, source: State, action: Action, qp_cfg: QpConfig,
           params: FxtParams, sim_cfg: SimConfig, budget: int,
           rng: np.random.Generator) -> Optional[Outcome]:
    """First failing outcome over the probes, None when all reach the target."""
    target = dfts.step(source, action)
    assert target is not None
    start = SwarmState.in_formation(world.cell_centre(source.cell),
                                    world.catalog[source.formation])
    w = waypoint_of_cell(world, target.cell)
    for b in range(budget):
        state = start
        if b:
            state = SwarmState(start.positions
                               + rng.uniform(-qp_cfg.d_F, qp_cfg.d_F, start.positions.shape))
        _, outcome = run_symbolic_step(state, (w, world.catalog[target.formation]), world,
                                       qp_cfg, params, sim_cfg.dt, sim_cfg.T_ud)
        if outcome is not Outcome.REACHED:
            return outcome
    return None


def refine_loop(world: GridWorld, spec: Gr1Spec, qp_cfg: QpConfig, params: FxtParams,
                sim_cfg: SimConfig, probe_budget: int = 1,
                rules: Optional[Sequence[FeasibilityRule]] = None
                ) -> tuple[Dfts, Optional[Strategy], RefinementReport]:
    """Synthesize, probe every transition the strategy uses, prune failures, repeat."""
    if probe_budget < 1:
        raise ValueError(f"probe_budget must be at least 1, got {probe_budget}")
    rng = np.random.default_rng(sim_cfg.seed)
    dfts = build_dfts(world, rules)
    report = RefinementReport(RefineOutcome.UNREALIZABLE)
    feasible: set[tuple[State, Action]] = set()

    while True:
        report.rounds += 1
        result = synthesize(dfts, spec)
        if result.strategy is None:
            logger.warning("Refinement round %d: unrealizable after %d prunes",
                           report.rounds, len(report.pruned))
            return dfts, None, report
        strategy = result.strategy

        used = sorted({(strategy.nodes[i].position[0], a)  # type: ignore[index]
                       for (i, _), (a, _) in strategy.transitions.items()},
                      key=lambda sa: (dfts.index(sa[0]), dfts.actions.index(sa[1])))
        failed = []
        for source, action in used:
            if (source, action) in feasible:
                continue
            report.probes += probe_budget
            outcome = _probe(world, dfts, source, action, qp_cfg, params, sim_cfg,
                             probe_budget, rng)
            if outcome is None:
                feasible.add((source, action))
            else:
                failed.append((source, action, outcome.value))

        if not failed:
            report.outcome = RefineOutcome.REFINED
            logger.info("Refinement done after %d rounds, %d transitions pruned",
                        report.rounds, len(report.pruned))
            return dfts, strategy, report
        for source, action, why in failed:
            dfts = prune_transition(dfts, source, action)
            report.pruned.append((source, action, why))

