import math
from pathlib import Path

import numpy as np
import pytest

from swarm_ltl.abstraction import Dfts
from swarm_ltl.geometry import ControlInput, SwarmState, centroid
from swarm_ltl.qp import QpConfig, fxt_params
from swarm_ltl.sim import (EnvSchedule, MonitorReport, Outcome, SimConfig, _Monitor,
                           generate_schedule, integrate, is_reached, run_mission,
                           run_symbolic_step, scripted_schedule)
from swarm_ltl.spec import Gr1Spec
from swarm_ltl.synthesis import SynthesisResult
from swarm_ltl.world import GridWorld, waypoint_of_cell

CHARGED = frozenset({"battery"})
EMPTY: frozenset[str] = frozenset()
AWAY = frozenset({"freespace", "horizon"})
AT_HOME = frozenset({"home", "vertical"})


def test_sim_config_validation() -> None:
    assert SimConfig().T_ud / SimConfig().dt == pytest.approx(400)
    with pytest.raises(ValueError, match="too coarse"):
        SimConfig(dt=0.1)
    with pytest.raises(ValueError, match="dt must be positive"):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError, match="negative"):
        SimConfig(max_symbolic_steps=-1)


def test_integrate() -> None:
    state = SwarmState.from_points([(0, 0), (1, 1)])
    u = ControlInput(np.array([(1.0, 0.0), (0.0, -2.0)]))
    assert integrate(state, u, 0.5).positions.tolist() == [[0.5, 0.0], [1.0, 0.0]]
    with pytest.raises(ValueError, match="3 robots"):
        integrate(state, ControlInput.zeros(3), 0.1)


def test_scripted_schedule(patrol_spec: Gr1Spec) -> None:
    schedule = scripted_schedule(patrol_spec, {5: {"battery": False}, 7: {"battery": True}})
    assert schedule.initial(AT_HOME) == CHARGED
    assert schedule.next(3, AWAY | CHARGED, CHARGED) == CHARGED
    assert schedule.next(5, AWAY | CHARGED, CHARGED) == EMPTY
    assert schedule.next(6, AWAY, EMPTY) == EMPTY
    # The battery cannot recover away from home, whatever the script asks.
    assert schedule.next(7, AWAY, EMPTY) == EMPTY
    # ...and must recover at home.
    assert schedule.next(8, AT_HOME, EMPTY) == CHARGED


def test_script_validation(patrol_spec: Gr1Spec) -> None:
    with pytest.raises(ValueError, match="unknown variables"):
        scripted_schedule(patrol_spec, {1: {"rain": True}})
    with pytest.raises(ValueError, match="Negative step"):
        scripted_schedule(patrol_spec, {-1: {"battery": True}})


def test_generated_schedule(patrol_spec: Gr1Spec) -> None:
    a = generate_schedule(patrol_spec, seed=4, length=50, falsify_prob=0.3)
    b = generate_schedule(patrol_spec, seed=4, length=50, falsify_prob=0.3)
    assert a.proposals == b.proposals
    assert len(a.proposals) == 51
    assert EMPTY in a.proposals and CHARGED in a.proposals

    never = generate_schedule(patrol_spec, seed=4, length=10, falsify_prob=0.0)
    assert set(never.proposals) == {CHARGED}
    always = generate_schedule(patrol_spec, seed=4, length=10, falsify_prob=1.0)
    assert set(always.proposals) == {EMPTY}
    # Past the end of the proposals everything is true.
    assert always.next(40, AT_HOME | CHARGED, CHARGED) == CHARGED
    with pytest.raises(ValueError, match="falsify_prob"):
        generate_schedule(patrol_spec, seed=0, length=1, falsify_prob=1.5)


def test_closest_valuation_tie_break() -> None:
    spec = Gr1Spec(env_vars=("a", "b"))
    schedule = EnvSchedule(spec, "scripted")
    assert schedule._closest(frozenset({"a", "b"}), [EMPTY, frozenset({"a"}),
                                                     frozenset({"b"})]) == {"a"}
    with pytest.raises(ValueError, match="admit no valuation"):
        schedule._closest(EMPTY, [])


def test_is_reached(patrol_world: GridWorld) -> None:
    f2 = patrol_world.catalog["f2"]
    w = waypoint_of_cell(patrol_world, (0, 0))
    cfg = QpConfig()
    state = SwarmState.in_formation(w, f2)
    assert is_reached(state, w, f2, cfg)
    assert not is_reached(state.translate((0.2, 0.0)), w, f2, cfg)
    assert not is_reached(state, w, patrol_world.catalog["f1"], cfg)


def test_already_at_target(patrol_world: GridWorld) -> None:
    f2 = patrol_world.catalog["f2"]
    w = waypoint_of_cell(patrol_world, (0, 0))
    seg, outcome = run_symbolic_step(SwarmState.in_formation(w, f2), (w, f2), patrol_world,
                                     QpConfig(), fxt_params(), 0.01, 4.0)
    assert outcome is Outcome.REACHED
    assert seg.samples == []
    assert seg.elapsed == 0


def test_one_cell_within_deadline(patrol_world: GridWorld) -> None:
    f2 = patrol_world.catalog["f2"]
    start = SwarmState.in_formation(waypoint_of_cell(patrol_world, (0, 0)), f2)
    w = waypoint_of_cell(patrol_world, (0, 1))
    seg, outcome = run_symbolic_step(start, (w, f2), patrol_world, QpConfig(), fxt_params(),
                                     0.01, 4.0, start_index=100, step=3)
    assert outcome is Outcome.REACHED
    assert 0 < seg.elapsed <= 4.0
    assert seg.step == 3
    assert seg.samples[0].t == pytest.approx(1.0)
    assert seg.samples[1].t == pytest.approx(1.01)
    assert {s.target_cell for s in seg.samples} == {(0, 1)}
    assert all(s.qp_status == "optimal" for s in seg.samples)
    assert np.linalg.norm(centroid(seg.final) - w) <= 0.1


def test_infeasible_qp_is_dumped(patrol_world: GridWorld, tmp_path: Path) -> None:
    f2 = patrol_world.catalog["f2"]
    start = SwarmState.in_formation(waypoint_of_cell(patrol_world, (0, 0)), f2)
    w = waypoint_of_cell(patrol_world, (0, 1))
    seg, outcome = run_symbolic_step(start, (w, f2), patrol_world, QpConfig(u_max=0.01),
                                     fxt_params(), 0.01, 4.0, step=2, dump_dir=tmp_path)
    assert outcome is Outcome.QP_INFEASIBLE
    assert len(seg.samples) == 1
    assert seg.samples[0].qp_status == "infeasible"
    assert not seg.samples[0].inputs.any()
    assert [p.name for p in tmp_path.iterdir()] == ["qp_step0002_k0000.json"]


def test_deadline_exceeded(patrol_world: GridWorld) -> None:
    f2 = patrol_world.catalog["f2"]
    start = SwarmState.in_formation(waypoint_of_cell(patrol_world, (0, 0)), f2)
    w = waypoint_of_cell(patrol_world, (0, 1))
    # A deadline far below the settling time of the configured gains.
    seg, outcome = run_symbolic_step(start, (w, f2), patrol_world, QpConfig(), fxt_params(),
                                     0.01, 0.05)
    assert outcome is Outcome.DEADLINE_EXCEEDED
    assert len(seg.samples) == 6


def test_zero_step_mission(patrol_world: GridWorld, patrol_dfts: Dfts, patrol_spec: Gr1Spec,
                           patrol_result: SynthesisResult) -> None:
    assert patrol_result.strategy is not None
    log, report = run_mission(patrol_world, patrol_dfts, patrol_result.strategy,
                              scripted_schedule(patrol_spec, {}),
                              SimConfig(max_symbolic_steps=0))
    assert log.samples == []
    assert log.symbolic_trace == []
    assert log.final is not None
    assert np.allclose(centroid(log.final), (0.5, 0.5))
    assert report.passed
    assert report.steps_completed == 0
    assert report.goal_visit_indices == [[], []]
    assert report.min_pairwise_distance == pytest.approx(0.4)


def test_short_mission(patrol_world: GridWorld, patrol_dfts: Dfts, patrol_spec: Gr1Spec,
                       patrol_result: SynthesisResult) -> None:
    assert patrol_result.strategy is not None
    log, report = run_mission(patrol_world, patrol_dfts, patrol_result.strategy,
                              scripted_schedule(patrol_spec, {}),
                              SimConfig(max_symbolic_steps=3))
    assert report.aborted is None
    assert report.steps_completed == 3
    assert [e.step for e in log.symbolic_trace] == [0, 1, 2]
    assert log.symbolic_trace[0].state == patrol_dfts.initial
    assert log.output_word[0] == {"home", "vertical", "battery"}
    assert len(report.reach_times) == 3
    assert all(t <= 4.0 for t in report.reach_times)
    times = [s.t for s in log.samples]
    assert times == sorted(times)
    assert len(times) == len(set(times))
    assert report.min_pairwise_distance >= 0.3 - 1e-3
    assert report.passed


def test_monitor_report_dict() -> None:
    report = MonitorReport(collision_violations=2)
    data = report.to_dict()
    assert data["passed"] is False
    assert data["min_pairwise_distance"] is None
    assert report.violations == 2
    aborted = MonitorReport(aborted=Outcome.QP_INFEASIBLE)
    assert not aborted.passed
    assert aborted.to_dict()["aborted"] == "qp_infeasible"
    assert math.isinf(MonitorReport().min_obstacle_margin)


def test_monitor_counts_collisions_exactly(patrol_world: GridWorld) -> None:
    monitor = _Monitor(patrol_world, QpConfig(), SimConfig())
    monitor.configuration(np.array([[0.4, 0.5], [0.4 + 0.3 - 5e-4, 0.5]]))
    assert monitor.report.collision_violations == 1
    assert monitor.report.near_misses == 0
    monitor.configuration(np.array([[0.4, 0.5], [0.4 + 0.3 + 5e-4, 0.5]]))
    assert monitor.report.collision_violations == 1
    assert monitor.report.near_misses == 1
    assert not monitor.report.passed
    assert monitor.report.to_dict()["near_misses"] == 1


def test_monitor_counts_obstacle_entry_exactly(patrol_world: GridWorld) -> None:
    # Obstacle at (1.5, 1.5) with radius 0.5.
    monitor = _Monitor(patrol_world, QpConfig(), SimConfig())
    monitor.configuration(np.array([[1.5, 1.0 + 1e-4], [0.2, 0.2]]))
    assert monitor.report.obstacle_violations == 1
    monitor.configuration(np.array([[1.5, 1.0 - 1e-4], [0.2, 0.2]]))
    assert monitor.report.obstacle_violations == 1
    assert monitor.report.near_misses == 1


def test_trace_replays_against_strategy(patrol_world: GridWorld, patrol_dfts: Dfts,
                                        patrol_spec: Gr1Spec,
                                        patrol_result: SynthesisResult) -> None:
    strategy = patrol_result.strategy
    assert strategy is not None
    log, report = run_mission(patrol_world, patrol_dfts, strategy,
                              scripted_schedule(patrol_spec, {1: {"battery": False}}),
                              SimConfig(max_symbolic_steps=4))
    assert report.aborted is None
    trace = log.symbolic_trace
    assert len(trace) == len(log.output_word) == 4
    assert trace[1].env == EMPTY

    node = strategy.start((trace[0].state, trace[0].env))
    for k, entry in enumerate(trace):
        assert strategy.nodes[node].position == (entry.state, entry.env)
        assert log.output_word[k] == patrol_dfts.labels[entry.state] | entry.env
        target = patrol_dfts.step(entry.state, entry.action)
        assert target is not None
        if k + 1 < len(trace):
            action, node = strategy.move(node, trace[k + 1].env)
            assert action == entry.action
            assert target == trace[k + 1].state
    last = trace[-1]
    end = patrol_dfts.step(last.state, last.action)
    assert end is not None
    assert is_reached(log.final, waypoint_of_cell(patrol_world, end.cell),
                      patrol_world.catalog[end.formation], QpConfig())


def test_aborted_step_is_not_traced(patrol_world: GridWorld, patrol_dfts: Dfts,
                                    patrol_spec: Gr1Spec,
                                    patrol_result: SynthesisResult) -> None:
    assert patrol_result.strategy is not None
    log, report = run_mission(patrol_world, patrol_dfts, patrol_result.strategy,
                              scripted_schedule(patrol_spec, {}),
                              SimConfig(max_symbolic_steps=3), QpConfig(u_max=0.01))
    assert report.aborted in (Outcome.QP_INFEASIBLE, Outcome.DEADLINE_EXCEEDED)
    assert report.steps_completed == 0
    assert log.symbolic_trace == []
    assert len(log.output_word) == 1
    assert not report.passed
