from pathlib import Path

import pytest

from swarm_ltl import Dfts, Gr1Spec, GridWorld, build_dfts, load_gr1, load_world
from swarm_ltl.synthesis import GameStructure, SynthesisResult, build_game, synthesize

ROOT = Path(__file__).parent.parent
PATROL_WORLD = ROOT / "worlds" / "paper_5x5.json"
PATROL_SPEC = ROOT / "specs" / "paper_patrol.spec"
CROSSING_WORLD = ROOT / "worlds" / "obstacle_crossing.json"


@pytest.fixture(scope="session")
def patrol_world() -> GridWorld:
    return load_world(PATROL_WORLD)


@pytest.fixture(scope="session")
def patrol_spec() -> Gr1Spec:
    return load_gr1(PATROL_SPEC)


@pytest.fixture(scope="session")
def patrol_dfts(patrol_world: GridWorld) -> Dfts:
    return build_dfts(patrol_world)


@pytest.fixture(scope="session")
def patrol_game(patrol_dfts: Dfts, patrol_spec: Gr1Spec) -> GameStructure:
    return build_game(patrol_dfts, patrol_spec)


@pytest.fixture(scope="session")
def patrol_result(patrol_dfts: Dfts, patrol_spec: Gr1Spec) -> SynthesisResult:
    return synthesize(patrol_dfts, patrol_spec)


@pytest.fixture(scope="session")
def crossing_world() -> GridWorld:
    return load_world(CROSSING_WORLD)
