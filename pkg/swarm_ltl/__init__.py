from .abstraction import Action, Dfts, State, build_dfts, prune_transition
from .geometry import ControlInput, Formation, SwarmState, centroid, displacement
from .qp import FxtParams, QpConfig, build_qp, fxt_params, solve_qp
from .sim import SimConfig, refine_loop, run_mission, run_symbolic_step
from .spec import Gr1Spec, load_gr1, parse_gr1
from .synthesis import Strategy, build_game, solve_gr1, synthesize, verify_strategy
from .world import GridWorld, load_world

__all__ = ("Action", "ControlInput", "Dfts", "Formation", "FxtParams", "Gr1Spec", "GridWorld",
           "QpConfig", "SimConfig", "State", "Strategy", "SwarmState", "build_dfts",
           "build_game", "build_qp", "centroid", "displacement", "fxt_params", "load_gr1",
           "load_world", "parse_gr1", "prune_transition", "refine_loop", "run_mission",
           "run_symbolic_step", "solve_gr1", "solve_qp", "synthesize", "verify_strategy")
__version__ = "0.1.0"
