from .core import GlobalParams, NewellParams, PlatoonState, VehicleParams, VehicleState, step_cav
from .errors import PlatoonError
from .feasibility import FeasibleInterval, feasible_interval
from .horizon import HorizonBounds, ScenarioE1, horizon_bounds, theorem1_bounds
from .maneuvers import ControlSequence, blended_profile, plan, platoon_bounds, strategy_s1
from .mpc import MpcProblem, MpcSettings, mpc_step, receding_horizon_run
from .qp import QuadraticProgram, solve_qp

__all__ = [
    'GlobalParams',
    'NewellParams',
    'PlatoonState',
    'VehicleParams',
    'VehicleState',
    'step_cav',
    'PlatoonError',
    'FeasibleInterval',
    'feasible_interval',
    'HorizonBounds',
    'ScenarioE1',
    'horizon_bounds',
    'theorem1_bounds',
    'ControlSequence',
    'blended_profile',
    'plan',
    'platoon_bounds',
    'strategy_s1',
    'MpcProblem',
    'MpcSettings',
    'mpc_step',
    'receding_horizon_run',
    'QuadraticProgram',
    'solve_qp',
]
