"""Integer optimal control with total-variation regularization.

Exact dynamic-programming subproblem solvers inside proximal-gradient and
trust-region outer loops, two benchmark problems, and optimality audits.
"""

from .control import (
    GridControl,
    LevelSet,
    SwitchingSignature,
    UniformGrid,
    distances,
    full_representation,
    minimal_representation,
    prolong,
    random_switching_control,
    tv_discrete,
)
from .dp import ProxInstance, TrInstance, brute_force_oracle, solve_prox_subproblem, solve_tr_subproblem
from .problems import LotkaVolterra, LvParams, SignalReconstruction, make_problem
from .solvers import PgConfig, TrConfig, proximal_gradient, refine_continuation, trust_region

__version__ = "0.1.0"
