"""Area-delay optimization of parallel prefix adder graphs.

The package models prefix adders as grids of (msb, lsb) operator nodes,
wraps legal-graph construction in a fixed-horizon MDP, costs designs with
an analytical model or a pluggable external evaluator, and searches the
design space with a scalarized double-DQN, simulated annealing, and an
exhaustive enumerator, collecting results into area-delay Pareto fronts.
"""

__version__ = "0.1.0"

from .environment import (
    ADD,
    DELETE,
    Action,
    Transition,
    TransitionLog,
    action_space_size,
    encode,
    legal_actions,
    mask,
    reset,
    run_episode,
    step,
)
from .evaluation import (
    CostCurve,
    CostPoint,
    CurveCache,
    EvalConfig,
    EvaluationError,
    ScalarWeight,
    analytical_cost,
    cost_point,
    evaluate_batch,
    external_cost,
    interpolate,
    reward,
    w_optimal,
)
from .graphs import (
    IllegalGraphError,
    Legality,
    PrefixGraph,
    WidthError,
    brent_kung,
    interior_positions,
    kogge_stone,
    ripple_carry,
    sklansky,
    validate,
)
from .netlists import Netlist, emit, simulate
from .optimizers import (
    Enumeration,
    ReplayBuffer,
    SAConfig,
    TrainConfig,
    anneal,
    dqn_target,
    dqn_train,
    enumerate_designs,
)
from .pareto import DesignRecord, ParetoFront, compare, front
from .value_functions import (
    NetworkSpec,
    NeuralQ,
    Parameters,
    TabularQ,
    backward,
    forward,
    select_action,
)

__all__ = [name for name in dir() if not name.startswith("_")]
