"""Search for automaton task specifications that explain expert
demonstrations in stochastic grid worlds.

The package couples a maximum-causal-entropy planner over MDP x DFA
products with exact DFA identification from labeled examples and a
simulated-annealing loop whose proposals are guided by the gradient of the
demonstration surprisal in the prefix tree's pivot values.
"""

__version__ = "0.1.0"

from .mdp import (
    GridSpec,
    Mdp,
    Path,
    SINK,
    build_gridworld,
    enumerate_complete_paths,
    trace_of,
    validate_path,
)
from .task import (
    BOTTOM,
    Dfa,
    Incremental,
    LabeledExample,
    MONOLITHIC,
    TaskSpec,
    accepts,
    consistent,
    language_subset,
    minimize,
    path_in_task,
)
from .planner import (
    MaxEntPolicy,
    PlannerContext,
    calibrate_rationality,
    demo_surprisal,
    sample_rollout,
    satisfaction_prob,
    soft_values,
    task_surprisal,
)
from .prefix_tree import (
    PrefixTree,
    build_tree,
    derived_values,
    pivot_surprisal,
    pivot_values_of_task,
    surprisal_gradient,
)
from .identify import IdentifyQuery, enumerate_consistent, sample_candidate
from .sgs import SgsConfig, feasibility_check, pivot_distribution, sgs_sample
from .search import (
    DissConfig,
    RunTrace,
    SaState,
    energy,
    run_diss,
    run_enumeration_baseline,
    sa_accept,
)
