"""Expert weights for multi-attribute group decision making.

Weights minimize the summed Euclidean distance between each expert's
stacked scores and the weighted consensus, solved with a self-contained
SLSQP implementation.
"""

from .model import (
    ScoreMatrix,
    ScorePanel,
    WeightVector,
    build_score_matrix,
    consensus_point,
    convexity_gap,
    distance_report,
    objective,
    objective_gradient,
    rank_diagnostics,
)
from .panel_io import load_table1, parse_constraints, parse_panel
from .slsqp import SolverConfig
from .weighting import LinearConstraint, solve_expert_weights

__version__ = "0.1.0"
