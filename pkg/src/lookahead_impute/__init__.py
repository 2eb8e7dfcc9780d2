"""Multiple imputation of return panels with controlled look-ahead bias.

Posteriors of the mean return are computed on panels truncated at
increasing times, fused into one consensus posterior whose mean may move
at most ``delta`` away from the training-only posterior, and used to
impute the missing training cells.
"""

__version__ = "0.1.0"

from .consensus import (
    BACKWARD_KL,
    RESTRICTED_WASSERSTEIN,
    WASSERSTEIN,
    ConsensusSolution,
    EuclideanBall,
    MixtureHandle,
    Polyhedron,
    Singleton1n,
    VTransformedL1Ball,
    delta_grid,
    delta_max,
    solve,
)
from .exceptions import *  # noqa: F401,F403
from .gaussian import EigenBasis, Gaussian
from .panel import MAR, MCAR, BlockMissing, MissingByValue, Panel, apply_mask, simulate_factor_panel
from .posterior import FORWARD_KL, PosteriorSet, generate_posteriors, make_schedule, project_to_basis
from .sampler import COND_EXPECT, FULL_BAYES, ImputationPlan, conditional_map, impute
from .evaluation import EvalReport, portfolio_weights, regret
from .config import ExperimentConfig
from .experiment import ecmse_sweep, run_sweep
from .estimator import LookAheadImputer
