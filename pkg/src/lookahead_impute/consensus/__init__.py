from .barycenter import (
    MixtureHandle,
    backward_kl_barycenter,
    forward_kl_barycenter,
    w2_barycenter_diag,
    w2_barycenter_fixed_point,
    w2_fixed_point_residual,
)
from .bias import (
    BiasSet,
    EuclideanBall,
    Polyhedron,
    Singleton1n,
    VTransformedL1Ball,
    bias_set_from_dict,
    bias_value,
)
from .solvers import (
    BACKWARD_KL,
    FALLBACK,
    LOCAL,
    MECHANISMS,
    OPTIMAL,
    RESTRICTED_WASSERSTEIN,
    WASSERSTEIN,
    ConsensusSolution,
    backward_kl_objective,
    delta_grid,
    delta_max,
    forward_kl_objective,
    restricted_wasserstein,
    solve,
    solve_backward_kl,
    solve_forward_kl,
    solve_wasserstein,
    wasserstein_gram,
)
from ..posterior import FORWARD_KL

__all__ = [name for name in dir() if not name.startswith("_")]
