"""Multi-choice preferential Bayesian optimization.

The optimizer learns a latent utility surface from N-of-K comparative
choices (a GP prior with choice likelihoods fitted by Laplace
approximation) and proposes each round's candidates by bridging the
incumbent toward the expected-improvement maximizer inside a
gradient-derived subspace.  The bundled benchmark recovers hidden
affine+spline warps of 2-D fields from simulated preference feedback;
the service module hosts the same loop for human users over HTTP.
"""

from .acquisition import (
    BoxBounds,
    DbsConfig,
    PosteriorSurface,
    dbs_propose,
    expected_improvement,
    gradient_covariance,
    maximize_ei,
    spectral_gap_dim,
)
from .errors import BudgetExhausted, ContractError, NumericalError, ProtocolError
from .gp import GpPrior, KernelConfig, gp_predict, kernel_matrix, posterior_mean_gradient
from .likelihoods import (
    LatentPosterior,
    LikelihoodModel,
    PreferenceObservation,
    laplace_fit,
    multinomial_logit_loglik,
    pairwise_loglik,
    subset_loglik,
    subset_marginals,
)
from .objectives import (
    ChoiceNoiseModel,
    HiddenObjective,
    make_objective,
    make_warp_match_task,
    objective_eval,
    simulate_choice,
)
from .session import (
    SessionConfig,
    SessionState,
    run_autonomous,
    session_best,
    session_init,
    session_next_batch,
    session_record_choice,
)
from .warp import Field2D, WarpParams, affine_apply, theta_bounds, tps_apply, warp_compose

__version__ = "0.1.0"

__all__ = [
    "BoxBounds",
    "BudgetExhausted",
    "ChoiceNoiseModel",
    "ContractError",
    "DbsConfig",
    "Field2D",
    "GpPrior",
    "HiddenObjective",
    "KernelConfig",
    "LatentPosterior",
    "LikelihoodModel",
    "NumericalError",
    "PosteriorSurface",
    "PreferenceObservation",
    "ProtocolError",
    "SessionConfig",
    "SessionState",
    "WarpParams",
    "affine_apply",
    "dbs_propose",
    "expected_improvement",
    "gp_predict",
    "gradient_covariance",
    "kernel_matrix",
    "laplace_fit",
    "make_objective",
    "make_warp_match_task",
    "maximize_ei",
    "multinomial_logit_loglik",
    "objective_eval",
    "pairwise_loglik",
    "posterior_mean_gradient",
    "run_autonomous",
    "session_best",
    "session_init",
    "session_next_batch",
    "session_record_choice",
    "simulate_choice",
    "spectral_gap_dim",
    "subset_loglik",
    "subset_marginals",
    "theta_bounds",
    "tps_apply",
    "warp_compose",
    "__version__",
]
