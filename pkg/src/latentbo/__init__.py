"""Latent-space Bayesian optimization of KL-annealing trajectories.

High-dimensional per-epoch scale-factor schedules are compressed to a 2D
latent space by a small VAE; a GP surrogate with an acquisition function
then searches the feasible latent region, decoding candidates back to
full-length schedules for expensive black-box evaluation.
"""

from .acquisition import (
    AcquisitionConfig,
    AcquisitionKind,
    confidence_bound,
    expected_improvement,
    probability_of_improvement,
    select_next,
)
from .gp import GpFitConfig, GpHyperparams, GpModel, GpPosterior, fit, predict, rbf_kernel
from .loop import BoConfig, BoResult, BoState, FeasibleGrid, build_feasible_grid, run
from .objective import (
    ExternalSpec,
    ManifoldGrid,
    ObjectiveFn,
    SsimConfig,
    SyntheticSmoothnessSpec,
    SyntheticTargetSpec,
    classification_objective,
    evaluate,
    ssim,
    synthetic_target_objective,
)
from .trajectory import (
    Family,
    FamilySpec,
    Trajectory,
    TrajectorySet,
    gen_linear_cooldown,
    gen_periodic,
    gen_segmented_random,
    generate,
    is_feasible,
    rescale_set,
)
from .vae import LatentPoint, TvaeConfig, TvaeModel, decode, encode, init_model, train

__version__ = "0.1.0"
