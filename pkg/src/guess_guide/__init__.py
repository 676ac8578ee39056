"""Gradient-free diffusion posterior sampling over analytic priors.

The sampler alternates exact denoising with data-consistency solves and
re-noising, so it never differentiates through the denoiser. Gaussian and
Gaussian-mixture priors make every denoiser, posterior and Lipschitz
constant available in closed form.
"""

from .dcopt import OptimizeSpec, lambda_at, optimize, prox_data
from .errors import (
    AllocationError,
    ConfigError,
    DegenerateScheduleError,
    DivergenceError,
    GuessGuideError,
    InapplicableError,
    UnsupportedSolverError,
)
from .operators import (
    Chain,
    CircularBlur,
    ClipScale,
    Decimate,
    DenseLinear,
    ForwardTask,
    Mask,
    adjoint,
    apply,
    data_term,
    grad_data_term,
    synthesize_observation,
)
from .oracle import ExactPosterior, energy_distance, exact_posterior, moment_error, posterior_time_marginal, sample_exact
from .prior import GaussianPrior, GmmPrior, LinearCodec, decode, denoise, denoiser_jvp, encode, noise_prediction, score
from .sampler import Counters, GngConfig, RunReport, ddim_step, run_dps_baseline, run_gng
from .schedule import NoiseSchedule, TimestepGrid, WeightStrategy, allocate_grid, build_grid, eval_schedule, schedule_weights

__version__ = "0.1.0"
