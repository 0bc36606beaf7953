"""Anisotropic Gaussian random fields on a finite-element grid, their exact
denoisers, diffusion samplers driven by those denoisers, linear inverse problems
and two-sample / scoring metrics."""

from .denoise import (
    ExactGaussianDenoiser,
    FunctionDenoiser,
    GaussianFieldPrior,
    MixtureDenoiser,
    MixturePrior,
    exact_denoise,
    mixture_denoise,
    mse_slope,
    optimal_mse,
)
from .diffusion import (
    NoiseSchedule,
    ddim_sample,
    ddpm_sample,
    gaussian_output_variances,
    heun_sample,
    karras_schedule,
)
from .grf import (
    FieldModel,
    assemble_operators,
    build_mesh,
    constant_anisotropy,
    dense_covariance,
    isotropic_field,
    sample_prior,
    sample_prior_batch,
)
from .inverse import (
    MeasurementOperator,
    Observation,
    clustered_mask,
    conjugate_posterior,
    guided_sample,
    mh_mcmc_parameters,
    mixture_posterior_sample,
    uniform_mask,
)
from .metrics import crps, energy_score, max_sliced_wasserstein, wasserstein_1d

__version__ = "0.1.0"
