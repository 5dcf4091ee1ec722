"""Full-waveform inversion with a diffusion-model denoising regularizer."""

from .exceptions import (
    ConfigurationError,
    ContractError,
    FormatError,
    NumericalInstabilityError,
    OptimizationAborted,
    RedFWIError,
    ResourceError,
    StabilityError,
    TrainingError,
)
from .velocity_models import Family, FamilySpec, VelocityModel, family_specs, gaussian_smooth, generate
from .wave import AcquisitionGeometry, SeismicSurvey, default_geometry, simulate_survey
from .adjoint import misfit, misfit_gradient
from .schedule import NoiseSchedule, build_sigmoid_schedule
from .prior import GaussianOraclePrior, Normalizer, TinyDenoiser, TrainConfig, train_ddpm
from .red import red_estimate, tweedie_denoise
from .baselines import tikhonov, total_variation
from .metrics import MetricsReport, mae, rmse, ssim
from .inversion import InversionConfig, InversionTrace, Regularizer, add_gaussian_noise, drop_traces, invert
from .estimators import DiffusionPrior, GaussianSmoother, WaveformInversion

__version__ = "0.1.0"
