"""scikit-learn style wrappers: a smoothing transformer, a trainable diffusion
prior, and the inversion itself.

Hyperparameters live in ``__init__`` (so ``get_params``/``set_params`` and
``clone`` work); learned state gets a trailing underscore.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ContractError
from .inversion import InversionConfig, Regularizer, invert
from .metrics import MetricsReport
from .prior import (
    GaussianOraclePrior,
    Normalizer,
    TinyDenoiser,
    TrainConfig,
    denoising_mse,
    sample_unconditional,
    train_ddpm,
)
from .schedule import build_sigmoid_schedule
from .velocity_models import VelocityModel, gaussian_smooth


def _as_models(X, dx=10.0):
    if isinstance(X, VelocityModel):
        return [X]
    if isinstance(X, np.ndarray):
        if X.ndim == 2:
            return [VelocityModel(X, dx)]
        if X.ndim == 3:
            return [VelocityModel(x, dx) for x in X]
        raise ContractError(f"expected (H, W) or (N, H, W) velocities, got {X.shape}")
    return [m if isinstance(m, VelocityModel) else VelocityModel(np.asarray(m), dx) for m in X]


class GaussianSmoother(BaseEstimator, TransformerMixin):
    """Stateless transformer producing smoothed starting models."""

    def __init__(self, sigma=10.0):
        self.sigma = sigma

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        models = [gaussian_smooth(m, self.sigma) for m in _as_models(X)]
        if isinstance(X, np.ndarray):
            out = np.stack([m.values for m in models])
            return out[0] if X.ndim == 2 else out
        return models


class DiffusionPrior(BaseEstimator):
    """Epsilon-predictor trained on velocity models with the DDPM objective.

    ``fit(X)`` takes a list of VelocityModel or an (N, H, W) array in m/s.
    """

    def __init__(self, iterations=2000, batch_size=16, learning_rate=1e-3, seed=0,
                 T=1000, schedule_start=-3.0, schedule_end=3.0, schedule_tau=1.0,
                 gamma_min=1e-4, v_lo=1500.0, v_hi=4500.0, base_width=8, emb_dim=32):
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.T = T
        self.schedule_start = schedule_start
        self.schedule_end = schedule_end
        self.schedule_tau = schedule_tau
        self.gamma_min = gamma_min
        self.v_lo = v_lo
        self.v_hi = v_hi
        self.base_width = base_width
        self.emb_dim = emb_dim

    def _schedule(self):
        return build_sigmoid_schedule(self.T, self.schedule_start, self.schedule_end,
                                      self.schedule_tau, self.gamma_min)

    def fit(self, X, y=None):
        models = _as_models(X)
        den = TinyDenoiser(self._schedule(), Normalizer(self.v_lo, self.v_hi),
                           self.base_width, self.emb_dim, seed=self.seed)
        cfg = TrainConfig(self.iterations, self.batch_size, self.learning_rate, self.seed)
        self.denoiser_, self.loss_curve_ = train_ddpm(den, models, cfg)
        self.field_shape_ = models[0].shape
        return self

    def predict(self, z, t):
        """Predicted noise for normalized field(s) ``z`` at step(s) ``t``."""
        check_is_fitted(self, "denoiser_")
        return self.denoiser_.predict(z, t)

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "denoiser_")
        rng = np.random.default_rng(random_state)
        return np.stack([sample_unconditional(self.denoiser_, rng=rng, shape=self.field_shape_)
                         for _ in range(n_samples)])

    def score(self, X, y=None):
        """Negative per-element denoising MSE at ``t = T / 2`` on held-out models."""
        check_is_fitted(self, "denoiser_")
        fields = self.denoiser_.normalizer.normalize(np.stack([m.values for m in _as_models(X)]))
        return -denoising_mse(self.denoiser_, fields, self.T // 2, self.seed)


class WaveformInversion(BaseEstimator):
    """Regularized FWI as an estimator.

    ``fit(observed, x0=...)`` inverts a SeismicSurvey starting from ``x0``;
    ``predict()`` returns the recovered velocities and ``score(truth)`` the SSIM.
    """

    def __init__(self, geometry=None, regularizer="none", lam=0.0, prior=None, K=300,
                 eta=0.03, eta_min=0.0, seed=0, use_weight=False, tv_eps=1e-3,
                 v_lo=1500.0, v_hi=4500.0, store_dtype="float32", n_jobs=None):
        self.geometry = geometry
        self.regularizer = regularizer
        self.lam = lam
        self.prior = prior
        self.K = K
        self.eta = eta
        self.eta_min = eta_min
        self.seed = seed
        self.use_weight = use_weight
        self.tv_eps = tv_eps
        self.v_lo = v_lo
        self.v_hi = v_hi
        self.store_dtype = store_dtype
        self.n_jobs = n_jobs

    def _config(self, pred):
        T = pred.schedule.T if pred is not None else 1000
        return InversionConfig(K=self.K, eta=self.eta, eta_min=self.eta_min, lam=self.lam,
                               regularizer=Regularizer(self.regularizer), T=T, seed=self.seed,
                               use_weight=self.use_weight, tv_eps=self.tv_eps, v_lo=self.v_lo,
                               v_hi=self.v_hi, store_dtype=self.store_dtype, n_jobs=self.n_jobs)

    def fit(self, observed, y=None, x0=None, truth=None):
        if self.geometry is None:
            raise ContractError("geometry must be set before fit")
        if x0 is None:
            raise ContractError("fit needs an initial model x0")
        pred = self.prior
        if isinstance(pred, DiffusionPrior):
            pred = pred.denoiser_
        self.trace_ = invert(observed, self.geometry, x0, pred, self._config(pred), truth=truth)
        self.model_ = self.trace_.final_model
        return self

    def predict(self, X=None):
        check_is_fitted(self, "model_")
        return self.model_.values

    def score(self, truth, y=None):
        check_is_fitted(self, "model_")
        truth = _as_models(truth)[0]
        return MetricsReport.compute(truth.values, self.model_.values).ssim
