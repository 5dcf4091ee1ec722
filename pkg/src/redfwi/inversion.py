"""Regularized full-waveform inversion: Adam with cosine annealing in normalized space.

Each iteration evaluates the data misfit and its adjoint gradient, adds the
weighted gradient of the chosen regularizer, takes one Adam step on the
normalized model and clamps it back into [-1, 1]. With the denoising
regularizer a fresh (t, eps) pair is drawn every iteration.
"""

from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import math

import numpy as np

from ._validation import check_int, check_random_state
from .adjoint import misfit_gradient
from .baselines import tikhonov, total_variation
from .exceptions import (
    ConfigurationError,
    ContractError,
    NumericalInstabilityError,
    OptimizationAborted,
)
from .formats import write_csv
from .metrics import mae, rmse, ssim
from .optim import AdamState, adam_step, cosine_lr
from .prior import Normalizer
from .red import red_estimate
from .velocity_models import VelocityModel
from .wave import SeismicSurvey

__all__ = [
    "Regularizer", "InversionConfig", "InversionTrace", "invert",
    "add_gaussian_noise", "drop_traces", "cosine_lr", "adam_step", "AdamState",
]


class Regularizer(str, Enum):
    NONE = "none"
    TIKHONOV = "tikhonov"
    TV = "tv"
    RED = "red"


@dataclass(frozen=True)
class InversionConfig:
    """Optimization settings.

    ``lam`` weighs the regularizer against the misfit (a sum over all
    samples), on the normalized model. ``v_lo``/``v_hi`` define the
    normalization when no prior supplies one.
    """

    K: int = 300
    eta: float = 0.03
    eta_min: float = 0.0
    lam: float = 0.0
    regularizer: Regularizer = Regularizer.NONE
    T: int = 1000
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    use_weight: bool = False
    tv_eps: float = 1e-3
    v_lo: float = 1500.0
    v_hi: float = 4500.0
    store_dtype: str = "float32"
    checkpoint_interval: int = None
    n_jobs: int = None

    def __post_init__(self):
        object.__setattr__(self, "regularizer", Regularizer(self.regularizer))
        check_int(self.K, "K", low=1)
        check_int(self.T, "T", low=2)
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise ConfigurationError("eta must be > 0")
        if not (math.isfinite(self.eta_min) and 0 <= self.eta_min <= self.eta):
            raise ConfigurationError("eta_min must lie in [0, eta]")
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ConfigurationError("lam must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps_stab > 0):
            raise ConfigurationError("invalid Adam parameters")
        if self.store_dtype not in ("float32", "float64"):
            raise ConfigurationError("store_dtype must be 'float32' or 'float64'")

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["regularizer"] = self.regularizer.value
        return d


@dataclass
class InversionTrace:
    """Per-iteration record. ``loss``/``misfit``/``reg`` are evaluated at the
    iterate entering iteration k; ``rmse``/``mae``/``ssim`` (benchmark mode
    only) at the iterate leaving it, so the last entry scores ``final_model``.
    ``reg`` already includes the weight ``lam``.
    """

    loss: list = field(default_factory=list)
    misfit: list = field(default_factory=list)
    reg: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    rmse: list = None
    mae: list = None
    ssim: list = None
    t: list = field(default_factory=list)
    final_model: VelocityModel = None

    def __len__(self):
        return len(self.loss)

    @property
    def has_metrics(self):
        return self.rmse is not None

    def as_arrays(self):
        keys = ["loss", "misfit", "reg", "lr"] + (["rmse", "mae", "ssim"] if self.has_metrics else [])
        return {k: np.asarray(getattr(self, k), dtype=np.float64) for k in keys}

    def to_csv(self, path):
        header = ["iteration", "loss", "misfit", "reg", "lr"]
        cols = [self.loss, self.misfit, self.reg, self.lr]
        if self.has_metrics:
            header += ["rmse", "mae", "ssim"]
            cols += [self.rmse, self.mae, self.ssim]
        rows = [[k] + [float(c[k]) for c in cols] for k in range(len(self))]
        write_csv(path, header, rows)


def _check_start(x0, norm):
    if not isinstance(x0, VelocityModel):
        raise ContractError("x0 must be a VelocityModel")
    if not x0.within(norm.v_lo, norm.v_hi):
        raise ContractError(
            f"initial model spans [{x0.v_min}, {x0.v_max}], outside [{norm.v_lo}, {norm.v_hi}]")


def invert(observed, geom, x0, pred=None, cfg=None, truth=None, callback=None):
    """Run ``cfg.K`` iterations from ``x0``; returns an :class:`InversionTrace`.

    ``truth`` (a VelocityModel) switches on per-iteration RMSE/MAE/SSIM; it is
    never used by the optimization. A non-finite loss or gradient, or a
    wavefield blow-up, raises OptimizationAborted carrying the trace so far.
    """
    cfg = cfg or InversionConfig()
    if not isinstance(observed, SeismicSurvey):
        raise ContractError("observed must be a SeismicSurvey")
    use_red = cfg.regularizer is Regularizer.RED
    if use_red:
        if pred is None:
            raise ConfigurationError("the RED regularizer needs an epsilon-predictor")
        if pred.schedule.T != cfg.T:
            raise ConfigurationError(f"config T={cfg.T} but the prior was built for T={pred.schedule.T}")
        norm = pred.normalizer
    else:
        norm = Normalizer(cfg.v_lo, cfg.v_hi)
    _check_start(x0, norm)
    if truth is not None and truth.shape != x0.shape:
        raise ContractError("truth and x0 shapes differ")

    red_rng = np.random.default_rng(cfg.seed)
    x = norm.normalize(x0.values)
    state = AdamState.like(x, cfg.beta1, cfg.beta2, cfg.eps_stab)
    trace = InversionTrace()
    if truth is not None:
        trace.rmse, trace.mae, trace.ssim = [], [], []
        L = float(truth.v_max - truth.v_min) or None
    store = np.dtype(cfg.store_dtype)

    for k in range(cfg.K):
        lr = cosine_lr(cfg.eta, cfg.eta_min, k, cfg.K)
        model = x0.with_values(norm.denormalize(x))
        try:
            rep = misfit_gradient(model, geom, observed, cfg.checkpoint_interval,
                                  n_jobs=cfg.n_jobs, store_dtype=store)
        except NumericalInstabilityError as exc:
            trace.final_model = model
            raise OptimizationAborted(f"iteration {k}: {exc}", trace) from exc
        grad = rep.gradient * norm.half_range
        reg_value, t_k = 0.0, 0
        if cfg.regularizer is Regularizer.TIKHONOV:
            r = tikhonov(x)
            reg_value, reg_grad = r.value, r.gradient
        elif cfg.regularizer is Regularizer.TV:
            r = total_variation(x, cfg.tv_eps)
            reg_value, reg_grad = r.value, r.gradient
        elif use_red:
            s = red_estimate(x, pred, pred.schedule, red_rng, use_weight=cfg.use_weight)
            reg_value, reg_grad, t_k = s.r_hat, s.grad, s.t
        if cfg.regularizer is not Regularizer.NONE:
            grad = grad + cfg.lam * reg_grad
            reg_value = cfg.lam * reg_value
        loss = rep.value + reg_value
        trace.loss.append(loss)
        trace.misfit.append(rep.value)
        trace.reg.append(reg_value)
        trace.lr.append(lr)
        trace.t.append(t_k)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            trace.final_model = model
            raise OptimizationAborted(f"non-finite loss or gradient at iteration {k}", trace)
        x = np.clip(x + adam_step(state, grad, lr), -1.0, 1.0)
        if truth is not None:
            v = norm.denormalize(x)
            trace.rmse.append(rmse(truth.values, v))
            trace.mae.append(mae(truth.values, v))
            trace.ssim.append(ssim(truth.values, v, L))
        if callback is not None:
            callback(k, trace)
    trace.final_model = x0.with_values(norm.denormalize(x))
    return trace


def add_gaussian_noise(s, std, rng=None):
    """Add i.i.d. ``N(0, std^2)`` noise to the normalized amplitudes; mask kept."""
    if not (math.isfinite(std) and std >= 0):
        raise ContractError("noise std must be >= 0")
    if std == 0:
        return s.replace(data=s.data.copy())
    rng = check_random_state(rng)
    return s.replace(data=s.data + std * rng.standard_normal(s.data.shape))


def drop_traces(s, count, rng=None):
    """Mask out ``count`` distinct receivers (the same ones in every shot)."""
    n_rec = s.data.shape[1]
    count = check_int(count, "count", low=0)
    if count >= n_rec:
        raise ContractError(f"cannot drop {count} of {n_rec} receivers")
    rng = check_random_state(rng)
    mask = s.trace_mask.copy()
    if count:
        mask[:, rng.choice(n_rec, size=count, replace=False)] = False
    return s.replace(trace_mask=mask)
