"""Noise (epsilon) predictors used as learned priors, and their DDPM training.

Two predictors share one interface:

* :class:`GaussianOraclePrior` -- the exact optimal epsilon-predictor for a
  Gaussian prior ``N(mean, variance * I)``; used to test everything downstream
  against closed forms.
* :class:`TinyDenoiser` -- a small time-conditioned U-Net trained with the
  epsilon-prediction loss on normalized velocity models.

All predictors work on *normalized* fields in [-1, 1] (see :class:`Normalizer`).
"""

from dataclasses import asdict, dataclass, field
import hashlib
import json
import os
import threading

import numpy as np

from . import formats
from ._validation import check_int, check_random_state
from .exceptions import ConfigurationError, ContractError, FormatError, TrainingError
from .nn import UNetSmall
from .optim import Adam, cosine_lr
from .schedule import NoiseSchedule, build_sigmoid_schedule
from .velocity_models import VelocityModel


@dataclass(frozen=True)
class Normalizer:
    """Affine map of velocities ``[v_lo, v_hi]`` onto ``[-1, 1]``."""

    v_lo: float = 1500.0
    v_hi: float = 4500.0

    def __post_init__(self):
        if not (np.isfinite(self.v_lo) and np.isfinite(self.v_hi) and self.v_lo < self.v_hi):
            raise ConfigurationError(f"need v_lo < v_hi, got ({self.v_lo}, {self.v_hi})")

    @property
    def half_range(self):
        """d(velocity) / d(normalized value)."""
        return 0.5 * (self.v_hi - self.v_lo)

    def normalize(self, v):
        return (np.asarray(v, dtype=np.float64) - self.v_lo) / self.half_range - 1.0

    def denormalize(self, x):
        return (np.asarray(x, dtype=np.float64) + 1.0) * self.half_range + self.v_lo


def _as_batch(z):
    z = np.asarray(z)
    if z.ndim == 2:
        return z[None], True
    if z.ndim == 3:
        return z, False
    raise ContractError(f"expected a field (H, W) or batch (B, H, W), got shape {z.shape}")


def _as_steps(t, batch):
    t = np.asarray(t)
    if t.ndim == 0:
        t = np.full(batch, int(t))
    if t.shape != (batch,):
        raise ContractError(f"steps shape {t.shape} does not match batch {batch}")
    return t.astype(np.int64)


class EpsilonPredictor:
    """Interface: ``predict(z, t)`` returns the predicted noise, same shape as ``z``.

    ``z`` is a normalized field (H, W) or batch (B, H, W); ``t`` an int step in
    ``1..T`` or an array of steps (B,).
    """

    schedule: NoiseSchedule
    normalizer: Normalizer

    def predict(self, z, t):
        raise NotImplementedError

    def __call__(self, z, t):
        return self.predict(z, t)


class GaussianOraclePrior(EpsilonPredictor):
    """Optimal epsilon-predictor for clean data ``x ~ N(mean, variance * I)``.

    Under ``z = sqrt(g) x + sqrt(1-g) eps`` the noisy marginal is
    ``N(sqrt(g) mean, (g variance + 1 - g) I)`` and
    ``eps_hat(z, t) = sqrt(1-g) (z - sqrt(g) mean) / (g variance + 1 - g)``.
    """

    def __init__(self, mean, variance=0.0, schedule=None, normalizer=None):
        self.mean = np.asarray(mean, dtype=np.float64)
        if self.mean.ndim != 2:
            raise ContractError("oracle mean must be a 2D field")
        if np.isnan(variance) or variance < 0:
            raise ConfigurationError("oracle variance must be >= 0 (inf gives a flat prior)")
        self.variance = float(variance)
        self.schedule = schedule if schedule is not None else build_sigmoid_schedule()
        self.normalizer = normalizer if normalizer is not None else Normalizer()

    def _gamma(self, t, batch):
        g = self.schedule.gamma_at(_as_steps(t, batch))
        return g[:, None, None]

    def predict(self, z, t):
        zb, single = _as_batch(z)
        if zb.shape[1:] != self.mean.shape:
            raise ContractError(f"field shape {zb.shape[1:]} != oracle mean {self.mean.shape}")
        g = self._gamma(t, zb.shape[0])
        if np.isinf(self.variance):
            out = np.zeros_like(zb, dtype=np.float64)
        else:
            out = np.sqrt(1.0 - g) * (zb - np.sqrt(g) * self.mean) / (g * self.variance + 1.0 - g)
        return out[0] if single else out

    def marginal_score(self, z, t):
        """Analytic ``grad log p_t(z)`` of the Gaussian noisy marginal."""
        zb, single = _as_batch(z)
        g = self._gamma(t, zb.shape[0])
        if np.isinf(self.variance):
            return np.zeros_like(z, dtype=np.float64)
        out = -(zb - np.sqrt(g) * self.mean) / (g * self.variance + 1.0 - g)
        return out[0] if single else out

    def posterior_mean(self, z, t):
        """Exact ``E[x | z]`` for the Gaussian prior (closed-form Gaussian conditioning)."""
        zb, single = _as_batch(z)
        g = self._gamma(t, zb.shape[0])
        if np.isinf(self.variance):
            out = zb / np.sqrt(g)
        else:
            gain = np.sqrt(g) * self.variance / (g * self.variance + 1.0 - g)
            out = self.mean + gain * (zb - np.sqrt(g) * self.mean)
        return out[0] if single else out


def predict_oracle(prior, z, t, sched=None):
    """Closed-form epsilon prediction of a Gaussian prior under schedule ``sched``."""
    if sched is not None and sched is not prior.schedule:
        prior = GaussianOraclePrior(prior.mean, prior.variance, sched, prior.normalizer)
    return prior.predict(z, t)


ARCHITECTURE = "unet-small-v1"


class TinyDenoiser(EpsilonPredictor):
    """Small time-conditioned U-Net epsilon-predictor (< 50k parameters at defaults)."""

    def __init__(self, schedule=None, normalizer=None, base_width=8, emb_dim=32,
                 mult=(1, 2), seed=0, dtype=np.float32):
        self.schedule = schedule if schedule is not None else build_sigmoid_schedule()
        self.normalizer = normalizer if normalizer is not None else Normalizer()
        self.base_width = int(base_width)
        self.emb_dim = int(emb_dim)
        self.mult = tuple(int(m) for m in mult)
        self.seed = seed
        self.net = UNetSmall(self.base_width, self.mult, self.emb_dim, rng=seed, dtype=np.dtype(dtype))
        # layers keep activation caches and scratch buffers, so calls are serialized
        self._lock = threading.Lock()

    @property
    def dtype(self):
        return self.net.dtype

    def n_parameters(self):
        return self.net.n_parameters()

    def named_parameters(self):
        return list(self.net.named_parameters())

    def forward(self, z, t):
        """Batched forward that keeps the caches needed by :meth:`backward`."""
        zb = np.asarray(z, dtype=self.dtype)[..., None]
        return self.net.forward(zb, _as_steps(t, zb.shape[0]))[..., 0]

    def backward(self, dout):
        self.net.backward(np.asarray(dout, dtype=self.dtype)[..., None])

    def predict(self, z, t):
        zb, single = _as_batch(z)
        with self._lock:
            out = self.forward(zb, t).astype(np.float64)
            self.net.zero_grad()
        return out[0] if single else out

    def astype(self, dtype):
        self.net.astype(np.dtype(dtype))
        return self

    def architecture(self):
        return {"name": ARCHITECTURE, "base_width": self.base_width,
                "emb_dim": self.emb_dim, "mult": list(self.mult)}

    def architecture_hash(self):
        layout = [(n, list(p.shape)) for n, p in self.net.named_parameters()]
        blob = json.dumps({"arch": self.architecture(), "layout": layout}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def save(self, path):
        """Write ``manifest.json`` and ``params.rdq`` (float32 GridFile) into ``path``."""
        os.makedirs(path, exist_ok=True)
        params = self.named_parameters()
        flat = np.concatenate([p.ravel().astype(np.float32) for _, p in params])
        formats.save_grid(os.path.join(path, "params.rdq"), flat)
        s = self.schedule
        manifest = {
            "format": "redfwi-denoiser/1",
            "architecture": self.architecture(),
            "architecture_hash": self.architecture_hash(),
            "normalization": {"v_lo": self.normalizer.v_lo, "v_hi": self.normalizer.v_hi},
            "schedule": {"T": s.T, "start": s.start, "end": s.end, "tau": s.tau,
                         "gamma_min": s.gamma_min},
            "parameters": [{"name": n, "shape": list(p.shape)} for n, p in params],
        }
        with open(os.path.join(path, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path, dtype=np.float32):
        with open(os.path.join(path, "manifest.json")) as fh:
            manifest = json.load(fh)
        arch = manifest["architecture"]
        if arch.get("name") != ARCHITECTURE:
            raise FormatError(f"unknown architecture {arch.get('name')!r}")
        sched = build_sigmoid_schedule(**manifest["schedule"])
        norm = Normalizer(**manifest["normalization"])
        model = cls(sched, norm, arch["base_width"], arch["emb_dim"], arch["mult"], dtype=dtype)
        if model.architecture_hash() != manifest["architecture_hash"]:
            raise FormatError("architecture hash mismatch")
        flat = formats.load_grid(os.path.join(path, "params.rdq"))
        offset = 0
        for name, p in model.named_parameters():
            n = p.size
            if offset + n > flat.size:
                raise FormatError("parameter file too short for manifest")
            p[...] = flat[offset:offset + n].reshape(p.shape)
            offset += n
        if offset != flat.size:
            raise FormatError("parameter file length does not match manifest")
        return model


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale DDPM training settings."""

    iterations: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    lr_min: float = None
    augment_flip: bool = True
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def __post_init__(self):
        check_int(self.iterations, "iterations", low=0)
        check_int(self.batch_size, "batch_size", low=1)
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be > 0")


def vp_corrupt_batch(x, t, eps, sched):
    g = sched.gamma_at(t)[:, None, None]
    return np.sqrt(g) * x + np.sqrt(1.0 - g) * eps


def ddpm_loss(pred, batch, sched, rng=None, t=None, eps=None, with_grad=True):
    """Epsilon-prediction loss ``mean_b ||eps_b - eps_hat_b||^2`` on a normalized batch.

    Draws ``t ~ U{1..T}`` and ``eps ~ N(0, I)`` from ``rng`` unless given.
    Returns ``(loss, grads)``; ``grads`` is a list aligned with
    ``pred.named_parameters()`` for a :class:`TinyDenoiser`, else None.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 3:
        raise ContractError("batch must have shape (B, H, W)")
    B = x.shape[0]
    rng = check_random_state(rng)
    if t is None:
        t = rng.integers(1, sched.T + 1, size=B)
    t = _as_steps(t, B)
    if eps is None:
        eps = rng.standard_normal(x.shape)
    z = vp_corrupt_batch(x, t, eps, sched)
    trainable = isinstance(pred, TinyDenoiser) and with_grad
    if trainable:
        eps_hat = pred.forward(z, t)
    else:
        eps_hat = pred.predict(z, t)
    diff = eps_hat.astype(np.float64) - eps
    loss = float(np.sum(diff * diff) / B)
    if not np.isfinite(loss):
        raise TrainingError("non-finite ddpm loss")
    if not trainable:
        return loss, None
    pred.net.zero_grad()
    pred.backward(2.0 * diff / B)
    return loss, [g.copy() for _, g in pred.net.named_grads()]


def _normalized_dataset(dataset, normalizer):
    arrs = [m.values if isinstance(m, VelocityModel) else np.asarray(m) for m in dataset]
    data = np.stack(arrs).astype(np.float64)
    if data.min() < normalizer.v_lo - 1e-9 or data.max() > normalizer.v_hi + 1e-9:
        raise ContractError("dataset velocities fall outside the normalization bounds")
    return normalizer.normalize(data)


def train_ddpm(model, dataset, cfg=None, callback=None):
    """Optimize ``model`` on ``dataset`` with Adam; returns ``(model, losses)``.

    Deterministic given ``cfg.seed``. Raises TrainingError on a non-finite loss
    or when the loss stays above ``divergence_factor`` x its initial level for
    ``divergence_patience`` consecutive iterations.
    """
    cfg = cfg or TrainConfig()
    if len(dataset) < 10:
        raise ContractError("need at least 10 training models")
    data = _normalized_dataset(dataset, model.normalizer).astype(model.dtype)
    rng = np.random.default_rng(cfg.seed)
    sched = model.schedule
    opt = Adam(model.named_parameters(), lr=cfg.learning_rate)
    losses = np.empty(cfg.iterations)
    ref = None
    above = 0
    for it in range(cfg.iterations):
        idx = rng.integers(0, data.shape[0], size=cfg.batch_size)
        x = data[idx]
        if cfg.augment_flip:
            flip = rng.random(cfg.batch_size) < 0.5
            x = np.where(flip[:, None, None], x[:, :, ::-1], x)
        try:
            loss, grads = ddpm_loss(model, x, sched, rng)
        except TrainingError as exc:
            raise TrainingError(f"iteration {it}: {exc}", losses[:it].copy()) from exc
        losses[it] = loss
        if ref is None and it >= min(9, cfg.iterations - 1):
            ref = float(np.mean(losses[:it + 1]))
        if ref is not None:
            above = above + 1 if loss > cfg.divergence_factor * ref else 0
            if above >= cfg.divergence_patience:
                raise TrainingError(f"training diverged at iteration {it}", losses[:it + 1].copy())
        lr = cfg.learning_rate
        if cfg.lr_min is not None:
            lr = cosine_lr(cfg.learning_rate, cfg.lr_min, it, cfg.iterations)
        opt.step(grads, lr)
        if callback is not None:
            callback(it, loss)
    return model, losses


def denoising_mse(pred, fields, t, rng, sched=None):
    """Per-element MSE of epsilon prediction on normalized ``fields`` at fixed step ``t``."""
    sched = sched or pred.schedule
    x = np.asarray(fields, dtype=np.float64)
    eps = check_random_state(rng).standard_normal(x.shape)
    steps = np.full(x.shape[0], int(t))
    z = vp_corrupt_batch(x, steps, eps, sched)
    return float(np.mean((pred.predict(z, steps) - eps) ** 2))


def sample_unconditional(model, sched=None, rng=None, shape=None):
    """Ancestral DDPM sampling from pure noise; returns velocities (m/s).

    Uses per-step ``alpha_t = gamma_t / gamma_{t-1}`` (``gamma_0 = 1``) and the
    posterior variance ``(1 - gamma_{t-1}) / (1 - gamma_t) * (1 - alpha_t)``.
    The final sample is clipped to [-1, 1] before de-normalization.
    """
    sched = sched or model.schedule
    rng = check_random_state(rng)
    if shape is None:
        mean = getattr(model, "mean", None)
        if mean is None:
            raise ContractError("shape is required for predictors without a reference field")
        shape = mean.shape
    gamma = np.concatenate([[1.0], sched.gamma])
    x = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        g_t, g_prev = gamma[t], gamma[t - 1]
        alpha = g_t / g_prev
        eps_hat = model.predict(x, t)
        x = (x - (1.0 - alpha) / np.sqrt(1.0 - g_t) * eps_hat) / np.sqrt(alpha)
        if t > 1:
            var = (1.0 - g_prev) / (1.0 - g_t) * (1.0 - alpha)
            x = x + np.sqrt(var) * rng.standard_normal(shape)
    return model.normalizer.denormalize(np.clip(x, -1.0, 1.0))
