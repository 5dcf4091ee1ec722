"""Reconstruction quality: RMSE, MAE and windowed SSIM."""

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

from .exceptions import ContractError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(truth, recon):
    a = np.asarray(truth, dtype=np.float64)
    b = np.asarray(recon, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ContractError("empty fields")
    return a, b


def rmse(truth, recon):
    a, b = _pair(truth, recon)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def mae(truth, recon):
    a, b = _pair(truth, recon)
    return float(np.mean(np.abs(a - b)))


def ssim_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-r * r / (2.0 * sigma * sigma))
    w = np.outer(w, w)
    return w / w.sum()


def ssim_map(truth, recon, dynamic_range=None):
    """Per-pixel SSIM over every position where the window fits entirely."""
    a, b = _pair(truth, recon)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ContractError(f"SSIM needs 2D fields of at least {SSIM_WINDOW}x{SSIM_WINDOW}")
    L = float(a.max() - a.min()) if dynamic_range is None else float(dynamic_range)
    if not (np.isfinite(L) and L > 0):
        raise ContractError(f"degenerate dynamic range {L}")
    c1 = (SSIM_K1 * L) ** 2
    c2 = (SSIM_K2 * L) ** 2
    w = ssim_window()

    def filt(f):
        return convolve2d(f, w, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(truth, recon, dynamic_range=None):
    """Mean SSIM, Gaussian 11x11 window (sigma 1.5).

    ``dynamic_range`` defaults to ``max - min`` of ``truth``.
    """
    a, b = _pair(truth, recon)
    if np.array_equal(a, b):
        # the moment formula gives 1 up to rounding; identical inputs are exactly 1
        ssim_map(a, b, dynamic_range)
        return 1.0
    return float(min(np.mean(ssim_map(a, b, dynamic_range)), 1.0))


@dataclass(frozen=True)
class MetricsReport:
    rmse: float
    mae: float
    ssim: float

    @classmethod
    def compute(cls, truth, recon, dynamic_range=None):
        return cls(rmse(truth, recon), mae(truth, recon), ssim(truth, recon, dynamic_range))

    def as_dict(self):
        return {"rmse": self.rmse, "mae": self.mae, "ssim": self.ssim}
