"""Sigmoid signal-retention schedule for variance-preserving diffusion.

``gamma(t)`` is the fraction of signal variance kept after ``t`` corruption
steps; ``snr(t) = gamma / (1 - gamma)`` and the RED weight
``w(t) = sqrt((1 - gamma) / gamma) = 1 / sqrt(snr)``.
"""

import csv
from dataclasses import dataclass, field
import math

import numpy as np

from ._validation import check_int
from .exceptions import ConfigurationError, ContractError


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def sigmoid_gamma(T, start=-3.0, end=3.0, tau=1.0):
    """Unclamped table ``gamma_t`` for ``t = 1..T`` (index ``t - 1``)."""
    u = np.arange(1, T + 1, dtype=np.float64) / T
    v_start = _sigmoid(start / tau)
    v_end = _sigmoid(end / tau)
    s = (u * (end - start) + start) / tau
    return (v_end - _sigmoid(s)) / (v_end - v_start)


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable ``gamma`` table with derived SNR and RED weights.

    Build with :func:`build_sigmoid_schedule`; steps are 1-based.
    """

    T: int
    start: float
    end: float
    tau: float
    gamma_min: float
    gamma: np.ndarray = field(repr=False)

    def _index(self, t):
        t_arr = np.asarray(t)
        if not np.issubdtype(t_arr.dtype, np.integer):
            raise ContractError(f"step must be an integer, got {t!r}")
        if np.any(t_arr < 1) or np.any(t_arr > self.T):
            raise ContractError(f"step {t!r} outside 1..{self.T}")
        return t_arr - 1

    def gamma_at(self, t):
        return self.gamma[self._index(t)]

    def snr(self, t):
        g = self.gamma_at(t)
        return g / (1.0 - g)

    def red_weight(self, t):
        g = self.gamma_at(t)
        return np.sqrt((1.0 - g) / g)

    @property
    def steps(self):
        return np.arange(1, self.T + 1)

    def table(self):
        """Array of rows ``(t, gamma, snr, w)``."""
        t = self.steps
        g = self.gamma
        return np.column_stack([t, g, g / (1.0 - g), np.sqrt((1.0 - g) / g)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "gamma", "snr", "w"])
            for t, g, s, w in self.table():
                writer.writerow([int(t), repr(float(g)), repr(float(s)), repr(float(w))])


def build_sigmoid_schedule(T=1000, start=-3.0, end=3.0, tau=1.0, gamma_min=1e-4):
    """Sigmoid schedule clamped to ``[gamma_min, 1 - gamma_min]``.

    The unclamped table reaches exactly 0 at ``t = T``, which would make the
    Tweedie denoiser divide by zero; the clamp keeps every entry usable.
    """
    T = check_int(T, "T", low=2)
    for name, v in (("start", start), ("end", end), ("tau", tau), ("gamma_min", gamma_min)):
        if not math.isfinite(v):
            raise ConfigurationError(f"{name} must be finite")
    if not start < end:
        raise ConfigurationError(f"start ({start}) must be < end ({end})")
    if tau <= 0:
        raise ConfigurationError(f"tau must be > 0, got {tau}")
    if not 0.0 < gamma_min < 0.5:
        raise ConfigurationError(f"gamma_min must be in (0, 0.5), got {gamma_min}")
    gamma = np.clip(sigmoid_gamma(T, start, end, tau), gamma_min, 1.0 - gamma_min)
    if np.any(np.diff(gamma) >= 0):
        raise ConfigurationError(
            "clamped schedule is not strictly decreasing; lower gamma_min or tau")
    gamma.setflags(write=False)
    return NoiseSchedule(T, float(start), float(end), float(tau), float(gamma_min), gamma)


def snr(sched, t):
    """Signal-to-noise ratio ``gamma / (1 - gamma)`` at step ``t``."""
    return sched.snr(t)


def red_weight(sched, t):
    """RED weight ``sqrt((1 - gamma) / gamma)`` at step ``t``."""
    return sched.red_weight(t)
