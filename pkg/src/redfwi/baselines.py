"""First-order Tikhonov and anisotropic total-variation penalties.

Both use forward differences that stop at the last row/column (no wrap, no
padding) and are averaged over the number of grid points.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import ContractError


@dataclass(frozen=True)
class RegularizerValue:
    value: float
    gradient: np.ndarray


def _field(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or min(x.shape) < 2:
        raise ContractError(f"regularizers need a 2D field of at least 2x2, got {x.shape}")
    return x


def _diff_adjoint(dv, dh, shape):
    """Transpose of x -> (x[1:, :] - x[:-1, :], x[:, 1:] - x[:, :-1])."""
    g = np.zeros(shape)
    g[1:, :] += dv
    g[:-1, :] -= dv
    g[:, 1:] += dh
    g[:, :-1] -= dh
    return g


def tikhonov(x):
    x = _field(x)
    n = x.size
    dv = np.diff(x, axis=0)
    dh = np.diff(x, axis=1)
    value = (np.sum(dv * dv) + np.sum(dh * dh)) / n
    return RegularizerValue(float(value), 2.0 * _diff_adjoint(dv, dh, x.shape) / n)


def _abs_slope(d, eps):
    if eps == 0:
        return np.sign(d)
    return d / np.sqrt(d * d + eps * eps)


def total_variation(x, smoothing_eps=1e-3):
    """Exact anisotropic TV value; gradient of the ``sqrt(d^2 + eps^2)`` surrogate.

    ``smoothing_eps = 0`` gives the subgradient with ``sign(0) = 0``.
    """
    if not (np.isfinite(smoothing_eps) and smoothing_eps >= 0):
        raise ContractError("smoothing_eps must be >= 0")
    x = _field(x)
    n = x.size
    dv = np.diff(x, axis=0)
    dh = np.diff(x, axis=1)
    value = (np.sum(np.abs(dv)) + np.sum(np.abs(dh))) / n
    grad = _diff_adjoint(_abs_slope(dv, smoothing_eps), _abs_slope(dh, smoothing_eps), x.shape) / n
    return RegularizerValue(float(value), grad)


def smoothed_total_variation(x, smoothing_eps):
    """The differentiable surrogate whose gradient :func:`total_variation` returns."""
    x = _field(x)
    e2 = smoothing_eps * smoothing_eps
    dv = np.diff(x, axis=0)
    dh = np.diff(x, axis=1)
    return float((np.sum(np.sqrt(dv * dv + e2)) + np.sum(np.sqrt(dh * dh + e2))) / x.size)
