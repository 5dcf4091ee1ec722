"""Denoising regularizer built on a diffusion epsilon-predictor.

Given a normalized iterate ``x``, draw a step ``t`` and noise ``eps``, corrupt
``x`` to ``z = sqrt(g) x + sqrt(1-g) eps`` and score the single-sample
estimate ``x . (eps_hat(z, t) - eps)``. Its gradient treats ``eps_hat`` as a
constant, so it is simply ``eps_hat - eps``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_random_state
from .exceptions import ContractError


@dataclass(frozen=True)
class RedSample:
    """One Monte Carlo draw of the regularizer.

    ``grad`` excludes the regularization weight; the caller applies it.
    """

    t: int
    epsilon: np.ndarray
    corrupted: np.ndarray
    eps_hat: np.ndarray
    r_hat: float
    grad: np.ndarray
    weight: float


def _field(x, name="x"):
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"{name} must be a 2D field, got shape {a.shape}")
    return a


def vp_corrupt(x, t, epsilon, sched):
    """``sqrt(gamma_t) x + sqrt(1 - gamma_t) epsilon``."""
    x = np.asarray(x, dtype=np.float64)
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if x.shape != epsilon.shape:
        raise ContractError(f"noise shape {epsilon.shape} != field shape {x.shape}")
    g = sched.gamma_at(t)
    return np.sqrt(g) * x + np.sqrt(1.0 - g) * epsilon


def tweedie_denoise(x, t, epsilon, pred, sched):
    """Posterior-mean estimate ``(z - sqrt(1-g) eps_hat(z, t)) / sqrt(g)`` of the corrupted ``x``."""
    z = vp_corrupt(x, t, epsilon, sched)
    return denoise_corrupted(z, t, pred, sched)


def denoise_corrupted(z, t, pred, sched):
    """Tweedie estimate from an already corrupted field ``z``."""
    g = sched.gamma_at(t)
    return (z - np.sqrt(1.0 - g) * pred.predict(z, t)) / np.sqrt(g)


def red_estimate(x, pred, sched, rng=None, use_weight=False, t=None, epsilon=None, eps_hat=None):
    """Draw ``(t, eps)`` and evaluate the single-sample regularizer at ``x``.

    Parameters
    ----------
    x : ndarray (H, W)
        Normalized iterate.
    use_weight : bool
        Multiply value and gradient by ``sqrt((1 - gamma_t) / gamma_t)``.
        Off by default: the unweighted form is the more stable one in practice.
    t, epsilon : optional
        Inject the step and noise instead of sampling them (tests, replay).
    eps_hat : ndarray, optional
        Inject a frozen prediction; ``pred`` is then not called.
    """
    x = _field(x)
    rng = check_random_state(rng)
    if t is None:
        t = int(rng.integers(1, sched.T + 1))
    if epsilon is None:
        epsilon = rng.standard_normal(x.shape)
    epsilon = _field(epsilon, "epsilon")
    z = vp_corrupt(x, t, epsilon, sched)
    if eps_hat is None:
        eps_hat = pred.predict(z, t)
    eps_hat = _field(eps_hat, "eps_hat")
    weight = float(sched.red_weight(t)) if use_weight else 1.0
    grad = eps_hat - epsilon
    if use_weight:
        grad = weight * grad
    r_hat = float(np.sum(x * grad))
    return RedSample(int(t), epsilon, z, eps_hat, r_hat, grad, weight)
