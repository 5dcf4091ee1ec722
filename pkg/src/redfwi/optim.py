"""Adam and cosine-annealed learning rates, shared by inversion and prior training."""

from dataclasses import dataclass, field
import math

import numpy as np

from .exceptions import OptimizationAborted


def cosine_lr(eta0, eta_min, k, K):
    """``eta_min + (eta0 - eta_min) * (1 + cos(pi k / K)) / 2`` for ``0 <= k < K``."""
    if not 0 <= k < K:
        raise ValueError(f"iteration {k} outside [0, {K})")
    return eta_min + 0.5 * (eta0 - eta_min) * (1.0 + math.cos(math.pi * k / K))


@dataclass
class AdamState:
    """First/second moment estimates and step counter for one parameter array."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(np.zeros_like(param), np.zeros_like(param), 0, beta1, beta2, eps)


def adam_step(state, grad, lr):
    """Return the Adam update (to be *added* to the parameters) and advance ``state``.

    Raises OptimizationAborted on a non-finite gradient.
    """
    if not np.all(np.isfinite(grad)):
        raise OptimizationAborted("non-finite gradient passed to Adam")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return -lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam:
    """Adam over a fixed, ordered collection of named parameter arrays (updated in place)."""

    def __init__(self, named_params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.states = [AdamState.like(p, beta1, beta2, eps) for _, p in self.params]

    def step(self, grads, lr=None):
        lr = self.lr if lr is None else lr
        for (_, p), g, st in zip(self.params, grads, self.states):
            p += adam_step(st, g, lr).astype(p.dtype, copy=False)
