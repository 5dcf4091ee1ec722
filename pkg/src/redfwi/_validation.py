"""Small input-validation helpers shared by the public functions and estimators."""

import numbers

import numpy as np

from .exceptions import ConfigurationError, ContractError


def check_field(x, name="field", min_shape=(1, 1), dtype=np.float64):
    """Return ``x`` as a finite 2D float array of at least ``min_shape``."""
    arr = np.asarray(x, dtype=dtype)
    if arr.ndim != 2:
        raise ContractError(f"{name} must be 2D, got shape {arr.shape}")
    if arr.shape[0] < min_shape[0] or arr.shape[1] < min_shape[1]:
        raise ContractError(f"{name} must be at least {min_shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ContractError(f"{name} contains non-finite values")
    return arr


def check_same_shape(a, b, names=("a", "b")):
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {names[0]}{a.shape} vs {names[1]}{b.shape}")


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ConfigurationError(f"{name} must be a finite real number, got {value!r}")
    if strict and value <= 0:
        raise ConfigurationError(f"{name} must be > 0, got {value}")
    if not strict and value < 0:
        raise ConfigurationError(f"{name} must be >= 0, got {value}")
    return value


def check_int(value, name, low=None, high=None):
    """Validate an integer in the closed range [low, high]."""
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ConfigurationError(f"{name} must be an integer, got {value!r}")
    if low is not None and value < low:
        raise ConfigurationError(f"{name} must be >= {low}, got {value}")
    if high is not None and value > high:
        raise ConfigurationError(f"{name} must be <= {high}, got {value}")
    return int(value)


def check_random_state(seed):
    """Turn ``seed`` into a ``numpy.random.Generator``.

    Accepts ``None``, an int, a ``SeedSequence`` or an existing ``Generator``
    (returned as-is so callers can share a stream).
    """
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
