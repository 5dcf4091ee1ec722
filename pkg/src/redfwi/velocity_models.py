"""Synthetic layered / faulted velocity models and Gaussian-smoothed starting models.

The four families loosely mirror the structural classes of the OpenFWI "B"
sets at desk scale (70 x 70 cells of 10 m by default):

* ``FLAT_LAYERS``   horizontal layering
* ``CURVED_LAYERS`` folded layering (sum of 1-3 sinusoids)
* ``FLAT_FAULT``    horizontal layering cut by a straight dipping fault
* ``CURVED_FAULT``  folded layering cut by a curved (listric) fault
"""

from dataclasses import dataclass, field
from enum import Enum
import math

import numpy as np
from scipy import ndimage

from ._validation import check_positive
from .exceptions import ConfigurationError, ContractError

VELOCITY_LIMITS = (1000.0, 6000.0)
LAYER_COUNT_LIMITS = (1, 12)
MIN_GRID = 8


class Family(str, Enum):
    FLAT_LAYERS = "FlatLayers"
    CURVED_LAYERS = "CurvedLayers"
    FLAT_FAULT = "FlatFault"
    CURVED_FAULT = "CurvedFault"


@dataclass(frozen=True)
class VelocityModel:
    """A 2D grid of acoustic velocities in m/s, rows are depth.

    Parameters
    ----------
    values : ndarray of shape (ny, nx)
    dx : float
        Square cell size in meters.
    """

    values: np.ndarray
    dx: float = 10.0

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractError(f"velocity values must be 2D, got shape {v.shape}")
        if v.shape[0] < MIN_GRID or v.shape[1] < MIN_GRID:
            raise ContractError(f"velocity grid must be at least {MIN_GRID}x{MIN_GRID}, got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() <= 0:
            raise ContractError("velocities must be finite and strictly positive")
        if not (np.isfinite(self.dx) and self.dx > 0):
            raise ContractError(f"dx must be > 0, got {self.dx}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "dx", float(self.dx))

    @property
    def ny(self):
        return self.values.shape[0]

    @property
    def nx(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    @property
    def v_min(self):
        return float(self.values.min())

    @property
    def v_max(self):
        return float(self.values.max())

    def with_values(self, values):
        return VelocityModel(values, self.dx)

    def within(self, v_min, v_max):
        return bool(self.values.min() >= v_min and self.values.max() <= v_max)


@dataclass(frozen=True)
class FamilySpec:
    """Parameters of one synthetic model family.

    ``layer_velocities`` pins the per-layer velocities (top to bottom) instead of
    sampling them; its length then fixes the layer count.
    """

    family: Family = Family.FLAT_LAYERS
    layer_count_range: tuple = (3, 6)
    velocity_range: tuple = (1500.0, 4500.0)
    curvature_amplitude: float = 60.0
    fault_throw_range: tuple = (30.0, 120.0)
    seed: int = 0
    ny: int = 70
    nx: int = 70
    dx: float = 10.0
    layer_velocities: tuple = None
    min_thickness: int = 4

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        self.validate()

    def validate(self):
        lo, hi = self.layer_count_range
        if not (LAYER_COUNT_LIMITS[0] <= lo <= hi <= LAYER_COUNT_LIMITS[1]):
            raise ConfigurationError(
                f"layer_count_range {self.layer_count_range} must lie within {LAYER_COUNT_LIMITS}")
        vmin, vmax = self.velocity_range
        if not (VELOCITY_LIMITS[0] <= vmin <= vmax <= VELOCITY_LIMITS[1]) or vmin <= 0:
            raise ConfigurationError(
                f"velocity_range {self.velocity_range} must lie within {VELOCITY_LIMITS}")
        if self.curvature_amplitude < 0:
            raise ConfigurationError("curvature_amplitude must be >= 0")
        tlo, thi = self.fault_throw_range
        if not (0 <= tlo <= thi):
            raise ConfigurationError(f"invalid fault_throw_range {self.fault_throw_range}")
        if self.ny < MIN_GRID or self.nx < MIN_GRID:
            raise ConfigurationError(f"grid must be at least {MIN_GRID}x{MIN_GRID}")
        check_positive(self.dx, "dx")
        if self.min_thickness < 1:
            raise ConfigurationError("min_thickness must be >= 1")
        if self.layer_velocities is not None:
            lv = tuple(float(v) for v in self.layer_velocities)
            if not (LAYER_COUNT_LIMITS[0] <= len(lv) <= LAYER_COUNT_LIMITS[1]):
                raise ConfigurationError("layer_velocities length outside the allowed layer counts")
            if min(lv) < vmin or max(lv) > vmax:
                raise ConfigurationError("layer_velocities must lie within velocity_range")
            object.__setattr__(self, "layer_velocities", lv)
        n_max = self.layer_velocities and len(self.layer_velocities) or hi
        if n_max * self.min_thickness > self.ny:
            raise ConfigurationError(
                f"{n_max} layers of min thickness {self.min_thickness} do not fit in {self.ny} rows")


def _interface_depths(rng, n_layers, ny, min_thickness):
    """Top-of-layer row indices for layers 1..n-1, spaced at least min_thickness apart."""
    n_if = n_layers - 1
    if n_if == 0:
        return np.zeros(0)
    # stars-and-bars: distribute the slack rows uniformly over n_layers gaps
    slack = ny - n_layers * min_thickness
    cuts = np.sort(rng.integers(0, slack + 1, size=n_if))
    return cuts + min_thickness * np.arange(1, n_if + 1)


def _layer_velocities(rng, spec, n_layers):
    if spec.layer_velocities is not None:
        return np.asarray(spec.layer_velocities, dtype=np.float64)
    vmin, vmax = spec.velocity_range
    # increasing with depth, with at least a modest contrast between neighbours
    v = np.sort(rng.uniform(vmin, vmax, size=n_layers))
    return v


def _fold(rng, x, amplitude, width):
    """Sum of 1-3 random sinusoids with total amplitude <= ``amplitude``."""
    if amplitude <= 0:
        return np.zeros_like(x)
    n_terms = int(rng.integers(1, 4))
    weights = rng.dirichlet(np.ones(n_terms)) * amplitude * rng.uniform(0.5, 1.0)
    out = np.zeros_like(x)
    for w in weights:
        freq = rng.uniform(0.3, 2.0)
        phase = rng.uniform(0.0, 2.0 * math.pi)
        out += w * np.sin(2.0 * math.pi * freq * x / width + phase)
    return out


def _fault_side(rng, spec, depth, x, curved):
    """Boolean mask of the hanging wall for a fault crossing the whole section."""
    width = spec.nx * spec.dx
    height = spec.ny * spec.dx
    x_top = rng.uniform(0.2, 0.8) * width
    dip = math.radians(rng.uniform(50.0, 80.0)) * rng.choice([-1.0, 1.0])
    offset = depth / math.tan(dip)
    if curved:
        # listric: flattens with depth
        offset = offset - np.sign(dip) * rng.uniform(0.2, 0.5) * depth ** 2 / height
    return x >= x_top + offset


def _sample_one(rng, spec):
    lo, hi = spec.layer_count_range
    if spec.layer_velocities is not None:
        n_layers = len(spec.layer_velocities)
    else:
        n_layers = int(rng.integers(lo, hi + 1))
    tops = _interface_depths(rng, n_layers, spec.ny, spec.min_thickness) * spec.dx
    velocities = _layer_velocities(rng, spec, n_layers)

    depth = (np.arange(spec.ny)[:, None] + 0.5) * spec.dx
    x = (np.arange(spec.nx)[None, :] + 0.5) * spec.dx
    depth = np.broadcast_to(depth, (spec.ny, spec.nx))
    x = np.broadcast_to(x, (spec.ny, spec.nx))

    curved = spec.family in (Family.CURVED_LAYERS, Family.CURVED_FAULT)
    faulted = spec.family in (Family.FLAT_FAULT, Family.CURVED_FAULT)

    shift = np.zeros((spec.ny, spec.nx))
    if curved:
        shift = shift + _fold(rng, x[0], spec.curvature_amplitude, spec.nx * spec.dx)[None, :]
    if faulted:
        throw = rng.uniform(*spec.fault_throw_range)
        hanging = _fault_side(rng, spec, depth, x, curved=spec.family == Family.CURVED_FAULT)
        shift = shift + np.where(hanging, throw, 0.0)

    local = depth - shift
    layer = np.searchsorted(tops, local, side="right") if tops.size else np.zeros(local.shape, int)
    return velocities[layer]


def generate(spec, count=1):
    """Draw ``count`` models of one family; a pure function of ``(spec, count)``.

    Each model gets its own child seed so model ``k`` is the same whatever the
    total ``count``.
    """
    if not isinstance(spec, FamilySpec):
        raise ConfigurationError("spec must be a FamilySpec")
    if isinstance(count, bool) or int(count) != count or count < 1:
        raise ConfigurationError(f"count must be a positive integer, got {count!r}")
    children = np.random.SeedSequence(spec.seed).spawn(int(count))
    return [VelocityModel(_sample_one(np.random.default_rng(s), spec), spec.dx) for s in children]


def gaussian_kernel(sigma):
    """Normalized 1D Gaussian weights with radius ``ceil(4 sigma)``."""
    radius = int(math.ceil(4.0 * sigma))
    k = np.arange(-radius, radius + 1, dtype=np.float64)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def gaussian_smooth(model, sigma):
    """Separable Gaussian blur (in cells) with reflective boundaries.

    ``sigma = 0`` returns the model unchanged.
    """
    if not isinstance(model, VelocityModel):
        raise ContractError("gaussian_smooth expects a VelocityModel")
    if not np.isfinite(sigma) or sigma < 0:
        raise ConfigurationError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return model
    w = gaussian_kernel(sigma)
    out = ndimage.correlate1d(model.values, w, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, w, axis=1, mode="reflect")
    # rounding can push a constant region a few ulps past its value
    out = np.clip(out, model.values.min(), model.values.max())
    return model.with_values(out)


def family_specs(velocity_range=(1500.0, 4500.0), seed=0, **kwargs):
    """One FamilySpec per family, with distinct derived seeds."""
    seeds = np.random.SeedSequence(seed).generate_state(len(Family))
    return {
        fam: FamilySpec(family=fam, velocity_range=velocity_range, seed=int(s), **kwargs)
        for fam, s in zip(Family, seeds)
    }
