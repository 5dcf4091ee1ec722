"""Forward modelling: explicit finite differences for the 2D acoustic wave equation.

The model is padded by an absorbing sponge on the left, right and bottom;
the top edge is a free (pressure-release) surface. Inside the sponge the
update carries a linear damping term whose per-step decay exponent grows by
``sponge_strength`` per cell of depth into the layer.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
import math
import threading

import numpy as np

from . import _kernels
from ._kernels import HALO
from ._validation import check_int, check_positive
from .exceptions import (
    ConfigurationError,
    ContractError,
    NumericalInstabilityError,
    ResourceError,
    StabilityError,
)
from .velocity_models import VelocityModel

_scratch = threading.local()


def scratch_terms(shape, dtype=np.float64):
    """Per-thread reusable buffer for stored forward terms.

    Re-touching a fresh multi-megabyte allocation every shot costs as much as
    the stepping itself, so each thread keeps one buffer per dtype and grows it
    on demand.
    """
    dtype = np.dtype(dtype)
    size = int(np.prod(shape))
    key = "buf_" + dtype.name
    buf = getattr(_scratch, key, None)
    if buf is None or buf.size < size:
        buf = np.empty(size, dtype=dtype)
        setattr(_scratch, key, buf)
    return buf[:size].reshape(shape)


#: Courant-number stability bounds of the leapfrog scheme, by spatial order.
CFL_BOUNDS = {2: 1.0 / math.sqrt(2.0), 4: math.sqrt(3.0 / 8.0)}


def ricker_wavelet(peak_frequency, nt, dt, amplitude=1.0):
    """Ricker wavelet delayed by ``t0 = 1.5 / f``, sampled at ``k * dt``.

    Raises ConfigurationError if ``f > 0.2 / dt`` (too few samples per period)
    or if the record is shorter than the delay.
    """
    check_positive(peak_frequency, "peak_frequency")
    check_positive(dt, "dt")
    nt = check_int(nt, "nt", low=1)
    if peak_frequency > 0.2 / dt:
        raise ConfigurationError(
            f"peak frequency {peak_frequency} Hz too high for dt={dt} s (max {0.2 / dt:g} Hz)")
    t0 = 1.5 / peak_frequency
    if nt * dt < t0:
        raise ConfigurationError(f"record length {nt * dt} s shorter than wavelet delay {t0} s")
    tau = np.arange(nt) * dt - t0
    arg = (math.pi * peak_frequency * tau) ** 2
    return amplitude * (1.0 - 2.0 * arg) * np.exp(-arg)


def cfl_check(model, dt, order=2, raise_on_violation=False):
    """Courant number ``v_max * dt / dx``.

    With ``raise_on_violation`` a StabilityError naming the largest stable dt is
    raised when the bound for the given stencil order is exceeded.
    """
    if order not in CFL_BOUNDS:
        raise ConfigurationError(f"stencil order must be 2 or 4, got {order}")
    if dt < 0:
        raise ConfigurationError("dt must be >= 0")
    courant = model.v_max * dt / model.dx
    bound = CFL_BOUNDS[order]
    if raise_on_violation and courant > bound:
        max_dt = bound * model.dx / model.v_max
        raise StabilityError(
            f"Courant number {courant:.4f} exceeds {bound:.4f} for order-{order} stencil; "
            f"need dt <= {max_dt:.6g} s",
            courant=courant, max_dt=max_dt)
    return courant


@dataclass(frozen=True)
class AcquisitionGeometry:
    """Source/receiver layout and time sampling.

    Positions are ``(row, col)`` indices into the unpadded model grid.
    ``wavelet`` overrides the Ricker source time function when given.
    """

    source_positions: tuple
    receiver_positions: tuple
    nt: int = 1000
    dt: float = 0.001
    wavelet_peak_frequency: float = 15.0
    source_amplitude: float = 1.0
    sponge_width: int = 20
    sponge_strength: float = 0.0053
    order: int = 2
    wavelet: np.ndarray = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        src = tuple((int(r), int(c)) for r, c in self.source_positions)
        rec = tuple((int(r), int(c)) for r, c in self.receiver_positions)
        if not src or not rec:
            raise ConfigurationError("need at least one source and one receiver")
        object.__setattr__(self, "source_positions", src)
        object.__setattr__(self, "receiver_positions", rec)
        check_int(self.nt, "nt", low=1)
        check_positive(self.dt, "dt")
        check_positive(self.wavelet_peak_frequency, "wavelet_peak_frequency")
        check_int(self.sponge_width, "sponge_width", low=0)
        check_positive(self.sponge_strength, "sponge_strength", strict=False)
        if self.order not in CFL_BOUNDS:
            raise ConfigurationError(f"order must be 2 or 4, got {self.order}")
        if self.wavelet is not None:
            w = np.array(self.wavelet, dtype=np.float64)
            if w.shape != (self.nt,):
                raise ConfigurationError(f"wavelet must have shape ({self.nt},)")
            w.setflags(write=False)
            object.__setattr__(self, "wavelet", w)

    @property
    def n_shots(self):
        return len(self.source_positions)

    @property
    def n_receivers(self):
        return len(self.receiver_positions)

    def source_wavelet(self):
        if self.wavelet is not None:
            return self.source_amplitude * self.wavelet
        return ricker_wavelet(self.wavelet_peak_frequency, self.nt, self.dt, self.source_amplitude)

    def check_fits(self, shape):
        ny, nx = shape
        for name, pos in (("source", self.source_positions), ("receiver", self.receiver_positions)):
            for r, c in pos:
                if not (0 <= r < ny and 0 <= c < nx):
                    raise ContractError(f"{name} position {(r, c)} outside grid {shape}")

    def replace(self, **changes):
        return replace(self, **changes)


def default_geometry(ny=70, nx=70, n_sources=5, nt=1000, dt=0.001, peak_frequency=15.0,
                     depth_index=1, **kwargs):
    """Equispaced surface sources and a receiver at every surface column."""
    cols = np.round(np.linspace(0, nx - 1, n_sources)).astype(int)
    sources = tuple((depth_index, int(c)) for c in cols)
    receivers = tuple((depth_index, c) for c in range(nx))
    geom = AcquisitionGeometry(sources, receivers, nt=nt, dt=dt,
                               wavelet_peak_frequency=peak_frequency, **kwargs)
    geom.check_fits((ny, nx))
    return geom


@dataclass(frozen=True)
class SeismicSurvey:
    """Receiver gathers of shape (shots, receivers, nt), normalized by ``norm_factor``."""

    data: np.ndarray
    trace_mask: np.ndarray = None
    norm_factor: float = 1.0

    def __post_init__(self):
        d = np.array(self.data, dtype=np.float64)
        if d.ndim != 3:
            raise ContractError(f"survey data must be (shots, receivers, nt), got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ContractError("survey data contains non-finite values")
        mask = np.ones(d.shape[:2], bool) if self.trace_mask is None else np.array(self.trace_mask, bool)
        if mask.shape != d.shape[:2]:
            raise ContractError(f"trace_mask shape {mask.shape} does not match data {d.shape[:2]}")
        if not np.all(mask.any(axis=1)):
            raise ContractError("every shot needs at least one unmasked trace")
        if not (np.isfinite(self.norm_factor) and self.norm_factor > 0):
            raise ContractError("norm_factor must be finite and > 0")
        d.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "trace_mask", mask)
        object.__setattr__(self, "norm_factor", float(self.norm_factor))

    @property
    def shape(self):
        return self.data.shape

    def replace(self, **changes):
        return replace(self, **changes)


class Propagator:
    """Padded coefficient fields for one (model, geometry) pair.

    Holds everything the forward and adjoint kernels need so that repeated
    shots reuse a single setup.
    """

    def __init__(self, model, geom, check_cfl=True, store_dtype=np.float64):
        if not isinstance(model, VelocityModel):
            raise ContractError("model must be a VelocityModel")
        geom.check_fits(model.shape)
        if check_cfl:
            cfl_check(model, geom.dt, geom.order, raise_on_violation=True)
        self.model = model
        self.geom = geom
        self.store_dtype = np.dtype(store_dtype)
        if self.store_dtype not in (np.float32, np.float64):
            raise ConfigurationError("store_dtype must be float32 or float64")
        nb = geom.sponge_width
        ny, nx = model.shape
        self.nb = nb
        self.padded_shape = (ny + nb, nx + 2 * nb)
        self.vel = np.pad(model.values, ((0, nb), (nb, nb)), mode="edge")
        self.c = (self.vel * geom.dt / model.dx) ** 2
        rows = np.arange(ny + nb)[:, None]
        cols = np.arange(nx + 2 * nb)[None, :]
        depth = np.maximum(np.maximum(nb - cols, cols - (nb + nx - 1)), rows - (ny - 1))
        beta = geom.sponge_strength * np.maximum(depth, 0).astype(np.float64)
        self.beta = np.ascontiguousarray(np.broadcast_to(beta, self.padded_shape))
        self.a1 = 1.0 / (1.0 + self.beta)
        self.a2 = (1.0 - self.beta) / (1.0 + self.beta)
        self.dx2 = model.dx ** 2
        self.wavelet = np.ascontiguousarray(geom.source_wavelet(), dtype=np.float64)
        rec = np.array(geom.receiver_positions, dtype=np.int64)
        self.rec_i = np.ascontiguousarray(rec[:, 0])
        self.rec_j = np.ascontiguousarray(rec[:, 1] + nb)
        # flat interior index feeding each padded cell (edge padding)
        ri = np.minimum(rows, ny - 1)
        ci = np.clip(cols - nb, 0, nx - 1)
        self._pad_index = np.broadcast_to(ri * nx + ci, self.padded_shape).ravel()

    def source_cell(self, shot):
        r, c = self.geom.source_positions[shot]
        return r, c + self.nb

    def unpad_adjoint(self, grad_padded):
        """Transpose of edge padding: fold padded-cell sensitivities back onto the model."""
        ny, nx = self.model.shape
        g = np.bincount(self._pad_index, weights=grad_padded.ravel(), minlength=ny * nx)
        return g.reshape(ny, nx)

    def _buffers(self, k=3):
        shape = (self.padded_shape[0] + 2 * HALO, self.padded_shape[1] + 2 * HALO)
        return [np.zeros(shape) for _ in range(k)]

    def storage_bytes(self, steps=None):
        steps = self.geom.nt if steps is None else steps
        return steps * self.padded_shape[0] * self.padded_shape[1] * self.store_dtype.itemsize

    def forward(self, shot, n0=0, n1=None, state=None, store=False):
        """Step a shot from ``n0`` to ``n1``; returns (gather, state, terms).

        ``state`` is ``(u_prev, u_cur)`` haloed buffers (zeros when None).
        ``terms`` has shape (n1 - n0, NY, NX) when ``store`` else None; it is a
        view of a per-thread scratch buffer, valid until the next stored forward
        on the same thread.
        """
        nt = self.geom.nt
        n1 = nt if n1 is None else n1
        bufs = self._buffers(3)
        if state is not None:
            bufs[0][...] = state[0]
            bufs[1][...] = state[1]
        rec_out = np.zeros((self.geom.n_receivers, nt))
        if store:
            terms = scratch_terms((n1 - n0,) + self.padded_shape, self.store_dtype)
        else:
            terms = np.empty((1, 1, 1), dtype=self.store_dtype)
        si, sj = self.source_cell(shot)
        u_prev, u_cur, _, status = _kernels.forward_steps(
            self.c, self.a1, self.a2, self.geom.order, self.dx2, si, sj, self.wavelet,
            self.rec_i, self.rec_j, n0, n1, bufs[0], bufs[1], bufs[2], rec_out, terms, store)
        if status:
            raise NumericalInstabilityError(
                f"wavefield overflow or NaN during stepping (shot {shot}, steps {n0}-{n1})")
        return rec_out, (u_prev, u_cur), (terms if store else None)


def _map_shots(fn, n_shots, n_jobs):
    if n_jobs is None or n_jobs == 1 or n_shots == 1:
        return [fn(s) for s in range(n_shots)]
    workers = n_shots if n_jobs == -1 else min(n_jobs, n_shots)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n_shots)))


def simulate_shot(model, geom, shot_index, propagator=None):
    """Raw (unnormalized) gather of shape (receivers, nt) for one source."""
    shot_index = check_int(shot_index, "shot_index", low=0, high=geom.n_shots - 1)
    prop = propagator or Propagator(model, geom)
    gather, _, _ = prop.forward(shot_index)
    return gather


def simulate_raw(model, geom, n_jobs=None):
    """All shots stacked as (shots, receivers, nt), before normalization."""
    prop = Propagator(model, geom)
    gathers = _map_shots(lambda s: prop.forward(s)[0], geom.n_shots, n_jobs)
    return np.stack(gathers)


def simulate_survey(model, geom, n_jobs=None):
    """Simulate every shot and normalize by the largest absolute amplitude."""
    data = simulate_raw(model, geom, n_jobs=n_jobs)
    peak = float(np.abs(data).max())
    norm = peak if peak > 0 else 1.0
    return SeismicSurvey(data / norm, None, norm)


def check_memory(prop, budget_bytes, checkpoint_interval):
    """Raise ResourceError when full wavefield storage would exceed the budget."""
    if checkpoint_interval is None and prop.storage_bytes() > budget_bytes:
        raise ResourceError(
            f"storing {prop.geom.nt} steps needs {prop.storage_bytes() / 2**20:.1f} MiB, "
            f"budget is {budget_bytes / 2**20:.1f} MiB; enable checkpointing")
