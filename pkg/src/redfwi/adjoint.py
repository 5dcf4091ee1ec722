"""Data misfit and its exact gradient through the discrete adjoint of the stepping scheme.

Everything here differentiates the *discrete* forward map (sponge included),
so finite differences of :func:`misfit` agree with :func:`misfit_gradient`
up to truncation and round-off only.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .exceptions import ContractError
from .wave import Propagator, SeismicSurvey, _map_shots, check_memory

DEFAULT_MEMORY_BUDGET = 1 << 30


@dataclass(frozen=True)
class MisfitReport:
    """Misfit value and its gradient with respect to velocity (per m/s)."""

    value: float
    gradient: np.ndarray


def _check_observed(observed, geom):
    if not isinstance(observed, SeismicSurvey):
        raise ContractError("observed must be a SeismicSurvey")
    expected = (geom.n_shots, geom.n_receivers, geom.nt)
    if observed.data.shape != expected:
        raise ContractError(f"observed data shape {observed.data.shape} does not match geometry {expected}")


def _residual(gather, observed, shot):
    """Masked residual (simulated - observed) for one shot, in normalized units."""
    sim = gather / observed.norm_factor
    mask = observed.trace_mask[shot][:, None]
    return np.where(mask, sim - observed.data[shot], 0.0)


def misfit(model, geom, observed, n_jobs=None):
    """Sum of squared masked residuals over shots, receivers and time samples."""
    _check_observed(observed, geom)
    prop = Propagator(model, geom)

    def one(shot):
        r = _residual(prop.forward(shot)[0], observed, shot)
        return float(np.sum(r * r))

    return float(sum(_map_shots(one, geom.n_shots, n_jobs)))


def _backprop_shot(prop, shot, adjoint_source, checkpoint_interval=None, forward=None):
    """d<adjoint_source, gather>/dc on the padded grid for one shot.

    ``adjoint_source`` is a (receivers, nt) array; ``forward`` optionally
    supplies precomputed stored terms (shape (nt, NY, NX)).
    """
    nt = prop.geom.nt
    lam1, lam2, lam_new, work1, work_new = prop._buffers(5)
    grad_c = np.zeros(prop.padded_shape)
    adj = np.ascontiguousarray(adjoint_source, dtype=np.float64)
    args = (prop.c, prop.a1, prop.a2, prop.geom.order, prop.rec_i, prop.rec_j, adj)
    if checkpoint_interval is None:
        terms = forward if forward is not None else prop.forward(shot, store=True)[2]
        _kernels.adjoint_steps(*args, nt, 0, lam1, lam2, lam_new, work1, work_new, terms, 0, grad_c)
        return grad_c

    k = int(checkpoint_interval)
    if k < 1:
        raise ContractError("checkpoint_interval must be >= 1")
    starts = list(range(0, nt, k))
    snapshots = []
    state = None
    for n0 in starts:
        n1 = min(n0 + k, nt)
        snapshots.append(None if state is None else (state[0].copy(), state[1].copy()))
        _, state, _ = prop.forward(shot, n0, n1, state)
    for n0, snap in zip(reversed(starts), reversed(snapshots)):
        n1 = min(n0 + k, nt)
        _, _, terms = prop.forward(shot, n0, n1, snap, store=True)
        lam1, lam2, lam_new, work1, work_new = _kernels.adjoint_steps(
            *args, n1, n0, lam1, lam2, lam_new, work1, work_new, terms, n0, grad_c)
    return grad_c


def _velocity_gradient(prop, grad_c):
    """Chain rule through c = (v dt / dx)^2 and the edge padding."""
    g = prop.unpad_adjoint(grad_c * 2.0 * prop.vel * (prop.geom.dt / prop.model.dx) ** 2)
    return g


def jacobian_transpose(model, geom, data_vector, checkpoint_interval=None, n_jobs=None):
    """Apply the transposed Jacobian of the raw gathers to ``data_vector``.

    ``data_vector`` has shape (shots, receivers, nt); the result is a model-shaped
    array ``J^T d`` with J = d(simulate_raw)/d(velocity).
    """
    prop = Propagator(model, geom)
    d = np.asarray(data_vector, dtype=np.float64)
    if d.shape != (geom.n_shots, geom.n_receivers, geom.nt):
        raise ContractError(f"data_vector shape {d.shape} does not match geometry")
    grads = _map_shots(lambda s: _backprop_shot(prop, s, d[s], checkpoint_interval),
                       geom.n_shots, n_jobs)
    return _velocity_gradient(prop, np.sum(grads, axis=0))


def gradient_from_residual(model, geom, residual, norm_factor, checkpoint_interval=None):
    """Misfit gradient for a *given* (frozen) normalized residual field.

    With the forward data held fixed the gradient is linear in the residual.
    """
    return jacobian_transpose(model, geom, 2.0 * np.asarray(residual) / norm_factor,
                              checkpoint_interval=checkpoint_interval)


def misfit_gradient(model, geom, observed, checkpoint_interval=None,
                    memory_budget=DEFAULT_MEMORY_BUDGET, n_jobs=None, store_dtype=np.float64):
    """Misfit value and exact gradient, summed over shots in fixed order.

    Parameters
    ----------
    checkpoint_interval : int, optional
        Store wavefield snapshots every this many steps and recompute segments
        on the way back instead of storing all steps.
    memory_budget : int
        Bytes allowed for stored forward terms per shot; exceeding it without
        checkpointing raises ResourceError.
    store_dtype : {float64, float32}
        Precision of the stored forward terms. float32 halves memory traffic at
        the cost of ~1e-7 relative error in the gradient; accumulation stays
        in float64.
    """
    _check_observed(observed, geom)
    prop = Propagator(model, geom, store_dtype=store_dtype)
    check_memory(prop, memory_budget, checkpoint_interval)

    def one(shot):
        if checkpoint_interval is None:
            gather, _, terms = prop.forward(shot, store=True)
        else:
            gather, terms = prop.forward(shot)[0], None
        r = _residual(gather, observed, shot)
        adj = 2.0 * r / observed.norm_factor
        grad_c = _backprop_shot(prop, shot, adj, checkpoint_interval, forward=terms)
        return float(np.sum(r * r)), grad_c

    results = _map_shots(one, geom.n_shots, n_jobs)
    value = 0.0
    grad_c = np.zeros(prop.padded_shape)
    for v, g in results:
        value += v
        grad_c += g
    return MisfitReport(value, _velocity_gradient(prop, grad_c))
