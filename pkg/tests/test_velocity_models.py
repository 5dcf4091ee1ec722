import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from redfwi.exceptions import ConfigurationError, ContractError
from redfwi.velocity_models import (
    Family,
    FamilySpec,
    VelocityModel,
    family_specs,
    gaussian_kernel,
    gaussian_smooth,
    generate,
)


def test_model_rejects_bad_values():
    with pytest.raises(ContractError):
        VelocityModel(np.full((4, 4), 2000.0))
    with pytest.raises(ContractError):
        VelocityModel(np.full((8, 8), -1.0))
    v = np.full((8, 8), 2000.0)
    v[0, 0] = np.nan
    with pytest.raises(ContractError):
        VelocityModel(v)
    with pytest.raises(ContractError):
        VelocityModel(np.full((8, 8), 2000.0), dx=0)


def test_model_is_read_only():
    m = VelocityModel(np.full((8, 8), 2000.0))
    with pytest.raises(ValueError):
        m.values[0, 0] = 1.0


def test_single_layer_is_constant():
    spec = FamilySpec(Family.FLAT_LAYERS, layer_count_range=(1, 1), ny=16, nx=16)
    (m,) = generate(spec, 1)
    assert np.all(m.values == m.values[0, 0])


def test_three_fixed_layers_give_three_bands():
    spec = FamilySpec(Family.FLAT_LAYERS, ny=16, nx=16, layer_velocities=(1500, 2500, 3500),
                      min_thickness=2, seed=7)
    (m,) = generate(spec, 1)
    rows = m.values
    assert np.all(rows == rows[:, :1])
    col = rows[:, 0]
    # contiguous bands in the given order, each value present
    changes = np.flatnonzero(np.diff(col))
    assert len(changes) == 2
    assert list(col[[0, changes[0] + 1, changes[1] + 1]]) == [1500, 2500, 3500]


def test_generate_deterministic_and_prefix_stable():
    spec = FamilySpec(Family.CURVED_FAULT, seed=3)
    a = generate(spec, 4)
    b = generate(spec, 4)
    c = generate(spec, 2)
    for x, y in zip(a, b):
        assert np.array_equal(x.values, y.values)
    assert np.array_equal(a[1].values, c[1].values)


@pytest.mark.parametrize("family", list(Family))
def test_generated_models_within_range(family):
    spec = FamilySpec(family, velocity_range=(1800.0, 4000.0), seed=11)
    for m in generate(spec, 5):
        assert m.shape == (70, 70)
        assert m.within(1800.0, 4000.0)


def test_velocity_increases_with_depth_on_average():
    for spec in family_specs(seed=5).values():
        for m in generate(spec, 5):
            means = m.values.mean(axis=1)
            assert means[-10:].mean() > means[:10].mean()


def test_fault_family_has_lateral_discontinuity():
    spec = FamilySpec(Family.FLAT_FAULT, fault_throw_range=(100.0, 120.0), layer_count_range=(4, 4),
                      seed=2)
    m = generate(spec, 1)[0]
    # flat layers are laterally constant unless a fault offsets them
    assert np.any(np.diff(m.values, axis=1) != 0)
    flat = generate(FamilySpec(Family.FLAT_LAYERS, seed=2), 1)[0]
    assert np.all(np.diff(flat.values, axis=1) == 0)


@pytest.mark.parametrize("kw", [
    {"layer_count_range": (0, 3)},
    {"layer_count_range": (3, 13)},
    {"velocity_range": (500.0, 3000.0)},
    {"velocity_range": (3000.0, 2000.0)},
    {"curvature_amplitude": -1.0},
    {"ny": 4},
    {"layer_count_range": (10, 12), "ny": 16},
])
def test_invalid_specs(kw):
    with pytest.raises(ConfigurationError):
        FamilySpec(**kw)


def test_generate_count_validation():
    with pytest.raises(ConfigurationError):
        generate(FamilySpec(), 0)


def test_kernel_radius_and_normalization():
    w = gaussian_kernel(2.5)
    assert w.size == 2 * 10 + 1
    assert abs(w.sum() - 1.0) < 1e-15
    assert np.allclose(w, w[::-1])


def test_smooth_sigma_zero_identity():
    m = generate(FamilySpec(seed=1), 1)[0]
    assert gaussian_smooth(m, 0) is m


def test_smooth_constant_model_unchanged():
    m = VelocityModel(np.full((20, 30), 2750.0))
    out = gaussian_smooth(m, 3.0)
    assert np.array_equal(out.values, m.values)


def test_smooth_three_layer_profile():
    spec = FamilySpec(Family.FLAT_LAYERS, ny=16, nx=16, layer_velocities=(1500, 2500, 3500),
                      min_thickness=2, seed=7)
    m = generate(spec, 1)[0]
    s = gaussian_smooth(m, 4.0)
    assert s.v_min >= 1500 and s.v_max <= 3500
    profile = s.values.mean(axis=1)
    assert np.all(np.diff(profile) >= 0)


def test_smooth_matches_direct_convolution(rng):
    # oracle: explicit reflect-padded 2D convolution with the outer-product kernel
    v = rng.uniform(2000, 3000, (12, 14))
    sigma = 1.3
    w = gaussian_kernel(sigma)
    r = (w.size - 1) // 2
    padded = np.pad(v, r, mode="symmetric")
    k2 = np.outer(w, w)
    ref = np.empty_like(v)
    for i in range(v.shape[0]):
        for j in range(v.shape[1]):
            ref[i, j] = np.sum(padded[i:i + 2 * r + 1, j:j + 2 * r + 1] * k2)
    out = gaussian_smooth(VelocityModel(v), sigma).values
    assert np.allclose(out, np.clip(ref, v.min(), v.max()), rtol=0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma=st.floats(0.1, 12.0),
       family=st.sampled_from(list(Family)))
def test_smoothing_never_widens_range(seed, sigma, family):
    m = generate(FamilySpec(family, seed=seed, ny=24, nx=24, layer_count_range=(2, 4)), 1)[0]
    s = gaussian_smooth(m, sigma)
    assert s.v_min >= m.v_min and s.v_max <= m.v_max
    assert s.v_max - s.v_min <= m.v_max - m.v_min
