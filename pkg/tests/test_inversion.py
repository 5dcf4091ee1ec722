import numpy as np
import pytest

from redfwi.adjoint import misfit, misfit_gradient
from redfwi.exceptions import ConfigurationError, ContractError, OptimizationAborted
from redfwi.formats import read_csv
from redfwi.inversion import (
    InversionConfig,
    Regularizer,
    add_gaussian_noise,
    drop_traces,
    invert,
)
from redfwi.optim import AdamState, adam_step
from redfwi.prior import GaussianOraclePrior, Normalizer
from redfwi.schedule import build_sigmoid_schedule
from redfwi.velocity_models import Family, FamilySpec, VelocityModel, gaussian_smooth, generate
from redfwi.wave import AcquisitionGeometry, SeismicSurvey, simulate_survey


@pytest.fixture(scope="module")
def problem():
    truth = generate(FamilySpec(Family.CURVED_LAYERS, ny=24, nx=24, layer_count_range=(3, 3),
                                curvature_amplitude=30.0, min_thickness=4, seed=4), 1)[0]
    geom = AcquisitionGeometry([(1, 2), (1, 12), (1, 21)], [(1, c) for c in range(24)], nt=260,
                               wavelet_peak_frequency=20.0, sponge_width=8)
    obs = simulate_survey(truth, geom)
    x0 = gaussian_smooth(truth, 4.0)
    return truth, geom, obs, x0


def test_truth_is_fixed_point(problem):
    truth, geom, obs, _ = problem
    tr = invert(obs, geom, truth, cfg=InversionConfig(K=3))
    assert tr.misfit[0] <= 1e-20
    assert misfit(tr.final_model, geom, obs) <= tr.misfit[0] + 1e-20


def test_single_step_composition(problem):
    _, geom, obs, x0 = problem
    cfg = InversionConfig(K=1, eta=0.03, store_dtype="float64")
    tr = invert(obs, geom, x0, cfg=cfg)
    norm = Normalizer()
    g = misfit_gradient(x0, geom, obs).gradient * norm.half_range
    x = norm.normalize(x0.values)
    x1 = np.clip(x + adam_step(AdamState.like(x), g, 0.03), -1, 1)
    assert np.allclose(tr.final_model.values, norm.denormalize(x1), rtol=0, atol=1e-9)
    # first Adam step moves every cell with a nonzero gradient by eta in normalized units
    moved = np.abs(norm.normalize(tr.final_model.values) - x)
    assert np.all(moved <= 0.03 + 1e-12)
    assert np.allclose(moved[np.abs(g) > 1e-3], 0.03, rtol=1e-4)


def test_trace_contents(problem, tmp_path):
    truth, geom, obs, x0 = problem
    cfg = InversionConfig(K=4, regularizer="tikhonov", lam=5.0, eta_min=0.001)
    tr = invert(obs, geom, x0, cfg=cfg, truth=truth)
    assert len(tr) == 4 and len(tr.rmse) == 4
    arr = tr.as_arrays()
    assert np.allclose(arr["loss"], arr["misfit"] + arr["reg"])
    assert arr["lr"][0] == 0.03 and np.all(np.diff(arr["lr"]) < 0)
    assert arr["rmse"][-1] == pytest.approx(np.sqrt(np.mean((tr.final_model.values - truth.values) ** 2)))
    tr.to_csv(tmp_path / "t.csv")
    header, rows = read_csv(tmp_path / "t.csv")
    assert header == ["iteration", "loss", "misfit", "reg", "lr", "rmse", "mae", "ssim"]
    assert len(rows) == 4


def test_iterates_stay_in_box(problem):
    _, geom, obs, x0 = problem
    seen = []
    cfg = InversionConfig(K=5, eta=0.8)
    tr = invert(obs, geom, x0, cfg=cfg, callback=lambda k, t: seen.append(k))
    assert seen == list(range(5))
    assert tr.final_model.within(1500.0, 4500.0)


def test_lambda_zero_red_is_unregularized(problem):
    _, geom, obs, x0 = problem
    sched = build_sigmoid_schedule()
    pred = GaussianOraclePrior(np.zeros(x0.shape), 0.3, sched)
    a = invert(obs, geom, x0, cfg=InversionConfig(K=6))
    b = invert(obs, geom, x0, pred, InversionConfig(K=6, regularizer="red", lam=0.0))
    assert np.array_equal(a.final_model.values, b.final_model.values)
    assert a.loss == b.loss and not any(b.reg)


def test_red_oracle_beats_unregularized(problem):
    truth, geom, obs, x0 = problem
    norm = Normalizer()
    pred = GaussianOraclePrior(norm.normalize(truth.values), 1e-3, build_sigmoid_schedule())
    base = invert(obs, geom, x0, cfg=InversionConfig(K=30), truth=truth)
    red = invert(obs, geom, x0, pred, InversionConfig(K=30, regularizer="red", lam=2.0), truth=truth)
    assert red.rmse[-1] < base.rmse[-1]


def test_nan_prediction_aborts_with_trace(problem):
    _, geom, obs, x0 = problem

    class Broken(GaussianOraclePrior):
        def predict(self, z, t):
            return np.full_like(z, np.nan)

    pred = Broken(np.zeros(x0.shape), 0.1, build_sigmoid_schedule())
    with pytest.raises(OptimizationAborted) as err:
        invert(obs, geom, x0, pred, InversionConfig(K=5, regularizer="red", lam=1.0))
    assert len(err.value.trace) == 1


def test_config_validation(problem):
    _, geom, obs, x0 = problem
    with pytest.raises(ConfigurationError):
        InversionConfig(K=0)
    with pytest.raises(ConfigurationError):
        InversionConfig(lam=-1.0)
    with pytest.raises(ConfigurationError):
        InversionConfig(eta=0.0)
    with pytest.raises(ValueError):
        InversionConfig(regularizer="l1")
    with pytest.raises(ConfigurationError):
        invert(obs, geom, x0, None, InversionConfig(regularizer=Regularizer.RED))
    pred = GaussianOraclePrior(np.zeros(x0.shape), 0.1, build_sigmoid_schedule(T=50))
    with pytest.raises(ConfigurationError):
        invert(obs, geom, x0, pred, InversionConfig(regularizer="red"))
    with pytest.raises(ContractError):
        invert(obs, geom, x0.with_values(x0.values + 3000.0))


def test_deterministic_runs(problem):
    _, geom, obs, x0 = problem
    pred = GaussianOraclePrior(np.zeros(x0.shape), 0.2, build_sigmoid_schedule())
    cfg = InversionConfig(K=4, regularizer="red", lam=1.0, seed=3)
    a = invert(obs, geom, x0, pred, cfg)
    b = invert(obs, geom, x0, pred, cfg)
    assert a.t == b.t and np.array_equal(a.final_model.values, b.final_model.values)


class TestCorruption:
    @pytest.fixture(scope="class")
    @staticmethod
    def survey():
        rng = np.random.default_rng(0)
        return SeismicSurvey(rng.standard_normal((5, 70, 1000)) * 0.1, None, 3.0)

    def test_zero_noise_identity(self, survey):
        out = add_gaussian_noise(survey, 0.0, 1)
        assert np.array_equal(out.data, survey.data) and out.norm_factor == survey.norm_factor

    def test_noise_statistics(self, survey):
        out = add_gaussian_noise(survey, 0.3, np.random.default_rng(5))
        d = out.data - survey.data
        assert abs(d.std() / 0.3 - 1) < 0.02
        a, b = d[0, 3], d[2, 40]
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1
        assert np.array_equal(out.trace_mask, survey.trace_mask)

    def test_negative_std(self, survey):
        with pytest.raises(ContractError):
            add_gaussian_noise(survey, -0.1)

    def test_drop_counts(self, survey):
        assert np.array_equal(drop_traces(survey, 0, 1).trace_mask, survey.trace_mask)
        out = drop_traces(survey, 20, np.random.default_rng(2))
        assert np.all(out.trace_mask.sum(axis=1) == 50)
        assert np.all(out.trace_mask == out.trace_mask[0])
        assert np.array_equal(out.data, survey.data)
        with pytest.raises(ContractError):
            drop_traces(survey, 70, 0)


def test_dropped_traces_ignored_by_misfit(problem):
    _, geom, obs, x0 = problem
    s = drop_traces(obs, 5, np.random.default_rng(1))
    zeroed = np.where(s.trace_mask[:, :, None], s.data, 0.0)
    s2 = SeismicSurvey(zeroed, s.trace_mask, s.norm_factor)
    assert misfit(x0, geom, s) == misfit(x0, geom, s2)
