import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import redfwi.prior as prior_mod
from redfwi.exceptions import ConfigurationError, ContractError, FormatError, TrainingError
from redfwi.prior import (
    GaussianOraclePrior,
    Normalizer,
    TinyDenoiser,
    TrainConfig,
    ddpm_loss,
    predict_oracle,
    sample_unconditional,
    train_ddpm,
)
from redfwi.schedule import build_sigmoid_schedule
from redfwi.velocity_models import Family, FamilySpec, generate


@pytest.fixture(scope="module")
def sched():
    return build_sigmoid_schedule()


@pytest.fixture(scope="module")
def small_dataset():
    return generate(FamilySpec(Family.CURVED_LAYERS, ny=16, nx=16, layer_count_range=(2, 4), seed=9), 12)


class EchoPredictor:
    """Test stub: returns a fixed noise field regardless of input."""

    def __init__(self, eps):
        self.eps = eps

    def predict(self, z, t):
        return self.eps


class ZeroPredictor:
    def predict(self, z, t):
        return np.zeros_like(z)


class TestNormalizer:
    def test_bounds_map_to_unit_box(self):
        n = Normalizer(1500, 4500)
        assert n.normalize(1500) == -1 and n.normalize(4500) == 1 and n.normalize(3000) == 0

    @settings(max_examples=100)
    @given(v=st.floats(1500, 4500))
    def test_round_trip(self, v):
        n = Normalizer(1500, 4500)
        assert abs(n.denormalize(n.normalize(v)) - v) <= 1e-12 * v

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            Normalizer(3000, 3000)


class TestOracle:
    def test_point_mass_recovers_noise(self, sched, rng):
        mu = rng.uniform(-1, 1, (9, 11))
        p = GaussianOraclePrior(mu, 0.0, sched)
        for t in (1, 37, 500, 999, 1000):
            e = rng.standard_normal(mu.shape)
            g = sched.gamma_at(t)
            z = np.sqrt(g) * mu + np.sqrt(1 - g) * e
            assert np.allclose(p.predict(z, t), e, rtol=0, atol=1e-10)

    def test_flat_prior_limit(self, sched, rng):
        z = rng.standard_normal((8, 8))
        assert np.abs(GaussianOraclePrior(np.zeros((8, 8)), 1e12, sched).predict(z, 300)).max() < 1e-9
        assert not np.any(GaussianOraclePrior(np.zeros((8, 8)), np.inf, sched).predict(z, 300))

    def test_unit_gaussian(self, sched, rng):
        z = rng.standard_normal((8, 8))
        p = GaussianOraclePrior(np.zeros((8, 8)), 1.0, sched)
        for t in (3, 500, 870):
            g = sched.gamma_at(t)
            assert np.allclose(predict_oracle(p, z, t, sched), np.sqrt(1 - g) * z, rtol=1e-14, atol=0)

    def test_score_consistency(self, sched, rng):
        mu = rng.uniform(-1, 1, (6, 6))
        p = GaussianOraclePrior(mu, 0.3, sched)
        for _ in range(200):
            t = int(rng.integers(1, 1001))
            z = rng.standard_normal(mu.shape) * 2
            lhs = -p.predict(z, t) / np.sqrt(1 - sched.gamma_at(t))
            assert np.allclose(lhs, p.marginal_score(z, t), rtol=1e-12, atol=1e-12)

    def test_batch_matches_single(self, sched, rng):
        p = GaussianOraclePrior(rng.uniform(-1, 1, (5, 5)), 0.2, sched)
        z = rng.standard_normal((3, 5, 5))
        t = np.array([4, 400, 900])
        batch = p.predict(z, t)
        for i in range(3):
            assert np.array_equal(batch[i], p.predict(z[i], int(t[i])))

    def test_shape_mismatch(self, sched):
        p = GaussianOraclePrior(np.zeros((5, 5)), 0.2, sched)
        with pytest.raises(ContractError):
            p.predict(np.zeros((4, 5)), 10)


class TestLoss:
    def test_perfect_predictor_zero_loss(self, sched, rng):
        x = rng.uniform(-1, 1, (1, 8, 8))
        eps = rng.standard_normal(x.shape)
        loss, grads = ddpm_loss(EchoPredictor(eps), x, sched, rng, eps=eps)
        assert loss == 0.0 and grads is None

    def test_zero_predictor_expected_loss(self, sched):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, (4, 10, 10))
        losses = [ddpm_loss(ZeroPredictor(), x, sched, rng)[0] for _ in range(200)]
        assert abs(np.mean(losses) / 100.0 - 1.0) < 0.05

    def test_gradcheck(self, sched):
        rng = np.random.default_rng(0)
        m = TinyDenoiser(sched, dtype=np.float64, seed=1)
        for _, p in m.named_parameters():
            p += 0.05 * rng.standard_normal(p.shape)
        x = rng.uniform(-1, 1, (3, 16, 16))
        t = np.array([10, 500, 900])
        eps = rng.standard_normal(x.shape)
        _, grads = ddpm_loss(m, x, sched, t=t, eps=eps)
        params = m.named_parameters()
        h = 1e-4
        for _ in range(20):
            k = int(rng.integers(len(params)))
            p = params[k][1]
            i = int(rng.integers(p.size))
            old = p.flat[i]
            p.flat[i] = old + h
            lp = ddpm_loss(m, x, sched, t=t, eps=eps, with_grad=False)[0]
            p.flat[i] = old - h
            lm = ddpm_loss(m, x, sched, t=t, eps=eps, with_grad=False)[0]
            p.flat[i] = old
            fd = (lp - lm) / (2 * h)
            an = grads[k].flat[i]
            assert abs(fd - an) <= 1e-4 * max(abs(fd), abs(an), 1e-8), params[k][0]

    def test_nonfinite_loss(self, sched):
        class Bad:
            def predict(self, z, t):
                return np.full_like(z, np.nan)

        with pytest.raises(TrainingError):
            ddpm_loss(Bad(), np.zeros((1, 8, 8)), sched, 0)


class TestDenoiser:
    def test_parameter_budget(self):
        assert TinyDenoiser().n_parameters() < 50_000

    def test_shapes_and_determinism(self, sched, rng):
        m = TinyDenoiser(sched, seed=3)
        z = rng.standard_normal((17, 23))
        a = m.predict(z, 100)
        assert a.shape == z.shape and np.all(np.isfinite(a))
        assert np.array_equal(a, m.predict(z, 100))
        assert m.predict(rng.standard_normal((2, 17, 23)), np.array([1, 2])).shape == (2, 17, 23)

    def test_save_load_round_trip(self, sched, tmp_path, rng):
        m = TinyDenoiser(sched, Normalizer(1600, 4200), seed=4)
        for _, p in m.named_parameters():
            p += rng.standard_normal(p.shape).astype(p.dtype) * 0.01
        m.save(tmp_path / "p")
        m2 = TinyDenoiser.load(tmp_path / "p")
        assert m2.normalizer == m.normalizer
        assert np.array_equal(m2.schedule.gamma, m.schedule.gamma)
        for (n1, p1), (n2, p2) in zip(m.named_parameters(), m2.named_parameters()):
            assert n1 == n2 and np.array_equal(p1, p2)
        z = rng.standard_normal((12, 12))
        assert np.array_equal(m.predict(z, 50), m2.predict(z, 50))

    def test_load_rejects_tampered_manifest(self, sched, tmp_path):
        import json

        TinyDenoiser(sched).save(tmp_path / "p")
        path = tmp_path / "p" / "manifest.json"
        man = json.loads(path.read_text())
        man["architecture"]["base_width"] = 4
        path.write_text(json.dumps(man))
        with pytest.raises(FormatError):
            TinyDenoiser.load(tmp_path / "p")


class TestTraining:
    def test_zero_iterations_leave_parameters(self, small_dataset):
        m = TinyDenoiser(seed=0)
        before = [p.copy() for _, p in m.named_parameters()]
        _, losses = train_ddpm(m, small_dataset, TrainConfig(iterations=0))
        assert losses.size == 0
        for b, (_, p) in zip(before, m.named_parameters()):
            assert np.array_equal(b, p)

    def test_deterministic_loss_curve(self, small_dataset):
        cfg = TrainConfig(iterations=6, batch_size=4, seed=5)
        _, a = train_ddpm(TinyDenoiser(seed=1), small_dataset, cfg)
        _, b = train_ddpm(TinyDenoiser(seed=1), small_dataset, cfg)
        assert np.array_equal(a, b)

    def test_needs_ten_models(self, small_dataset):
        with pytest.raises(ContractError):
            train_ddpm(TinyDenoiser(), small_dataset[:9], TrainConfig(iterations=1))

    def test_rejects_unnormalizable_models(self, small_dataset):
        m = TinyDenoiser(normalizer=Normalizer(1500, 2000))
        with pytest.raises(ContractError):
            train_ddpm(m, small_dataset, TrainConfig(iterations=1))

    def test_divergence_detected(self, small_dataset, monkeypatch):
        calls = {"n": 0}

        def fake_loss(model, x, sched, rng):
            calls["n"] += 1
            loss = 1.0 if calls["n"] <= 10 else 50.0
            return loss, [np.zeros_like(p) for _, p in model.named_parameters()]

        monkeypatch.setattr(prior_mod, "ddpm_loss", fake_loss)
        with pytest.raises(TrainingError) as err:
            train_ddpm(TinyDenoiser(), small_dataset, TrainConfig(iterations=500, batch_size=2))
        assert len(err.value.losses) == 110

    def test_invalid_config(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(batch_size=0)
        with pytest.raises(ConfigurationError):
            TrainConfig(iterations=-1)


class TestSampling:
    def test_point_mass_oracle_collapses(self, sched, rng):
        mu = rng.uniform(-0.9, 0.9, (8, 8))
        p = GaussianOraclePrior(mu, 0.0, sched)
        out = p.normalizer.normalize(sample_unconditional(p, sched, rng=0))
        assert np.abs(out - mu).max() <= 1e-2

    def test_shape_and_stochasticity(self, sched):
        p = GaussianOraclePrior(np.zeros((6, 7)), 0.5, sched)
        a = sample_unconditional(p, sched, rng=1)
        b = sample_unconditional(p, sched, rng=2)
        assert a.shape == (6, 7)
        assert not np.array_equal(a, b)
        assert a.min() >= 1500 and a.max() <= 4500

    def test_network_needs_shape(self, sched):
        with pytest.raises(ContractError):
            sample_unconditional(TinyDenoiser(sched), sched, rng=0)
        short = build_sigmoid_schedule(T=5)
        out = sample_unconditional(TinyDenoiser(short), short, rng=0, shape=(10, 10))
        assert out.shape == (10, 10)
