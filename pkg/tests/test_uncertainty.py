"""Error-growth fitting, synthetic forecast errors, worst-case envelope."""

import numpy as np
import pytest

from vpplab.model import build_time_grid, default_scenario
from vpplab.uncertainty import (
    ErrorModel,
    FitError,
    ForecastPolicy,
    error_sigmas,
    eval_error_model,
    fit_error_model,
    read_rmse_samples,
    synthesize_forecast,
    worst_case_envelope,
    write_rmse_samples,
)

LEADS = np.array([5.0, 15.0, 30.0, 60.0, 120.0, 240.0, 480.0, 900.0])


def exhaustive_grid_fit(samples, na=40, nb=40, nc=40):
    """Independent oracle: dense 3-D grid search over (a, b, c)."""
    t = np.array([s[0] for s in samples])
    e = np.array([s[1] for s in samples])
    best = None
    for a in np.geomspace(0.05, 20.0, na):
        for b in np.geomspace(0.05, 20.0, nb):
            for c in np.geomspace(0.1, 3.0, nc):
                pred = t / (a + b * t**c)
                ssr = float(np.sum((e - pred) ** 2))
                if best is None or ssr < best[0]:
                    best = (ssr, a, b, c)
    return best


class TestEval:
    def test_unit_model_lead_one(self):
        m = ErrorModel(1.0, 1.0, 1.0)
        assert eval_error_model(m, 1.0) == pytest.approx(0.5)

    def test_lead_zero_is_zero(self):
        m = ErrorModel(2.0, 0.5, 1.2)
        assert eval_error_model(m, 0.0) == 0.0

    def test_negative_lead_rejected(self):
        m = ErrorModel(1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            eval_error_model(m, -1.0)

    def test_monotone_up_to_argmax(self):
        # dense-evaluation oracle: curve may peak only when c > 1
        for a, b, c in [(1.0, 1.0, 0.9), (2.0, 0.5, 1.2), (300.0, 12.0, 0.9)]:
            m = ErrorModel(a, b, c)
            t = np.linspace(0.0, 900.0, 4001)
            eps = eval_error_model(m, t)
            peak = int(np.argmax(eps))
            assert np.all(np.diff(eps[: peak + 1]) >= -1e-12)
            if c <= 1.0:
                assert peak == len(t) - 1  # nondecreasing on the whole range

    def test_invalid_params_rejected(self):
        with pytest.raises(FitError):
            ErrorModel(-1.0, 1.0, 1.0)


class TestFit:
    def test_noise_free_round_trip(self):
        truth = ErrorModel(1.0, 1.0, 1.0)
        samples = [(t, eval_error_model(truth, t)) for t in LEADS]
        assert samples[3][1] == pytest.approx(60.0 / 61.0)
        fit = fit_error_model(samples)
        assert fit.a == pytest.approx(1.0, rel=1e-3)
        assert fit.b == pytest.approx(1.0, rel=1e-3)
        assert fit.c == pytest.approx(1.0, rel=1e-3)

    def test_general_round_trip(self):
        for a, b, c in [(2.0, 0.5, 1.2), (300.0, 12.0, 0.9)]:
            truth = ErrorModel(a, b, c)
            samples = [(t, eval_error_model(truth, t)) for t in LEADS]
            fit = fit_error_model(samples)
            assert fit.a == pytest.approx(a, rel=1e-3)
            assert fit.b == pytest.approx(b, rel=1e-3)
            assert fit.c == pytest.approx(c, rel=1e-3)

    def test_noisy_recovery_beats_noise_level(self):
        # synthetic-truth oracle with seeded 1% multiplicative noise
        truth = ErrorModel(2.0, 0.5, 1.2)
        rng = np.random.default_rng(123)
        t = np.linspace(5, 900, 60)
        clean = eval_error_model(truth, t)
        noisy = clean * (1.0 + 0.01 * rng.standard_normal(len(t)))
        fit = fit_error_model(list(zip(t, noisy)))
        pred = eval_error_model(fit, t)
        rms = np.sqrt(np.mean((pred - clean) ** 2))
        noise_rms = np.sqrt(np.mean((noisy - clean) ** 2))
        assert rms <= 2.0 * noise_rms

    def test_matches_exhaustive_grid_oracle(self):
        truth = ErrorModel(2.0, 0.5, 1.2)
        rng = np.random.default_rng(7)
        t = np.linspace(5, 900, 40)
        noisy = eval_error_model(truth, t) * (1.0 + 0.01 * rng.standard_normal(len(t)))
        samples = list(zip(t, noisy))
        fit = fit_error_model(samples)
        fit_ssr = float(np.sum((noisy - eval_error_model(fit, t)) ** 2))
        oracle_ssr = exhaustive_grid_fit(samples)[0]
        # the polished fit must be no worse than the best coarse-grid point
        assert fit_ssr <= oracle_ssr + 1e-12

    def test_two_samples_rejected(self):
        with pytest.raises(FitError):
            fit_error_model([(5.0, 0.1), (10.0, 0.2)])

    def test_all_zero_rejected(self):
        with pytest.raises(FitError):
            fit_error_model([(5.0, 0.0), (10.0, 0.0), (20.0, 0.0)])


class TestCalibration:
    def test_norm_makes_rms_one(self):
        m = ErrorModel(300.0, 12.0, 0.9).calibrated(LEADS)
        eps = eval_error_model(m, LEADS) / m.norm
        assert np.sqrt(np.mean(eps**2)) == pytest.approx(1.0)


class TestSynthesize:
    def grid_leads(self):
        grid = build_time_grid(default_scenario(), now=0.0)
        return grid.midpoints() - grid.start

    def test_zero_scale_returns_truth(self):
        leads = self.grid_leads()
        m = ErrorModel(300.0, 12.0, 0.9).calibrated(leads)
        truth = np.linspace(0, 40, len(leads))
        out = synthesize_forecast(truth, leads, 50.0, m, 0.0, np.random.default_rng(0))
        assert np.array_equal(out, truth)

    def test_seed_determinism(self):
        leads = self.grid_leads()
        m = ErrorModel(300.0, 12.0, 0.9).calibrated(leads)
        truth = np.full(len(leads), 25.0)
        a = synthesize_forecast(truth, leads, 50.0, m, 0.1, np.random.default_rng(42))
        b = synthesize_forecast(truth, leads, 50.0, m, 0.1, np.random.default_rng(42))
        c = synthesize_forecast(truth, leads, 50.0, m, 0.1, np.random.default_rng(43))
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_clamped_to_physical_range(self):
        leads = self.grid_leads()
        m = ErrorModel(300.0, 12.0, 0.9).calibrated(leads)
        rng = np.random.default_rng(3)
        for _ in range(50):
            truth = rng.uniform(0, 50, len(leads))
            out = synthesize_forecast(truth, leads, 50.0, m, 0.3, rng)
            assert np.all(out >= 0.0) and np.all(out <= 50.0)

    def test_monte_carlo_rms_calibration(self):
        # MC oracle: horizon-RMS of the pre-clamp error ~ target * p_max
        leads = self.grid_leads()
        m = ErrorModel(300.0, 12.0, 0.9).calibrated(leads)
        truth = np.full(len(leads), 25.0)  # clamping never binds at 4 sigma
        total = 0.0
        n_seeds = 1000
        for seed in range(n_seeds):
            out = synthesize_forecast(truth, leads, 50.0, m, 0.1, np.random.default_rng(seed))
            total += np.sqrt(np.mean((out - truth) ** 2))
        avg_rms = total / n_seeds
        assert avg_rms == pytest.approx(5.0, rel=0.05)


class TestEnvelope:
    def setup_method(self):
        self.cfg = default_scenario()
        grid = build_time_grid(self.cfg, now=0.0)
        self.leads = grid.midpoints() - grid.start
        self.model = ErrorModel(300.0, 12.0, 0.9).calibrated(self.leads)
        rng = np.random.default_rng(5)
        self.demand = rng.uniform(5, 45, len(self.leads))
        self.res = rng.uniform(0, 28, len(self.leads))

    def test_zero_margin_is_identity(self):
        d, r = worst_case_envelope(self.demand, self.res, self.leads, self.model, 0.0, self.cfg)
        assert np.allclose(d, self.demand)
        assert np.allclose(r, self.res)

    def test_adverse_direction_pointwise(self):
        d, r = worst_case_envelope(self.demand, self.res, self.leads, self.model, 0.1, self.cfg)
        assert np.all(d >= self.demand - 1e-12)
        assert np.all(r <= self.res + 1e-12)
        assert np.all(d <= self.cfg.demand_p_max) and np.all(r >= 0.0)

    def test_monotone_in_margin(self):
        d1, r1 = worst_case_envelope(self.demand, self.res, self.leads, self.model, 0.1, self.cfg)
        d2, r2 = worst_case_envelope(self.demand, self.res, self.leads, self.model, 0.2, self.cfg)
        assert np.all(d2 >= d1 - 1e-12)
        assert np.all(r2 <= r1 + 1e-12)


class TestPolicy:
    def test_labels(self):
        m = ErrorModel(1.0, 1.0, 1.0)
        assert ForecastPolicy.perfect().label() == "perfect"
        assert ForecastPolicy.synthetic(0.1, m).label() == "synthetic_0.1"
        assert "worst_case" in ForecastPolicy.worst_case(0.1, m).label()

    def test_validation(self):
        with pytest.raises(ValueError):
            ForecastPolicy(kind="nope")
        with pytest.raises(ValueError):
            ForecastPolicy(kind="synthetic", target_rmse=0.1)  # model missing
        with pytest.raises(ValueError):
            ForecastPolicy(kind="external")  # path missing


def test_rmse_samples_round_trip(tmp_path):
    samples = [(5.0, 0.01), (60.0, 0.08), (900.0, 0.15)]
    path = tmp_path / "samples.csv"
    write_rmse_samples(samples, path)
    back = read_rmse_samples(path)
    assert len(back) == 3
    assert back[1][0] == pytest.approx(60.0)
    assert back[1][1] == pytest.approx(0.08)
