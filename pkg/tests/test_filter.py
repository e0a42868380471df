import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mmkf.exceptions import InvalidInputError, MisspecificationError, NumericalError
from mmkf.filter import (
    InflationState,
    Observation,
    apply_inflation,
    compute_model_obs_operator,
    ensemble_moments,
    esrf_analysis,
    estimate_inflation_factor,
    forecast_covariance,
    kalman_gain,
    sample_covariance,
    smooth_inflation,
    update_inflation,
)
from mmkf.linalg import LocalizationSpec, build_localization, single_scale_layout
from mmkf.models import x_projection_map

from conftest import random_spd


def random_case(rng, n, N, p):
    E = rng.standard_normal((n, N)) * rng.uniform(0.5, 2.0, (n, 1)) + rng.standard_normal((n, 1))
    H = rng.standard_normal((p, n))
    obs = Observation(rng.standard_normal(p), random_spd(rng, p), H)
    return E, obs


def kalman_reference(P, H, R, x, y):
    """Textbook gain via an explicit inverse, independent of the library path."""
    K = P @ H.T @ np.linalg.inv(H @ P @ H.T + R)
    return K, x + K @ (y - H @ x), (np.eye(len(x)) - K @ H) @ P


class TestMoments:
    def test_zero_spread(self):
        _, X = ensemble_moments(np.ones((3, 2)))
        assert not np.any(X)

    def test_scalar_pair(self):
        mean, X = ensemble_moments(np.array([[-1.0, 1.0]]))
        assert mean[0] == 0.0
        np.testing.assert_allclose(X, [[-1.0, 1.0]])
        assert (X @ X.T)[0, 0] == pytest.approx(2.0)

    def test_rows_centered(self, rng):
        _, X = ensemble_moments(rng.standard_normal((4, 7)))
        np.testing.assert_allclose(X.sum(axis=1), 0.0, atol=1e-14)

    def test_matches_numpy_cov(self, rng):
        E = rng.standard_normal((4, 9))
        np.testing.assert_allclose(sample_covariance(E), np.cov(E), atol=1e-14)

    def test_needs_two_members(self):
        with pytest.raises(InvalidInputError):
            ensemble_moments(np.ones((3, 1)))


class TestForecastCovariance:
    def test_ones_is_identity(self, rng):
        E = rng.standard_normal((5, 8))
        np.testing.assert_allclose(forecast_covariance(E, np.ones((5, 5))), sample_covariance(E))

    def test_zero_entry(self, rng):
        rho = np.ones((3, 3))
        rho[0, 2] = rho[2, 0] = 0.0
        P = forecast_covariance(rng.standard_normal((3, 6)), rho)
        assert P[0, 2] == 0.0

    def test_localized_psd(self, rng):
        rho = build_localization(LocalizationSpec({"x": 4.0}), single_scale_layout(40))
        P = forecast_covariance(rng.standard_normal((40, 10)), rho)
        assert np.linalg.eigvalsh(P)[0] >= -1e-8

    def test_shape_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            forecast_covariance(rng.standard_normal((3, 4)), np.ones((2, 2)))


class TestESRF:
    def test_scalar_kalman_algebra(self):
        E = np.array([[-1.0, 1.0]]) / math.sqrt(2.0)  # mean 0, variance 1
        Ea, Pa, K = esrf_analysis(E, Observation([1.0], [[1.0]], [[1.0]]), full_output=True)
        assert K[0, 0] == pytest.approx(0.5)
        assert Ea.mean() == pytest.approx(0.5)
        assert np.var(Ea, ddof=1) == pytest.approx(0.5)
        _, Xa = ensemble_moments(Ea)
        _, Xf = ensemble_moments(E)
        np.testing.assert_allclose(Xa, math.sqrt(0.5) * Xf)

    def test_uninformative_observation(self, rng):
        E, obs = random_case(rng, 4, 8, 3)
        obs = Observation(obs.y, obs.R * 1e12, obs.H)
        Ea = esrf_analysis(E, obs)
        np.testing.assert_allclose(Ea.mean(axis=1), E.mean(axis=1), atol=1e-5)

    def test_perfect_observation(self, rng):
        E = rng.standard_normal((4, 10))
        y = rng.standard_normal(4)
        Ea = esrf_analysis(E, Observation(y, 1e-12 * np.eye(4), np.eye(4)))
        np.testing.assert_allclose(Ea.mean(axis=1), y, atol=1e-4)

    @given(st.integers(0, 10_000))
    def test_covariance_identity(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 11))
        N = int(rng.integers(n + 2, n + 12))
        p = int(rng.integers(1, n + 1))
        E, obs = random_case(rng, n, N, p)
        Ea, Pa, K = esrf_analysis(E, obs, full_output=True)
        P = sample_covariance(E)
        target = (np.eye(n) - K @ obs.H) @ P
        _, Xa = ensemble_moments(Ea)
        assert np.linalg.norm(Xa @ Xa.T - target) / np.linalg.norm(target) < 1e-6

    @given(st.integers(0, 10_000))
    def test_mean_matches_textbook(self, seed):
        rng = np.random.default_rng(seed)
        n, N, p = 5, 9, 3
        E, obs = random_case(rng, n, N, p)
        _, mean_ref, _ = kalman_reference(sample_covariance(E), obs.H, obs.R, E.mean(axis=1), obs.y)
        Ea = esrf_analysis(E, obs)
        np.testing.assert_allclose(Ea.mean(axis=1), mean_ref, rtol=1e-10, atol=1e-10)

    def test_localized_gain_uses_tapered_covariance(self, rng):
        rho = build_localization(LocalizationSpec({"x": 2.0}), single_scale_layout(12))
        E = rng.standard_normal((12, 6))
        obs = Observation(rng.standard_normal(12), np.eye(12), np.eye(12))
        Ea, Pa, K = esrf_analysis(E, obs, rho, full_output=True)
        P = rho * sample_covariance(E)
        K_ref, mean_ref, Pa_ref = kalman_reference(P, obs.H, obs.R, E.mean(axis=1), obs.y)
        np.testing.assert_allclose(K, K_ref, atol=1e-10)
        np.testing.assert_allclose(Ea.mean(axis=1), mean_ref, atol=1e-10)

    def test_rank_deficient_ensemble(self, rng):
        # N < n: sample covariance is singular, anomaly update still exact
        E = rng.standard_normal((10, 4))
        obs = Observation(rng.standard_normal(3), np.eye(3), rng.standard_normal((3, 10)))
        Ea, _, K = esrf_analysis(E, obs, full_output=True)
        P = sample_covariance(E)
        _, Xa = ensemble_moments(Ea)
        target = (np.eye(10) - K @ obs.H) @ P
        assert np.linalg.norm(Xa @ Xa.T - target) / np.linalg.norm(target) < 1e-6

    def test_static_background_covariance(self, rng):
        E = rng.standard_normal((3, 6))
        B = random_spd(rng, 3)
        obs = Observation(rng.standard_normal(3), np.eye(3), np.eye(3))
        Ea, Pa, K = esrf_analysis(E, obs, background_cov=B, full_output=True)
        K_ref, mean_ref, Pa_ref = kalman_reference(B, obs.H, obs.R, E.mean(axis=1), obs.y)
        np.testing.assert_allclose(Pa, Pa_ref, atol=1e-10)
        np.testing.assert_allclose(Ea.mean(axis=1), mean_ref, atol=1e-10)

    def test_zero_innovation_covariance(self):
        E = np.ones((2, 3))
        with pytest.raises(NumericalError) as info:
            esrf_analysis(E, Observation(np.zeros(2), np.zeros((2, 2)), np.eye(2)))
        assert "innovation" in info.value.matrix_name

    def test_dimension_mismatch(self, rng):
        with pytest.raises(InvalidInputError):
            esrf_analysis(rng.standard_normal((3, 4)), Observation([0.0], [[1.0]], [[1.0, 0.0]]))

    def test_kalman_gain_helper(self, rng):
        P, R, H = random_spd(rng, 4), random_spd(rng, 2), rng.standard_normal((2, 4))
        K_ref, _, _ = kalman_reference(P, H, R, np.zeros(4), np.zeros(2))
        np.testing.assert_allclose(kalman_gain(P, H, R), K_ref, atol=1e-12)


class TestModelObsOperator:
    def test_identity_map(self, rng):
        H = rng.standard_normal((3, 5))
        np.testing.assert_allclose(compute_model_obs_operator(np.eye(5), H), H)

    def test_selection_map(self):
        G = x_projection_map(4, 2)
        H = np.hstack([np.eye(4), np.zeros((4, 8))])
        Hm = compute_model_obs_operator(G, H)
        np.testing.assert_allclose(Hm @ G, H, atol=1e-10)

    def test_square_map(self, rng):
        G = rng.standard_normal((4, 4)) + 3 * np.eye(4)
        H = rng.standard_normal((2, 4))
        np.testing.assert_allclose(compute_model_obs_operator(G, H), H @ np.linalg.inv(G), atol=1e-10)

    def test_shape_check(self):
        with pytest.raises(InvalidInputError):
            compute_model_obs_operator(np.eye(3), np.eye(4))


class TestInflation:
    def test_estimate_examples(self):
        assert estimate_inflation_factor([2.0, 0.0], 0.5 * np.eye(2) * 2, np.eye(2)) == 1.0
        assert estimate_inflation_factor([0.0], [[1.0]], [[1.0]]) == -1.0

    def test_consistent_spread(self, rng):
        d = rng.standard_normal(3)
        R = np.diag([0.2, 0.3, 0.5])
        HPH = np.diag([d @ d - 1.0, 0.0, 0.0])
        assert estimate_inflation_factor(d, R, HPH) == pytest.approx(1.0)

    def test_zero_denominator(self):
        with pytest.raises(InvalidInputError):
            estimate_inflation_factor([1.0], [[1.0]], [[0.0]])

    def test_smoothing_examples(self):
        assert smooth_inflation(InflationState(1.0, 0.5), 3.0).value == 2.0
        assert smooth_inflation(InflationState(1.7, 0.3), 1.7).value == pytest.approx(1.7)
        assert smooth_inflation(InflationState(1.0, 0.01), -1.0).value == pytest.approx(0.98)

    def test_gamma_one_disallowed(self):
        with pytest.raises(InvalidInputError):
            InflationState(1.0, 1.0)

    def test_non_positive_raises(self):
        with pytest.raises(MisspecificationError):
            smooth_inflation(InflationState(1.0, 0.5), -3.0)

    @given(st.floats(0.01, 5), st.floats(-2, 10), st.floats(0.001, 0.5))
    def test_contraction(self, lam, est, gamma):
        new = gamma * est + (1 - gamma) * lam
        if new <= 0:
            return
        out = smooth_inflation(InflationState(lam, gamma), est).value
        assert abs(out - est) == pytest.approx((1 - gamma) * abs(lam - est), abs=1e-12)

    def test_apply(self, rng):
        E = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(apply_inflation(E, 1.0), E)
        E4 = apply_inflation(E, 4.0)
        np.testing.assert_allclose(E4.mean(axis=1), E.mean(axis=1))
        np.testing.assert_allclose(sample_covariance(E4), 4 * sample_covariance(E))
        assert np.isfinite(apply_inflation(E, 4.0)).all()

    def test_apply_rejects_non_positive(self, rng):
        with pytest.raises(InvalidInputError):
            apply_inflation(rng.standard_normal((2, 3)), 0.0)

    def test_inflated_gain_scalar(self):
        # inflating P by lam and R by lam leaves K = P / (P + R)
        E = np.array([[-1.0, 1.0]]) / math.sqrt(2.0)
        lam = 3.0
        _, _, K = esrf_analysis(apply_inflation(E, lam), Observation([0.0], [[lam * 2.0]], [[1.0]]),
                                full_output=True)
        assert K[0, 0] == pytest.approx(1.0 / 3.0)

    def test_update_uses_uninflated_spread(self, rng):
        E = rng.standard_normal((2, 6))
        obs = Observation(rng.standard_normal(2), np.eye(2), np.eye(2))
        state, lam_hat = update_inflation(InflationState(2.0, 0.1), E, obs)
        d = obs.y - E.mean(axis=1)
        expected = (d @ d - 2.0) / np.trace(sample_covariance(E))
        assert lam_hat == pytest.approx(expected)
        assert state.value == pytest.approx(0.1 * expected + 0.9 * 2.0)
