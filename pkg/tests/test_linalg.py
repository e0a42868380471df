import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mmkf.exceptions import InvalidInputError
from mmkf.linalg import (
    LocalizationSpec,
    build_localization,
    cyclic_distance,
    gaspari_cohn,
    nearest_psd,
    pseudoinverse,
    single_scale_layout,
    symmetric_pinv,
    symmetric_sqrt,
    two_scale_layout,
)
from mmkf.models import x_projection_map

from conftest import random_spd

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def square_matrices(max_n=6):
    return st.integers(1, max_n).flatmap(lambda n: arrays(np.float64, (n, n), elements=finite))


class TestSymmetricSqrt:
    def test_identity(self):
        np.testing.assert_array_equal(symmetric_sqrt(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        np.testing.assert_allclose(symmetric_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]), atol=1e-14)

    def test_random_spd_squares_back(self, rng):
        A = random_spd(rng, 6)
        S = symmetric_sqrt(A)
        assert np.linalg.norm(S @ S - A) / np.linalg.norm(A) < 1e-8
        np.testing.assert_allclose(S, S.T, atol=1e-14)

    def test_rejects_non_symmetric(self):
        with pytest.raises(InvalidInputError):
            symmetric_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_rejects_clearly_negative(self):
        with pytest.raises(InvalidInputError):
            symmetric_sqrt(np.diag([1.0, -0.1]))

    def test_clamps_roundoff_negative(self):
        S = symmetric_sqrt(np.diag([1.0, -1e-13]))
        np.testing.assert_allclose(S, np.diag([1.0, 0.0]))

    @given(arrays(np.float64, (5, 3), elements=finite))
    def test_sqrt_of_gram_matrix(self, B):
        A = B @ B.T
        S = symmetric_sqrt(A)
        scale = max(np.linalg.norm(A), 1e-300)
        assert np.linalg.norm(S @ S - A) / scale < 1e-7


class TestPseudoinverse:
    def test_identity(self):
        np.testing.assert_allclose(pseudoinverse(np.eye(4)), np.eye(4))

    def test_selection_map_transpose(self):
        G = x_projection_map(4, 2)
        np.testing.assert_allclose(pseudoinverse(G), G.T, atol=1e-14)

    def test_zero(self):
        out = pseudoinverse(np.zeros((2, 5)))
        assert out.shape == (5, 2) and not np.any(out)

    @given(st.integers(1, 5).flatmap(
        lambda r: st.integers(1, 5).flatmap(lambda c: arrays(np.float64, (r, c), elements=finite))))
    def test_moore_penrose_conditions(self, A):
        P = pseudoinverse(A)
        scale = max(np.linalg.norm(A), 1.0)
        tol = 1e-8
        assert np.linalg.norm(A @ P @ A - A) <= tol * scale * max(1, np.linalg.cond(A) if np.any(A) else 1)
        AP, PA = A @ P, P @ A
        assert np.linalg.norm(AP - AP.T) <= 1e-8 * max(1, np.linalg.norm(AP))
        assert np.linalg.norm(PA - PA.T) <= 1e-8 * max(1, np.linalg.norm(PA))

    def test_symmetric_pinv_condition(self):
        inv, cond = symmetric_pinv(np.diag([2.0, 0.5]))
        np.testing.assert_allclose(inv, np.diag([0.5, 2.0]))
        assert cond == pytest.approx(4.0)
        _, cond = symmetric_pinv(np.diag([1.0, 0.0]))
        assert cond == np.inf


class TestNearestPSD:
    def test_already_psd_unchanged(self):
        np.testing.assert_array_equal(nearest_psd(np.diag([2.0, 1.0])), np.diag([2.0, 1.0]))

    def test_clamp_to_zero(self):
        np.testing.assert_allclose(nearest_psd(np.diag([1.0, -0.5])), np.diag([1.0, 0.0]), atol=1e-15)

    def test_clamp_to_floor(self):
        np.testing.assert_allclose(nearest_psd(np.diag([1.0, -0.5]), 0.1), np.diag([1.0, 0.1]), atol=1e-15)

    def test_negative_eps_rejected(self):
        with pytest.raises(InvalidInputError):
            nearest_psd(np.eye(2), -1.0)

    @given(square_matrices(), st.sampled_from([0.0, 0.01, 0.5]))
    def test_floor_and_idempotence(self, A, eps):
        B = nearest_psd(A, eps)
        scale = max(1.0, np.abs(A).max())
        assert np.linalg.eigvalsh(B)[0] >= eps - 1e-12 * scale
        C = nearest_psd(B, eps)
        np.testing.assert_allclose(C, B, atol=1e-10 * scale)

    def test_reports_change(self):
        _, changed = nearest_psd(np.diag([1.0, -1.0]), return_changed=True)
        _, unchanged = nearest_psd(np.eye(2), return_changed=True)
        assert changed and not unchanged


class TestGaspariCohn:
    def test_zero_distance(self):
        assert gaspari_cohn(0.0, 3.0) == 1.0

    def test_beyond_support(self):
        assert gaspari_cohn(2.5 * 3.0, 3.0) == 0.0
        assert gaspari_cohn(6.0, 3.0) == 0.0

    def test_value_at_half_width(self):
        assert gaspari_cohn(3.0, 3.0) == pytest.approx(5.0 / 24.0, abs=1e-14)

    def test_inner_polynomial_by_hand(self):
        # z = 1/2: -z^5/4 + z^4/2 + 5z^3/8 - 5z^2/3 + 1
        z = 0.5
        expected = -z**5 / 4 + z**4 / 2 + 5 * z**3 / 8 - 5 * z**2 / 3 + 1
        assert gaspari_cohn(2.0, 4.0) == pytest.approx(expected, abs=1e-15)

    def test_outer_polynomial_by_hand(self):
        z = 1.5
        expected = z**5 / 12 - z**4 / 2 + 5 * z**3 / 8 + 5 * z**2 / 3 - 5 * z + 4 - 2 / (3 * z)
        assert gaspari_cohn(6.0, 4.0) == pytest.approx(expected, abs=1e-15)

    def test_continuity_at_breakpoints(self):
        c = 2.0
        for z in (1.0, 2.0):
            lo, hi = gaspari_cohn(z * c - 1e-9, c), gaspari_cohn(z * c + 1e-9, c)
            assert abs(lo - hi) < 1e-7

    def test_monotone_on_grid(self):
        r = np.arange(0.0, 10.0, 1e-3)
        vals = gaspari_cohn(r, 4.0)
        assert np.all(np.diff(vals) <= 1e-15)

    def test_infinite_radius(self):
        assert gaspari_cohn(100.0, np.inf) == 1.0

    @pytest.mark.parametrize("distance,radius", [(-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
    def test_invalid(self, distance, radius):
        with pytest.raises(InvalidInputError):
            gaspari_cohn(distance, radius)


class TestLocalization:
    def test_no_localization_is_all_ones(self):
        rho = build_localization(LocalizationSpec({"x": 4.0}, enabled=False), single_scale_layout(10))
        np.testing.assert_array_equal(rho, np.ones((10, 10)))

    def test_cyclic_support(self):
        rho = build_localization(LocalizationSpec({"x": 4.0}), single_scale_layout(40))
        for i in range(40):
            assert rho[i, (i + 8) % 40] == 0.0
            assert rho[i, (i - 8) % 40] == 0.0
            assert rho[i, (i + 7) % 40] > 0.0
        np.testing.assert_array_equal(np.diag(rho), np.ones(40))

    def test_cyclic_distance(self):
        assert cyclic_distance(0, 39, 40) == 1
        assert cyclic_distance(5, 25, 40) == 20

    def test_single_scale_psd_and_symmetric(self):
        rho = build_localization(LocalizationSpec({"x": 4.0}), single_scale_layout(40))
        np.testing.assert_array_equal(rho, rho.T)
        assert np.linalg.eigvalsh(rho)[0] >= -1e-8

    def test_two_scale_properties(self):
        layout = two_scale_layout(20, 10)
        rho = build_localization(LocalizationSpec({"x": 4.0, "y": 40.0}), layout)
        assert rho.shape == (220, 220)
        np.testing.assert_allclose(rho, rho.T, atol=1e-14)
        np.testing.assert_allclose(np.diag(rho), 1.0, atol=1e-12)
        assert np.linalg.eigvalsh(rho)[0] >= -1e-8
        # x far apart stays uncorrelated
        assert abs(rho[0, 10]) < 0.05

    def test_two_scale_layout_ring_order(self):
        layout = two_scale_layout(3, 2)
        # y_{j,i} (1-based j, i) at vec index D + (j-1) D + (i-1), ring position (i-1) d + (j-1)
        assert layout.positions[3 + 0 * 3 + 1] == 1 * 2 + 0
        assert layout.positions[3 + 1 * 3 + 0] == 0 * 2 + 1
        assert list(layout.parents[3:]) == [0, 1, 2, 0, 1, 2]

    def test_missing_radius(self):
        with pytest.raises(InvalidInputError):
            build_localization(LocalizationSpec({"x": 4.0}), two_scale_layout(4, 2))

    def test_bad_radius(self):
        with pytest.raises(InvalidInputError):
            LocalizationSpec({"x": 0.0})
