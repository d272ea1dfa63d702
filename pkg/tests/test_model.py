import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import hwsim
from hwsim.model import (SimplexError, WorkConservationError, cone_boundary_gap,
                         in_cone, project_simplex)


@pytest.fixture
def two_class():
    return hwsim.make_system([0.5, 0.5], [1.0, 1.0], hat_lambda=[-0.5, -0.5])


def spec_of(params, varrho=None):
    return hwsim.diffusion_spec(params, varrho)


class TestSystemParams:
    def test_load_must_be_critical(self):
        with pytest.raises(ValueError, match="must be 1"):
            hwsim.make_system([0.5, 0.5], [1.0, 1.2])

    def test_beta_is_derived(self, two_class):
        assert np.allclose(two_class.beta, two_class.gamma / two_class.mu)

    def test_spare_capacity_zero_perturbations(self):
        sp = hwsim.make_system([0.5, 0.5], [1.0, 1.0])
        assert hwsim.spare_capacity(sp) == 0.0

    def test_spare_capacity_hand_value(self, two_class):
        assert hwsim.spare_capacity(two_class) == pytest.approx(1.0)

    def test_spare_capacity_cancellation(self):
        # hat_mu_i = hat_lambda_i / rho_i cancels termwise
        lam = np.array([0.4, 0.9])
        mu = np.array([1.0, 1.5])
        hat_lambda = np.array([0.3, -0.2])
        rho = lam / mu
        sp = hwsim.make_system(lam, mu, hat_lambda=hat_lambda, hat_mu=hat_lambda / rho)
        assert hwsim.spare_capacity(sp) == pytest.approx(0.0, abs=1e-12)


class TestSimplex:
    def test_projection_accepts_tolerance(self):
        u = project_simplex([0.5 + 4e-13, 0.5 - 6e-13])
        assert u.sum() == pytest.approx(1.0, abs=1e-15)

    def test_rejects_negative_beyond_tolerance(self):
        with pytest.raises(SimplexError):
            project_simplex([1.1, -0.1])

    def test_rejects_bad_sum(self):
        with pytest.raises(SimplexError):
            project_simplex([0.6, 0.6])


class TestDrift:
    def test_hand_value_positive_branch(self, two_class):
        ds = spec_of(two_class)
        b = hwsim.drift(np.array([1.0, 1.0]), np.array([1.0, 0.0]), ds)
        assert np.allclose(b, [0.5, -1.5])

    def test_negative_branch_u_independent(self):
        ds = hwsim.DiffusionSpec(2.0, [1.0, 2.0], [0.7, 0.2], [1.0, 1.0])
        x = np.array([-1.0, -1.0])
        b1 = hwsim.drift(x, [1.0, 0.0], ds)
        b2 = hwsim.drift(x, [0.25, 0.75], ds)
        assert np.allclose(b1, [0.0, 0.0])
        assert np.array_equal(b1, b2)

    def test_origin(self, two_class):
        ds = spec_of(two_class)
        b = hwsim.drift(np.zeros(2), [0.3, 0.7], ds)
        assert np.allclose(b, -(ds.varrho / 2) * ds.mu)

    def test_continuity_across_boundary(self, two_class):
        ds = spec_of(two_class)
        rng = np.random.default_rng(0)
        for _ in range(50):
            v = rng.normal(size=2)
            x = v - v.sum() / 2  # <e,x> = 0
            u = rng.dirichlet([1, 1])
            left = -(ds.varrho / 2) * ds.mu - ds.mu * x
            assert np.allclose(hwsim.drift(x, u, ds), left, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_negative_halfspace_ignores_control(self, seed):
        ds = hwsim.DiffusionSpec(1.0, [1.0, 1.5, 0.5], [0.2, 0.0, 1.0], [1.0, 1.0, 1.0])
        rng = np.random.default_rng(seed)
        x = -np.abs(rng.normal(size=3)) * rng.uniform(0, 5)
        u1, u2 = rng.dirichlet([1, 1, 1]), rng.dirichlet([1, 1, 1])
        assert np.array_equal(hwsim.drift(x, u1, ds), hwsim.drift(x, u2, ds))

    def test_rejects_off_simplex_control(self, two_class):
        with pytest.raises(SimplexError):
            hwsim.drift(np.zeros(2), [0.7, 0.7], spec_of(two_class))


class TestTruncatedDrift:
    def test_infinite_truncation_matches_drift(self, two_class):
        ds = hwsim.DiffusionSpec(1.0, two_class.mu, np.array([0.4, 1.3]),
                                 two_class.lambda_ * 2)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(100, 2)) * 5
        u = rng.dirichlet([1, 1], size=100)
        assert np.allclose(hwsim.drift_truncated(x, u, ds, math.inf),
                           hwsim.drift(x, u, ds))

    def test_indicator_drops_abandonment(self):
        ds = hwsim.DiffusionSpec(1.0, [1.0, 1.0], [1.0, 1.0], [1.0, 1.0])
        x = np.array([5.0, 0.5])
        u = np.array([0.5, 0.5])
        b = hwsim.drift_truncated(x, u, ds, 1.0)
        pos = x.sum()
        expected0 = -0.5 - (x[0] - pos * 0.5)            # gamma term dropped
        expected1 = -0.5 - (x[1] - pos * 0.5) - pos * 0.5
        assert np.allclose(b, [expected0, expected1])

    def test_zero_abandonment_truncation_free(self, two_class):
        ds = spec_of(two_class)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(50, 2)) * 3
        u = rng.dirichlet([1, 1], size=50)
        for c in (1.0, 2.5, math.inf):
            assert np.allclose(hwsim.drift_truncated(x, u, ds, c), hwsim.drift(x, u, ds))

    def test_rejects_small_truncation(self, two_class):
        with pytest.raises(ValueError):
            hwsim.drift_truncated(np.zeros(2), [0.5, 0.5], spec_of(two_class), 0.5)


class TestCones:
    def test_sign_of_sum(self):
        assert hwsim.cone_membership([1.0, -2.0], 0.0) == "minus"

    def test_orthant_at_delta_one(self):
        assert hwsim.cone_membership([1.0, 2.0], 1.0) == "plus"
        assert hwsim.cone_membership([1.0, -0.001], 1.0) == "neither"

    def test_half_delta(self):
        assert hwsim.cone_membership([3.0, -1.0], 0.5) == "plus"

    @pytest.mark.parametrize("delta", [0.0, 0.25, 0.5, 1.0])
    def test_boundary_identity(self, delta):
        # on the boundary of K_delta^+/-: <e,x^+> = (1 +/- delta)/2 ||x||_1
        rng = np.random.default_rng(3)
        pts = []
        for _ in range(200):
            v = np.abs(rng.normal(size=2)) + 1e-3
            # construct x with x1 > 0 > x2 and <e,x> = delta ||x||_1 exactly
            # x1 - a = delta (x1 + a) => a = x1 (1 - delta) / (1 + delta)
            x1 = v[0]
            a = x1 * (1 - delta) / (1 + delta)
            pts.append([x1, -a])
            pts.append([-x1, a])
        pts = np.array(pts)
        gap = cone_boundary_gap(pts, delta)
        assert np.max(np.abs(gap)) < 1e-10

    def test_vectorized_classification(self):
        x = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -0.5]])
        assert np.array_equal(in_cone(x, 0.9), [1, -1, 0])


class TestScaling:
    def test_hand_value(self):
        p = hwsim.PrelimitParams(100, [45.0, 45.0], [1.0, 1.0], [0.0, 0.0])
        assert p.varrho_n == pytest.approx(1.0)
        assert np.allclose(hwsim.scale_state([50, 50], p), [0.0, 0.0])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_round_trip(self, seed):
        rng = np.random.default_rng(seed)
        p = hwsim.prelimit_params(
            hwsim.make_system([0.5, 0.5], [1.0, 1.0], hat_lambda=[-0.5, -0.5]), 64)
        x = rng.integers(0, 200, size=2)
        back = hwsim.unscale_state(hwsim.scale_state(x, p), p)
        assert np.allclose(back, x, atol=1e-9)

    def test_sum_identity(self):
        sp = hwsim.make_system([0.4, 0.9], [1.0, 1.5], hat_lambda=[-0.3, -0.3],
                               hat_mu=[0.1, 0.0])
        p = hwsim.prelimit_params(sp, 81)
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.integers(0, 300, size=2)
            lhs = hwsim.scale_state(x, p).sum()
            assert lhs == pytest.approx((x.sum() - 81) / 9.0, abs=1e-10)


class TestAllocationToControl:
    def test_negative_total_returns_none(self):
        xhat = np.array([-1.0, -0.5])
        assert hwsim.allocation_to_control(xhat, xhat) is None

    def test_recover_control(self):
        u = hwsim.allocation_to_control(np.array([2.0, 1.0]), np.zeros(2))
        assert np.allclose(u, [2 / 3, 1 / 3])

    def test_sum_one(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            xhat = rng.normal(size=3) + 1.0
            if xhat.sum() <= 0:
                continue
            u = rng.dirichlet([1, 1, 1])
            zhat = xhat - xhat.sum() * u
            rec = hwsim.allocation_to_control(xhat, zhat)
            assert rec.sum() == pytest.approx(1.0, abs=1e-12)
            assert np.allclose(rec, u, atol=1e-9)

    def test_flags_non_work_conserving(self):
        with pytest.raises(WorkConservationError):
            hwsim.allocation_to_control(np.array([-1.0, -1.0]), np.array([0.0, 0.0]))
        with pytest.raises(WorkConservationError):
            hwsim.allocation_to_control(np.array([2.0, 1.0]), np.array([4.0, 4.0]))


class TestPrelimitFamily:
    def test_rates_realize_limits(self):
        sp = hwsim.make_system([0.5, 0.5], [1.0, 1.0], gamma=[0.3, 0.0],
                               hat_lambda=[-0.5, -0.5])
        varrho = hwsim.spare_capacity(sp)
        for n in (25, 400, 10_000):
            p = hwsim.prelimit_params(sp, n)
            assert np.allclose(p.lambda_n / n, sp.lambda_, atol=1.0 / math.sqrt(n))
            assert p.varrho_n == pytest.approx(varrho, abs=1e-9)
            assert np.array_equal(p.gamma_n, sp.gamma)

    def test_diffusion_spec_invariant(self):
        sp = hwsim.make_system([0.5, 0.5], [1.0, 1.0], scv=[1.4, 0.6])
        ds = hwsim.diffusion_spec(sp)
        assert np.sum(ds.lambda_tilde / ds.mu) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            hwsim.DiffusionSpec(1.0, [1.0, 1.0], [0.0, 0.0], [3.0, 3.0]).validate()
