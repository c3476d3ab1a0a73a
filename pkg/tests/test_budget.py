import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lap2.accountant import MechanismConfig, MomentProfile
from lap2.budget import (account, alpha_lower_bound, bisect_noise, compose, delta_for_epsilon, delta_of,
                         epsilon_for_delta, epsilon_lower_bound, epsilon_of, invert_noise_for_epsilon,
                         log_log_slope, moment_profile, wall_diagnostics)
from lap2.errors import DomainError, InfeasibleError, InvariantError
from lap2.gaussian import GaussianVariant

LAM = np.arange(1, 4097)


def _profile(alphas, scope="composed"):
    return MomentProfile("lap2", LAM[: len(alphas)], alphas, scope=scope)


@st.composite
def convex_profiles(draw):
    a = draw(st.floats(1e-7, 1e-2))
    b = draw(st.floats(0.0, 1e-2))
    lam = LAM[:512].astype(float)
    return _profile(a * lam * (lam + 1) + b * lam)


class TestCompose:
    def test_identity_and_linearity(self):
        p = _profile(np.linspace(0, 1, 10), scope="per_step")
        assert np.array_equal(compose(p, 1).alphas, p.alphas)
        np.testing.assert_allclose(compose(p, 5860).alphas, 5860 * p.alphas)
        assert compose(p, 3).scope == "composed"

    def test_zero_and_infinite(self):
        p = _profile(np.array([0.0, 0.0, np.inf]), scope="per_step")
        out = compose(p, 7).alphas
        assert out[0] == 0.0 and out[2] == np.inf

    def test_errors(self):
        p = _profile(np.zeros(3), scope="per_step")
        with pytest.raises(DomainError):
            compose(p, 0)
        with pytest.raises(DomainError):
            compose(compose(p, 2), 2)


class TestConversions:
    def test_delta_trivial_cases(self):
        assert delta_for_epsilon(_profile(np.zeros(50)), 0.0).delta == 1.0
        assert delta_for_epsilon(_profile(LAM[:50].astype(float)), 1.0).delta == 1.0

    def test_epsilon_of_zero_profile(self):
        point = epsilon_for_delta(_profile(np.zeros(4096)), 1e-5)
        lam = LAM.astype(float)
        naive = np.min(np.log(lam / (lam + 1)) - (math.log(1e-5) + np.log(lam + 1)) / lam)
        assert point.epsilon == pytest.approx(naive, rel=1e-14)
        f1000 = math.log(1000 / 1001) - (math.log(1e-5) + math.log(1001)) / 1000
        assert f1000 == pytest.approx(0.00360, abs=5e-6)
        assert point.epsilon <= f1000

    def test_infinite_profile_is_infeasible(self):
        with pytest.raises(InfeasibleError):
            epsilon_for_delta(_profile(np.full(8, np.inf)), 1e-5)

    @given(convex_profiles(), st.floats(1e-12, 0.5))
    def test_balle_not_above_simple(self, prof, delta):
        assert epsilon_for_delta(prof, delta).epsilon <= epsilon_for_delta(prof, delta, "simple").epsilon

    @given(convex_profiles(), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_delta_nonincreasing_in_epsilon(self, prof, e1, e2):
        lo, hi = sorted((e1, e2))
        assert delta_for_epsilon(prof, hi).delta <= delta_for_epsilon(prof, lo).delta

    @given(convex_profiles(), st.floats(1e-10, 0.5), st.floats(1e-10, 0.5))
    def test_epsilon_nonincreasing_in_delta(self, prof, d1, d2):
        lo, hi = sorted((d1, d2))
        assert epsilon_for_delta(prof, hi).epsilon <= epsilon_for_delta(prof, lo).epsilon

    @given(convex_profiles(), st.floats(1e-10, 0.5))
    def test_round_trip(self, prof, delta):
        eps = epsilon_for_delta(prof, delta, "simple").epsilon
        assert delta_for_epsilon(prof, eps).delta <= delta * (1 + 1e-9)

    def test_unknown_method(self):
        with pytest.raises(DomainError):
            epsilon_for_delta(_profile(np.zeros(3)), 1e-5, "other")


class TestConfigLevel:
    def test_pure_laplace(self):
        cfg = MechanismConfig("pure_laplace", 2.0, 0.5)
        assert epsilon_of(cfg).epsilon == 4.0 and epsilon_of(cfg).delta == 0.0
        assert account(cfg).epsilon == 4.0
        with pytest.raises(DomainError):
            moment_profile(cfg)

    def test_silent_config(self):
        cfg = MechanismConfig("lap2", 1.0, 1.0, 0.0, 100, 10, 0.3)
        assert epsilon_of(cfg).epsilon == 0.0
        assert delta_of(cfg, 0.0).delta == 0.0
        rep = account(cfg)
        assert rep.epsilon == 0.0 and rep.per_step_alpha == 0.0

    @pytest.mark.parametrize("mech", ["lap2", "gaussian", "laplace_l1"])
    def test_lower_bound_is_below(self, mech):
        for noise in (0.3, 1.0, 4.0):
            cfg = MechanismConfig(mech, 1.0, noise, 0.05, 200, 8, 1e-5, 512)
            assert epsilon_lower_bound(cfg) <= epsilon_of(cfg).epsilon
            prof = moment_profile(cfg, np.arange(1, 513))
            assert np.all(alpha_lower_bound(cfg, np.arange(1, 513)) <= prof.alphas * (1 + 1e-12))

    @pytest.mark.parametrize("sigma,zeta", [(0.6, 0.01), (1.0, 0.1), (3.0, 0.5), (0.9, 1.0)])
    def test_gaussian_pruned_scan_matches_full(self, sigma, zeta):
        cfg = MechanismConfig("gaussian", 1.0, sigma, zeta, 300, 1, 1e-5, 1024)
        composed = compose(moment_profile(cfg), cfg.steps)
        full = epsilon_for_delta(composed, cfg.delta)
        assert epsilon_of(cfg) == full
        assert delta_of(cfg, 2.0) == delta_for_epsilon(composed, 2.0)

    def test_account_report(self):
        cfg = MechanismConfig("lap2", 1.0, 1.0, 0.01, 1000, 4, 1e-5)
        rep = account(cfg)
        assert rep.epsilon == epsilon_of(cfg).epsilon
        assert rep.per_step_alpha == pytest.approx(moment_profile(cfg, [rep.lambda_star]).alphas[0])
        assert rep.mode == "exact" and rep.exact
        big = account(cfg.replace(dim=1000, lambda_max=256))
        assert big.mode == "bucketed"

    def test_paper_exact_variant_reaches_account(self):
        cfg = MechanismConfig("gaussian", 1.0, 1.1, 0.01, 1000, 1, 1e-5)
        normal = account(cfg).epsilon
        audit = account(cfg, variant=GaussianVariant.PAPER_EXACT).epsilon
        assert audit < normal


class TestInversion:
    cfg = MechanismConfig("lap2", 1.0, 1.0, 0.01, 500, 3, 1e-5, 512)

    def test_fixed_point(self):
        b0 = 1.7
        target = epsilon_of(self.cfg.replace(noise_scale=b0)).epsilon
        b = invert_noise_for_epsilon(self.cfg, target, tau=1e-6)
        assert abs(b - b0) <= 1e-6 + 1e-12
        assert epsilon_of(self.cfg.replace(noise_scale=b)).epsilon <= target

    def test_already_feasible_returns_lo(self):
        assert invert_noise_for_epsilon(self.cfg, 1e6, bounds=(0.5, 10.0)) == 0.5

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            invert_noise_for_epsilon(self.cfg, 1e-4, bounds=(0.5, 2.0))

    def test_warm_start_gives_same_answer(self):
        cold = invert_noise_for_epsilon(self.cfg, 1.0, tau=1e-7)
        warm = invert_noise_for_epsilon(self.cfg, 1.0, tau=1e-7, start=0.3)
        assert abs(cold - warm) <= 2e-7

    def test_monotonicity_violation(self):
        with pytest.raises(InvariantError):
            invert_noise_for_epsilon(self.cfg, 1.0, bounds=(1.0, 2.0), epsilon_fn=lambda c: c.noise_scale - 1.5)

    def test_domain(self):
        with pytest.raises(DomainError):
            invert_noise_for_epsilon(self.cfg, 1.0, bounds=(2.0, 1.0))
        with pytest.raises(DomainError):
            invert_noise_for_epsilon(self.cfg, 0.0)

    def test_bisect_tolerance(self):
        root = math.pi
        b = bisect_noise(lambda x: x >= root, 0.0, 10.0, 1e-9)
        assert root <= b <= root + 1e-9

    def test_mnist_inversion_against_fine_grid(self):
        cfg = MechanismConfig("lap2", 1.0, 1.0, 0.0043, 5860, 26000, 1e-5)
        b = invert_noise_for_epsilon(cfg, 0.88, start=2.7)
        assert b == pytest.approx(2.7714, rel=2e-4)
        # Fine grid at the bisection resolution: b is feasible, one step below is not.
        step = 1e-4 * b
        assert epsilon_of(cfg.replace(noise_scale=b)).epsilon <= 0.88
        assert epsilon_of(cfg.replace(noise_scale=b - step)).epsilon > 0.88 - 1e-3


class TestWalls:
    grid = np.array([0.5, 1.0, 2.0, 4.0])

    def test_synthetic_slope(self):
        reps = wall_diagnostics([0.01, 0.1], self.grid, 1e-5, 10, 10,
                                inverter=lambda m, q, e: 1.0 / e, delta_fn=lambda m, q, e, s: 1e-6)
        assert [r.sampling_rate for r in reps] == [0.01, 0.1]
        for rep in reps:
            for row in rep.rows:
                assert row.w_r_gaussian == pytest.approx(1.0, abs=1e-12)
            assert rep.left_wall_epsilon is None

    def test_left_wall_first_point(self):
        rep = wall_diagnostics([0.01], self.grid, 1e-5, 10, 10, inverter=lambda m, q, e: 1.0 / e,
                               delta_fn=lambda m, q, e, s: 3e-6 if m == "gaussian" else 1e-6)[0]
        assert rep.left_wall_epsilon == 0.5
        assert [r.left_wall for r in rep.rows] == [True, False, False, False]

    def test_left_wall_is_strict(self):
        rep = wall_diagnostics([0.01], self.grid, 1e-5, 10, 10, inverter=lambda m, q, e: 1.0 / e,
                               delta_fn=lambda m, q, e, s: 2e-6 if m == "gaussian" else 1e-6)[0]
        assert rep.left_wall_epsilon is None

    def test_gaussian_noise_is_variance_matched(self):
        seen = []

        def delta_fn(mech, q, e, noise):
            seen.append((mech, noise))
            return 0.0

        wall_diagnostics([0.01], self.grid, 1e-5, 10, 10, inverter=lambda m, q, e: 2.0 / e, delta_fn=delta_fn)
        for (m1, n1), (m2, n2) in zip(seen[::2], seen[1::2]):
            assert {m1, m2} == {"lap2", "gaussian"}
            lap, gau = (n1, n2) if m1 == "lap2" else (n2, n1)
            assert gau == pytest.approx(lap * math.sqrt(2))

    def test_infeasible_rows_are_nan(self):
        rep = wall_diagnostics([0.5], np.array([1e-3, 2e-3, 4e-3]), 1e-5, 1, 1000, bounds=(1e-2, 1e-1))[0]
        assert all(math.isnan(r.noise_lap2) for r in rep.rows)

    def test_grid_validation(self):
        with pytest.raises(DomainError):
            wall_diagnostics([0.01], [1.0, 2.0], 1e-5, 1, 1)
        with pytest.raises(DomainError):
            wall_diagnostics([0.01], [1.0, 3.0, 2.0], 1e-5, 1, 1)

    def test_log_log_slope(self):
        x = np.array([1.0, 2.0, 4.0, 8.0])
        np.testing.assert_allclose(log_log_slope(x, x ** -2), 2.0)
        assert np.isnan(log_log_slope(x, np.array([1.0, np.nan, 1.0, 1.0]))[1])
