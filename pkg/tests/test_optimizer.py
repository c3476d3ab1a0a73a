import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lap2.accountant import MechanismConfig
from lap2.budget import PrivacyPoint, epsilon_of, invert_noise_for_epsilon
from lap2.errors import DomainError
from lap2.optimizer import SearchSpec, b_star_init, optimize_parameters, rho_star, snr_kappa

eps_s = st.floats(0.01, 20.0)
zeta_s = st.floats(1e-5, 1.0)
steps_s = st.integers(1, 10 ** 6)
delta_s = st.floats(1e-12, 0.5)


def test_snr_kappa():
    assert snr_kappa(0) == 0.0
    assert snr_kappa(1) == pytest.approx(1 / 3)
    assert snr_kappa(4096) == 4096 * 4097 / (2 * 8193)
    # Asymptotically kappa ~ (lam + 1/2) / 4, so lam / 4 is off by about 1 / (2 lam).
    assert snr_kappa(4096) / (4096 / 4) - 1 == pytest.approx(1 / 8192, rel=1e-3)
    with pytest.raises(DomainError):
        snr_kappa(-1)


def test_closed_form_values():
    assert rho_star(1.0, 0.01, 1000, 1e-5) == pytest.approx(0.465991, abs=5e-7)
    assert b_star_init(1.0, 1.0, 0.01, 1000, 1e-5) == pytest.approx(2.145966, abs=5e-7)


@given(st.floats(0.01, 10.0), eps_s, zeta_s, steps_s, delta_s)
def test_identity_and_linearity(clip, eps, zeta, steps, delta):
    b = b_star_init(clip, eps, zeta, steps, delta)
    assert b * rho_star(eps, zeta, steps, delta) == pytest.approx(clip, rel=1e-12)
    assert b_star_init(2 * clip, eps, zeta, steps, delta) == pytest.approx(2 * b, rel=1e-14)
    assert rho_star(2 * eps, zeta, steps, delta) == pytest.approx(2 * rho_star(eps, zeta, steps, delta), rel=1e-14)


@pytest.mark.parametrize("args", [(0.0, 0.01, 10, 1e-5), (1.0, 0.0, 10, 1e-5), (1.0, 0.01, 0, 1e-5),
                                  (1.0, 0.01, 10, 1.0)])
def test_closed_form_domain(args):
    with pytest.raises(DomainError):
        rho_star(*args)


@pytest.mark.parametrize("eps", [3.42, 2.53, 1.68, 0.88, 0.13])
def test_initialization_near_search_on_mnist_rates(eps):
    cfg = MechanismConfig("lap2", 1.0, 1.0, 0.0043, 5860, 1, 1e-5)
    ratio = b_star_init(1.0, eps, 0.0043, 5860, 1e-5) / invert_noise_for_epsilon(cfg, eps)
    assert 0.5 <= ratio <= 2.0


class TestSearchSpec:
    @pytest.mark.parametrize("changes", [dict(c_min=0.0), dict(c_min=2.0, c_max=1.0), dict(b_min=5.0, b_max=5.0),
                                         dict(c_steps=0), dict(c_spacing="cubic"), dict(tau=0.0),
                                         dict(lambda_max=0), dict(b_max=math.inf)])
    def test_invalid(self, changes):
        with pytest.raises(DomainError):
            SearchSpec(**changes)

    def test_grids(self):
        np.testing.assert_allclose(SearchSpec(c_min=1, c_max=4, c_steps=4, c_spacing="linear").c_grid(), [1, 2, 3, 4])
        np.testing.assert_allclose(SearchSpec(c_min=1, c_max=8, c_steps=4).c_grid(), [1, 2, 4, 8])
        assert SearchSpec(c_steps=1).c_grid().tolist() == [0.01]


SMALL = SearchSpec(c_min=0.1, c_max=4.0, c_steps=6, lambda_max=512)


class TestOptimize:
    def test_contract(self):
        res = optimize_parameters(1000, 0.01, 1, PrivacyPoint(1.0, 1e-5), SMALL)
        assert res.feasible
        assert res.achieved_epsilon <= 1.0
        assert res.rho_star == res.c_star / res.b_star
        point = epsilon_of(MechanismConfig("lap2", res.c_star, res.b_star, 0.01, 1000, 1, 1e-5, 512))
        assert point.epsilon == res.achieved_epsilon and point.lambda_star == res.lambda_star

    def test_single_point_grid_is_inversion(self):
        spec = SearchSpec(c_min=1.0, c_max=1.0, c_steps=1, lambda_max=512, tau=1e-6)
        res = optimize_parameters(800, 0.02, 2, PrivacyPoint(1.5, 1e-5), spec)
        cfg = MechanismConfig("lap2", 1.0, 1.0, 0.02, 800, 2, 1e-5, 512)
        b = invert_noise_for_epsilon(cfg, 1.5, tau=1e-6)
        assert res.c_star == 1.0
        assert abs(res.b_star - b) <= 2e-6

    def test_infeasible_box(self):
        spec = SearchSpec(c_min=1.0, c_max=2.0, c_steps=2, b_min=1e-4, b_max=1e-3, lambda_max=256)
        res = optimize_parameters(1000, 0.01, 1, PrivacyPoint(1.0, 1e-5), spec)
        assert not res.feasible and res.c_star is None and res.b_star is None

    def test_b_min_limits_every_c(self):
        # Tiny b_min is unreachable for small C: the best pair uses the largest C.
        spec = SearchSpec(c_min=0.01, c_max=0.1, c_steps=3, b_min=1.0, b_max=100.0, lambda_max=256)
        res = optimize_parameters(100, 0.01, 1, PrivacyPoint(8.0, 1e-5), spec)
        assert res.feasible and res.b_star == 1.0 and res.c_star == pytest.approx(0.1)

    def test_monotone_in_target(self):
        rhos = [optimize_parameters(500, 0.02, 2, PrivacyPoint(e, 1e-5), SMALL).rho_star for e in (0.5, 1.0, 2.0)]
        assert rhos[0] < rhos[1] < rhos[2]

    def test_ratio_is_shared_across_c(self):
        # The bound depends only on C/b, so every interior C lands on the same ratio.
        res = optimize_parameters(1000, 0.01, 4, PrivacyPoint(1.0, 1e-5), SMALL)
        cfg = MechanismConfig("lap2", 0.5, 0.5 / res.rho_star, 0.01, 1000, 4, 1e-5, 512)
        assert epsilon_of(cfg).epsilon == pytest.approx(res.achieved_epsilon, rel=1e-9)

    def test_rejects_bad_target(self):
        with pytest.raises(DomainError):
            optimize_parameters(10, 0.01, 1, PrivacyPoint(0.0, 1e-5), SMALL)
