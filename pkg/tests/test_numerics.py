import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb, logsumexp

from lap2.errors import DomainError
from lap2.numerics import (SubsampleWeights, log_binomial, log_expm1, log_subsample_weight,
                           log_subsample_weight_matrix, log_sum_exp, subsample_weights)

finite = st.floats(-700, 700, allow_nan=False)


@given(st.lists(finite, min_size=1, max_size=30))
def test_log_sum_exp_matches_scipy(xs):
    assert log_sum_exp(xs) == pytest.approx(float(logsumexp(xs)), rel=1e-12, abs=1e-12)


def test_log_sum_exp_infinities_and_empty():
    assert log_sum_exp([]) == -math.inf
    assert log_sum_exp([-np.inf, -np.inf]) == -math.inf
    assert log_sum_exp([1.0, np.inf]) == math.inf
    assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000.0 + math.log(2))
    out = log_sum_exp(np.array([[0.0, 0.0], [-np.inf, -np.inf]]), axis=1)
    np.testing.assert_allclose(out, [math.log(2), -np.inf])


@given(st.integers(0, 300), st.data())
def test_log_binomial_matches_exact(m, data):
    k = data.draw(st.integers(0, m))
    assert log_binomial(m, k) == pytest.approx(math.log(comb(m, k, exact=True)), rel=1e-12, abs=1e-12)


def test_log_binomial_domain():
    with pytest.raises(DomainError):
        log_binomial(3, 4)
    with pytest.raises(DomainError):
        log_binomial(3, -1)


def test_subsample_weights_sum_to_one():
    for zeta in (0.0, 1e-3, 0.3, 1.0):
        for lam in (0, 1, 7, 100):
            w = log_subsample_weight(lam, np.arange(lam + 2), zeta)
            assert log_sum_exp(w) == pytest.approx(0.0, abs=1e-12)


def test_subsample_weight_endpoints_are_exact():
    assert log_subsample_weight(3, 0, 0.0) == 0.0
    assert log_subsample_weight(3, 1, 0.0) == -math.inf
    assert log_subsample_weight(3, 4, 1.0) == 0.0
    assert log_subsample_weight(3, 2, 1.0) == -math.inf
    with pytest.raises(DomainError):
        log_subsample_weight(3, 5, 0.5)
    with pytest.raises(DomainError):
        log_subsample_weight(3, 1, 1.5)


def test_weight_matrix_agrees_with_scalar_version():
    m = np.array([1, 5, 40])
    eta = np.arange(0, 45)
    mat = log_subsample_weight_matrix(m, eta, 0.07)
    for i, mm in enumerate(m):
        for j, e in enumerate(eta):
            if e > mm:
                assert mat[i, j] == -np.inf
            else:
                assert mat[i, j] == pytest.approx(log_subsample_weight(mm - 1, e, 0.07), abs=1e-11)


@given(st.floats(0, 50, allow_nan=False))
def test_log_expm1(x):
    got = log_expm1(x)
    if x == 0:
        assert got == -math.inf
    else:
        assert got == pytest.approx(math.log(math.expm1(x)), rel=1e-12)
    assert log_expm1(800.0) == pytest.approx(800.0)


def _naive(zeta, m, terms):
    out = []
    for mm in m:
        k = min(mm, terms.size + 1)
        eta = np.arange(2, k + 1)
        w = [log_subsample_weight(mm - 1, e, zeta) for e in eta]
        out.append(float(logsumexp(np.array(w) + terms[: k - 1])) if k >= 2 else -np.inf)
    return np.array(out)


@pytest.mark.parametrize("zeta", [1e-3, 0.1, 0.5, 1.0])
def test_weighted_sum_paths_agree(zeta):
    m = np.array([1, 2, 3, 17, 64, 200])
    rng = np.random.default_rng(1)
    # Terms spanning hundreds of orders of magnitude exercise the fallback paths.
    terms = np.cumsum(rng.uniform(-30, 40, size=250))
    table = SubsampleWeights(zeta, m)
    ref = _naive(zeta, m, terms)
    np.testing.assert_allclose(table.log_weighted_sum(terms), ref, rtol=1e-11, atol=1e-11)
    np.testing.assert_allclose(table.log_weighted_sum_direct(terms), ref, rtol=1e-11, atol=1e-11)
    both = table.log_weighted_sum(np.stack([terms, terms - 5.0], axis=1))
    np.testing.assert_allclose(both[:, 1], ref - 5.0, rtol=1e-11, atol=1e-11)


def test_weighted_sum_handles_minus_inf_terms():
    table = SubsampleWeights(0.2, np.array([3, 10]))
    terms = np.full(20, -np.inf)
    assert np.all(table.log_weighted_sum(terms) == -np.inf)
    terms[3] = 0.0
    np.testing.assert_allclose(table.log_weighted_sum(terms), _naive(0.2, [3, 10], terms))


def test_weight_cache_is_shared():
    m = np.arange(2, 10)
    assert subsample_weights(0.3, m) is subsample_weights(0.3, m.copy())
