"""Moments accountant for the subsampled Gaussian mechanism.

Used as the baseline that Laplace noise is compared against. With noise
multiplier ``sigma`` (noise standard deviation over the clipping norm) the
per-step bound is::

    alpha(lam) = log sum_eta C(lam+1, eta) (1-zeta)^(lam+1-eta) zeta^eta
                     exp(eta (eta - 1) / (2 sigma^2))

The clipping norm does not enter except through ``sigma``.
"""

from __future__ import annotations

import enum
import math
from typing import Optional

import numpy as np

from lap2.accountant import MechanismConfig, MomentProfile, _validate_lambdas, _validate_zeta
from lap2.errors import DomainError
from lap2.numerics import log_binomial, log_expm1, log_sum_exp, subsample_weights


class GaussianVariant(str, enum.Enum):
    """Which binomial indexing to use.

    ``NORMALIZED`` draws ``eta`` from Binomial(lam + 1, zeta), so the weights
    form a distribution and the bound is 0 when ``zeta = 0``.
    ``PAPER_EXACT`` pairs ``C(lam, eta)`` with the exponent ``lam + 1 - eta``;
    its weights sum to ``1 - zeta`` and the result can be negative. It is kept
    only for audits.
    """

    NORMALIZED = "normalized"
    PAPER_EXACT = "paper_exact"


def _check_sigma(sigma):
    if not (isinstance(sigma, (int, float, np.floating)) and sigma > 0):
        raise DomainError(f"sigma must be > 0, got {sigma!r}")


def _log_kernel_excess(eta, sigma):
    """``log(exp(eta (eta - 1) / (2 sigma^2)) - 1)``."""
    eta = np.asarray(eta, dtype=float)
    if math.isinf(sigma):
        return np.full(eta.shape, -np.inf)
    return log_expm1(eta * (eta - 1) / (2.0 * sigma * sigma))


def alpha_gaussian(sigma, zeta, lam, variant=GaussianVariant.NORMALIZED) -> float:
    """Per-step moment bound of the subsampled Gaussian mechanism.

    Args:
        sigma: Noise multiplier, > 0 (``inf`` means no signal).
        zeta: Sampling rate in [0, 1].
        lam: Integer order >= 0.
        variant: Binomial indexing, see GaussianVariant.

    Returns:
        ``alpha(lam)``; ``inf`` when the sum overflows.
    """
    _check_sigma(sigma)
    _validate_zeta(zeta)
    (lam,) = _validate_lambdas([lam])
    variant = GaussianVariant(variant)
    lam = int(lam)
    if variant is GaussianVariant.NORMALIZED:
        return float(gaussian_alphas(sigma, zeta, np.array([lam]))[0])
    # C(lam, eta) (1-zeta)^(lam+1-eta) zeta^eta exp(eta(eta-1)/(2 sigma^2)), eta <= lam.
    eta = np.arange(0, lam + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_z = math.log(zeta) if zeta > 0 else -math.inf
        log_1mz = math.log1p(-zeta) if zeta < 1 else -math.inf
        terms = (log_binomial(lam, eta)
                 + np.where(lam + 1 - eta == 0, 0.0, (lam + 1 - eta) * log_1mz)
                 + np.where(eta == 0, 0.0, eta * log_z))
    kernel = 0.0 if math.isinf(sigma) else eta * (eta - 1) / (2.0 * sigma * sigma)
    return log_sum_exp(np.atleast_1d(terms + kernel))


def gaussian_alphas(sigma, zeta, lambdas) -> np.ndarray:
    """Normalized-variant ``alpha`` over an ascending grid of orders.

    Computed as ``log1p(sum_{eta >= 2} w_eta (exp(eta(eta-1)/(2 sigma^2)) - 1))``
    so tiny values keep full relative accuracy.
    """
    _check_sigma(sigma)
    _validate_zeta(zeta)
    lam = _validate_lambdas(lambdas)
    if lam.size > 1 and np.any(np.diff(lam) <= 0):
        raise DomainError("lambdas must be strictly increasing")
    m = lam + 1
    out = np.zeros(lam.shape)
    hi = m >= 2
    if zeta == 0.0 or math.isinf(sigma) or not np.any(hi):
        return out
    m_hi = m[hi]
    log_ex = _log_kernel_excess(np.arange(2, int(m_hi[-1]) + 1), sigma)
    if zeta == 1.0:
        out[hi] = np.logaddexp(0.0, log_ex[m_hi - 2])
        return out
    table = subsample_weights(zeta, m_hi)
    out[hi] = np.logaddexp(0.0, table.log_weighted_sum_direct(log_ex))
    return out


def gaussian_profile(cfg: MechanismConfig, lambdas: Optional[np.ndarray] = None,
                     variant=GaussianVariant.NORMALIZED) -> MomentProfile:
    """Per-step profile for ``cfg`` (``mechanism == "gaussian"``).

    The noise multiplier is ``noise_scale / clip``; a zero clip carries no
    signal and gives the zero profile. The audit variant can dip below 0,
    which no moment bound can do, so its values are floored at 0 and the
    profile's ``meta["floored"]`` counts the affected orders.
    """
    if cfg.mechanism != "gaussian":
        raise DomainError(f"expected mechanism 'gaussian', got {cfg.mechanism!r}")
    variant = GaussianVariant(variant)
    lam = cfg.lambdas() if lambdas is None else _validate_lambdas(lambdas)
    sigma = math.inf if cfg.clip == 0.0 else cfg.noise_scale / cfg.clip
    meta = {"noise_multiplier": sigma, "variant": variant.value}
    if variant is GaussianVariant.NORMALIZED:
        alphas = gaussian_alphas(sigma, cfg.sampling_rate, lam)
    else:
        raw = np.array([alpha_gaussian(sigma, cfg.sampling_rate, int(v), variant) for v in lam])
        meta["floored"] = int(np.sum(raw < 0))
        alphas = np.maximum(raw, 0.0)
    return MomentProfile("gaussian", lam, alphas, meta=meta)
