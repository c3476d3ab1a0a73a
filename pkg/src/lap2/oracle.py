"""Independent reference computations for the accountant's closed forms.

Nothing here calls into the accountant. Moments of the likelihood ratio
between two shifted densities are computed from scratch by three routes:
piecewise closed forms (Laplace only), adaptive quadrature with a log shift
and analytic tail control, and seeded Monte Carlo. Random instance
generators for the majorization tests live here too, so the command-line
``verify`` suite can run in the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import integrate, stats
from scipy.special import log_ndtr, logsumexp

from lap2.errors import DomainError, QuadratureError

FAMILIES = ("laplace", "gaussian")
METHODS = ("piecewise_closed_form", "adaptive_quadrature", "monte_carlo")

_TAIL_SCALES = 60.0
_TAIL_REL = 1e-14
_QUAD_EPSREL = 1e-13
_CROSS_CHECK_REL = 1e-9


@dataclass(frozen=True)
class MixtureSpec:
    """Two location-shifted densities and the subsampled mixture between them.

    ``mu0`` is centred at ``mean0``, ``mu1`` at ``mean1``, both with the same
    ``scale`` (Laplace b or Gaussian sigma), and ``mu = (1 - zeta) mu0 + zeta mu1``.
    """

    family: str
    scale: float
    mean0: float
    mean1: float
    zeta: float

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"family must be one of {FAMILIES}, got {self.family!r}")
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise DomainError(f"scale must be > 0, got {self.scale}")
        if not (math.isfinite(self.mean0) and math.isfinite(self.mean1)):
            raise DomainError("means must be finite")
        if not 0.0 <= self.zeta <= 1.0:
            raise DomainError(f"zeta must lie in [0, 1], got {self.zeta}")

    @property
    def shift(self) -> float:
        """Distance between the means in scale units (always >= 0)."""
        return abs(self.mean1 - self.mean0) / self.scale


@dataclass(frozen=True)
class OracleEstimate:
    """A reference value with its provenance.

    For the deterministic methods ``error_bound`` bounds the absolute error
    of ``log_value`` (a relative error on ``value``); for Monte Carlo it is
    the standard error of ``value``. ``value`` is ``inf`` when it overflows.
    """

    value: float
    log_value: float
    error_bound: float
    method: str
    seed: Optional[int] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"unknown method {self.method!r}")
        if not self.error_bound >= 0:
            raise DomainError("error_bound must be >= 0")


def _from_log(log_value, error_bound, method, seed=None):
    value = math.exp(log_value) if log_value < 709.0 else math.inf
    return OracleEstimate(value, float(log_value), float(error_bound), method, seed)


def _check_order(lam):
    if isinstance(lam, bool) or int(lam) != lam or lam < 0:
        raise DomainError(f"order must be an integer >= 0, got {lam!r}")
    return int(lam)


# ---------------------------------------------------------------------------
# Closed forms


def _log_abs_expm1(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        pos = np.where(x > 30, x + np.log1p(-np.exp(-np.abs(x))), np.log(np.abs(np.expm1(x))))
    return pos


def laplace_ratio_log_moment(eta, mean0, mean1, scale=1.0):
    """``log E_{z ~ mu0}[(mu1(z) / mu0(z))^eta]`` for two Laplace densities.

    The real line splits at the two means. Writing ``d = |mean1 - mean0| / scale``:
    left of both means the ratio is ``e^{-d}``, which contributes
    ``exp(-eta d) / 2``; right of both it is ``e^{d}`` and contributes
    ``exp((eta - 1) d) / 2``; between them the integral is elementary and
    gives ``exp(-eta d) (exp((2 eta - 1) d) - 1) / (2 (2 eta - 1))``.

    Args:
        eta: Real order(s); ``2 eta - 1`` must not vanish.
        mean0, mean1: Centres of mu0 and mu1.
        scale: Common Laplace scale.

    Returns:
        The log moment, broadcast over ``eta``.
    """
    eta = np.asarray(eta, dtype=float)
    if np.any(2 * eta - 1 == 0):
        raise DomainError("eta = 1/2 is not supported")
    d = abs(mean1 - mean0) / scale
    half = math.log(0.5)
    left = half - eta * d
    right = half + (eta - 1) * d
    k = 2 * eta - 1
    with np.errstate(divide="ignore"):
        middle = half - eta * d + _log_abs_expm1(k * d) - np.log(np.abs(k))
    out = logsumexp(np.stack([left, right, middle]), axis=0)
    return float(out) if out.ndim == 0 else out


def laplace_combined_moment(r, eta):
    """``E_{mu0}[(mu1/mu0)^eta]`` with means 0 and ``r`` (unit scale), from the case split."""
    return np.exp(laplace_ratio_log_moment(eta, 0.0, r, 1.0))


def _piecewise_log_A(spec, lam):
    m = lam + 1
    eta = np.arange(m + 1)
    with np.errstate(divide="ignore"):
        log_w = stats.binom.logpmf(eta, m, spec.zeta)
    log_e = laplace_ratio_log_moment(eta, spec.mean0, spec.mean1, spec.scale)
    return float(logsumexp(log_w + log_e))


# ---------------------------------------------------------------------------
# Adaptive quadrature


def _log_mix(zeta, x):
    """``log(1 - zeta + zeta e^x)`` with exact handling of zeta in {0, 1}."""
    with np.errstate(divide="ignore"):
        return np.logaddexp(math.log1p(-zeta) if zeta < 1 else -np.inf,
                            (math.log(zeta) if zeta > 0 else -np.inf) + np.asarray(x, dtype=float))


def _shifted_quad(log_f, a, b, points=()):
    """``log int_a^b exp(log_f)`` and its relative error, integrating ``exp(log_f - S)``."""
    if b <= a:
        return -math.inf, 0.0
    grid = np.linspace(a, b, 2049)
    vals = log_f(grid)
    shift = float(np.max(vals))
    if not np.isfinite(shift):
        return -math.inf, 0.0
    peak = float(grid[int(np.argmax(vals))])
    inner = sorted({p for p in list(points) + [peak] if a < p < b})

    def g(u):
        return math.exp(min(float(log_f(np.array([u]))[0]) - shift, 700.0))

    with np.errstate(all="ignore"):
        value, abserr, info = integrate.quad(g, a, b, points=inner or None, epsabs=0.0,
                                             epsrel=_QUAD_EPSREL, limit=1000, full_output=1)[:3]
    if not value > 0:
        raise QuadratureError("quadrature returned a non-positive integral",
                              {"interval": (a, b), "value": value, "abserr": abserr,
                               "evaluations": info.get("neval")})
    return shift + math.log(value), abserr / value


def _combine(pieces):
    """Sums ``(log_integral, rel_err)`` pieces; returns (log total, abs error on log)."""
    logs = np.array([p[0] for p in pieces])
    total = float(logsumexp(logs))
    err = sum(math.exp(l - total) * e for l, e in pieces if np.isfinite(l))
    return total, err


def _laplace_quadrature(spec, power):
    """``log E_{mu0}[(1 - zeta + zeta mu1/mu0)^power]`` for Laplace densities."""
    d = spec.shift
    half = math.log(0.5)
    m_abs = abs(power) + 1.0
    near = [d - k / (2.0 * m_abs) for k in (1.0, 4.0, 16.0, 64.0)]
    near += [k / (2.0 * m_abs) for k in (1.0, 4.0, 16.0, 64.0)]

    def left(u):
        return half + u + power * _log_mix(spec.zeta, -d)

    def middle(u):
        return half - u + power * _log_mix(spec.zeta, 2.0 * u - d)

    def right(u):
        return half - u + power * _log_mix(spec.zeta, d)

    tail = _TAIL_SCALES
    while True:
        pieces = [_shifted_quad(left, -tail, 0.0), _shifted_quad(middle, 0.0, d, near),
                  _shifted_quad(right, d, d + tail)]
        total, err = _combine(pieces)
        # The outer pieces are exponentials, so each dropped tail equals the
        # integrand at the cut.
        log_tail = float(np.logaddexp(left(np.array([-tail]))[0], right(np.array([d + tail]))[0]))
        tail_rel = math.exp(log_tail - total)
        if tail_rel < _TAIL_REL or tail > 1e4:
            return total, err + tail_rel
        tail *= 2.0


def _gaussian_quadrature(spec, power):
    """``log E_{mu0}[(1 - zeta + zeta mu1/mu0)^power]`` for Gaussian densities."""
    sigma = spec.scale
    delta = abs(spec.mean1 - spec.mean0)
    # Reflected so mu1 sits at +delta relative to mu0.
    log_norm = -math.log(sigma) - 0.5 * math.log(2.0 * math.pi)

    def log_f(w):
        x = delta * (2.0 * w - delta) / (2.0 * sigma * sigma)
        return log_norm - w * w / (2.0 * sigma * sigma) + power * _log_mix(spec.zeta, x)

    centre = max(power, 0.0) * delta
    tail = _TAIL_SCALES
    while True:
        lo, hi = -tail * sigma, centre + tail * sigma
        # Subintervals of a few sigma keep every piece well resolved.
        edges = np.unique(np.concatenate([np.arange(lo, hi, 4.0 * sigma), [hi]]))
        pieces = [_shifted_quad(log_f, a, b) for a, b in zip(edges[:-1], edges[1:])]
        total, err = _combine(pieces)
        # For power < 0 the mixture factor is at most (1 - zeta)^power. For
        # power >= 0 it is at most 1 below delta/2 and e^{power x} above,
        # which turns the integrand into a Gaussian centred at ``centre``.
        cap = power * math.log1p(-spec.zeta) if power < 0 else 0.0
        p = max(power, 0.0)
        log_low = cap + log_ndtr(-tail)
        log_high = cap + (p * p - p) * delta * delta / (2.0 * sigma * sigma) + log_ndtr(-tail)
        tail_rel = math.exp(float(np.logaddexp(log_low, log_high)) - total)
        if tail_rel < _TAIL_REL or tail > 1e3:
            return total, err + tail_rel
        tail *= 2.0


def _quadrature(spec, power):
    if spec.zeta == 0.0 or spec.mean0 == spec.mean1:
        return 0.0, 0.0
    if spec.family == "laplace":
        total, err = _laplace_quadrature(spec, power)
    else:
        total, err = _gaussian_quadrature(spec, power)
    if err > 1e-10:
        raise QuadratureError("quadrature did not reach 1e-10 on the log scale",
                              {"spec": spec, "power": power, "log_value": total, "error": err})
    return total, err


def quadrature_moment_A(spec: MixtureSpec, lam: int,
                        method: str = "piecewise_closed_form") -> OracleEstimate:
    """``A = E_{z ~ mu0}[(1 - zeta + zeta mu1(z)/mu0(z))^(lam + 1)]``.

    For Laplace specs the default returns the piecewise closed form after
    checking it against adaptive quadrature (they must agree to 1e-9 on
    the log scale). ``method="adaptive_quadrature"`` returns the quadrature
    value itself; Gaussian specs always use quadrature.

    Raises:
        QuadratureError: the two routes disagree or quadrature fails.
    """
    lam = _check_order(lam)
    if method not in ("piecewise_closed_form", "adaptive_quadrature"):
        raise DomainError(f"unsupported method {method!r}")
    if spec.zeta == 0.0 or spec.mean0 == spec.mean1:
        return _from_log(0.0, 0.0, method)
    log_q, err_q = _quadrature(spec, lam + 1.0)
    if spec.family == "gaussian" or method == "adaptive_quadrature":
        return _from_log(log_q, err_q, "adaptive_quadrature")
    log_c = _piecewise_log_A(spec, lam)
    gap = abs(log_c - log_q)
    if gap > _CROSS_CHECK_REL * max(1.0, abs(log_c)):
        raise QuadratureError("closed form and quadrature disagree",
                              {"log_closed_form": log_c, "log_quadrature": log_q, "gap": gap,
                               "quadrature_error": err_q, "lam": lam})
    return _from_log(log_c, max(gap, err_q), "piecewise_closed_form")


def quadrature_moment_B(spec: MixtureSpec, lam: int) -> OracleEstimate:
    """``B = E_{z ~ mu0}[(mu0(z)/mu(z))^lam]`` by adaptive quadrature (``zeta < 1``)."""
    lam = _check_order(lam)
    if not spec.zeta < 1.0:
        raise DomainError("B needs zeta < 1 so that mu covers the support of mu0")
    log_q, err_q = _quadrature(spec, -float(lam))
    return _from_log(log_q, err_q, "adaptive_quadrature")


def gaussian_mixture_moment(sigma, zeta, lam) -> OracleEstimate:
    """``E_{z ~ N(0, sigma^2)}[(mu(z)/mu0(z))^(lam + 1)]`` with mu1 = N(1, sigma^2)."""
    if not sigma > 0:
        raise DomainError(f"sigma must be > 0, got {sigma}")
    return quadrature_moment_A(MixtureSpec("gaussian", float(sigma), 0.0, 1.0, float(zeta)), lam)


def mc_moment(spec: MixtureSpec, lam: int, samples: int, seed: int) -> OracleEstimate:
    """Plain Monte Carlo estimate of A with its standard error; deterministic in ``seed``."""
    lam = _check_order(lam)
    if samples < 10_000:
        raise DomainError("use at least 10^4 samples")
    rng = np.random.default_rng(seed)
    if spec.family == "laplace":
        z = rng.laplace(spec.mean0, spec.scale, size=samples)
        log_ratio = (np.abs(z - spec.mean0) - np.abs(z - spec.mean1)) / spec.scale
    else:
        z = rng.normal(spec.mean0, spec.scale, size=samples)
        log_ratio = ((z - spec.mean0) ** 2 - (z - spec.mean1) ** 2) / (2.0 * spec.scale ** 2)
    vals = np.exp((lam + 1) * _log_mix(spec.zeta, log_ratio))
    mean = float(np.mean(vals))
    stderr = float(np.std(vals, ddof=1) / math.sqrt(samples))
    return OracleEstimate(mean, math.log(mean), stderr, "monte_carlo", int(seed))


# ---------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class WorstCaseReport:
    """Where A peaks over a grid of mean pairs in ``[-C, C]^2`` (unit Laplace scale)."""

    argmax: Tuple[float, float]
    log_max: float
    log_reference: float
    gap: float
    argmax_adjacent: Tuple[float, float]
    gap_adjacent: float


def verify_worst_case_means(zeta, r, lam, points: int = 9) -> WorstCaseReport:
    """Compares A at means ``(0, C)`` against every pair on a ``points x points`` grid.

    ``C = r`` in scale units. ``gap`` is the log-excess of the grid maximum
    over the ``(0, C)`` value; ``gap_adjacent`` restricts the maximum to pairs
    at most ``C`` apart, the largest shift a single clipped record can cause.
    """
    lam = _check_order(lam)
    if points < 2:
        raise DomainError("need at least 2 grid points")
    grid = np.linspace(-r, r, points)
    ref = _piecewise_log_A(MixtureSpec("laplace", 1.0, 0.0, r, zeta), lam)
    best = (-math.inf, (0.0, 0.0))
    best_adj = (-math.inf, (0.0, 0.0))
    for m0 in grid:
        for m1 in grid:
            val = _piecewise_log_A(MixtureSpec("laplace", 1.0, float(m0), float(m1), zeta), lam)
            pair = (float(m0), float(m1))
            if val > best[0]:
                best = (val, pair)
            if abs(m1 - m0) <= r * (1 + 1e-12) and val > best_adj[0]:
                best_adj = (val, pair)
    return WorstCaseReport(best[1], best[0], ref, best[0] - ref, best_adj[1], best_adj[0] - ref)


# ---------------------------------------------------------------------------
# Random instances

GRADIENT_STYLES = ("sphere", "ball", "sparse", "power_law")


def sample_clipped_gradient(n: int, clip: float, seed: int, style: Optional[str] = None) -> np.ndarray:
    """A random vector in R^n with l2 norm at most ``clip``.

    Styles: uniform on the sphere, uniform in the ball, a few large spikes,
    and power-law decaying magnitudes. ``style=None`` picks one at random.
    """
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if clip < 0:
        raise DomainError(f"clip must be >= 0, got {clip}")
    rng = np.random.default_rng(seed)
    if style is None:
        style = GRADIENT_STYLES[int(rng.integers(len(GRADIENT_STYLES)))]
    if style not in GRADIENT_STYLES:
        raise DomainError(f"style must be one of {GRADIENT_STYLES}, got {style!r}")
    if style in ("sphere", "ball"):
        v = rng.standard_normal(n)
        radius = clip if style == "sphere" else clip * rng.random() ** (1.0 / n)
    elif style == "sparse":
        v = np.zeros(n)
        k = int(rng.integers(1, min(n, 8) + 1))
        v[rng.choice(n, size=k, replace=False)] = rng.standard_normal(k)
        radius = clip * rng.uniform(0.5, 1.0)
    else:
        v = rng.permutation(np.arange(1, n + 1) ** -rng.uniform(0.5, 2.0))
        v *= rng.choice([-1.0, 1.0], size=n)
        radius = clip
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return v
    v = v * (radius / norm)
    norm = float(np.linalg.norm(v))
    if norm > clip:
        v *= clip / norm
    return v


def majorizes(y, x, tol=1e-12) -> bool:
    """True when ``x`` is majorized by ``y`` (equal sums, dominating sorted prefix sums)."""
    xs = np.sort(np.asarray(x, dtype=float))[::-1]
    ys = np.sort(np.asarray(y, dtype=float))[::-1]
    scale = max(1.0, float(np.sum(np.abs(xs))))
    if abs(xs.sum() - ys.sum()) > tol * scale:
        return False
    return bool(np.all(np.cumsum(ys) >= np.cumsum(xs) - tol * scale))


def robin_hood_pair(x, seed: int):
    """Returns ``(x, y)`` where ``y`` moves mass from a smaller entry of x to a larger one.

    The reverse Robin-Hood transfer keeps the sum and makes ``x`` majorized by
    ``y``. When no entry below the largest carries mass, ``(x, x)`` is returned.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("x must be a vector with at least 2 entries")
    if np.any(x < 0):
        raise DomainError("x must be nonnegative")
    rng = np.random.default_rng(seed)
    y = x.copy()
    for _ in range(64):
        i, j = rng.choice(x.size, size=2, replace=False)
        if x[i] < x[j]:
            i, j = j, i
        if x[j] > 0:
            break
    else:
        order = np.argsort(x)[::-1]
        donors = order[1:][x[order[1:]] > 0]
        if donors.size == 0:
            return x, y
        i, j = order[0], donors[0]
    moved = x[j] * rng.uniform(0.05, 1.0)
    y[i] += moved
    y[j] -= moved
    if not majorizes(y, x):
        raise AssertionError("transfer failed to produce a majorizing vector")
    return x, y
