"""Moments accountant for subsampled Laplace noise under l2 clipping.

A single coordinate clipped to ``|g| <= C`` and perturbed with ``Lap(b)``
noise has a per-step moment bound that depends only on ``r = C / b``::

    alpha(lam) = log sum_{eta=0}^{lam+1} C(lam+1, eta) (1-zeta)^(lam+1-eta)
                     zeta^eta F(r, eta)

    F(r, eta) = (eta e^{(eta-1) r} + (eta-1) e^{-eta r}) / (2 eta - 1)

For an n-dimensional gradient with ``||g||_2 <= C`` the total moment is
bounded by summing the coordinate bound over the extreme magnitude vector
``x_i = C (sqrt(i) - sqrt(i-1))``, which weakly majorizes every clipped
magnitude vector. Every value returned here is an upper bound on the true
moment; the closed form is evaluated, not claimed tight.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.special import gammaln, xlog1py, xlogy

from lap2.errors import DomainError
from lap2.numerics import (log_expm1, log_subsample_weight_matrix, log_sum_exp,
                           subsample_weights)

MECHANISMS = ("lap2", "gaussian", "laplace_l1", "pure_laplace")
MODES = ("auto", "exact", "bucketed")

DEFAULT_LAMBDA_MAX = 4096
# Single-order sums run exactly up to this dimension in "auto" mode.
EXACT_DIM_LIMIT = 2 ** 20
# Whole profiles (every order up to lambda_max) run exactly up to this size.
EXACT_PROFILE_DIM_LIMIT = 64
BUCKET_REL_TOL = 1e-3
_ROUNDING_MARGIN = 1e-12

_SERIES_TERMS = 24
_COORD_CHUNK = 1 << 15


@dataclass(frozen=True)
class MechanismConfig:
    """Everything the accountant needs to bound one DP-SGD run.

    ``noise_scale`` is the Laplace scale ``b`` for the Laplace mechanisms and
    the Gaussian standard deviation ``sigma`` for ``gaussian``; both are in
    gradient units, so the Gaussian noise multiplier is ``sigma / clip``.
    """

    mechanism: str = "lap2"
    clip: float = 1.0
    noise_scale: float = 1.0
    sampling_rate: float = 0.01
    steps: int = 1
    dim: int = 1
    delta: float = 1e-5
    lambda_max: int = DEFAULT_LAMBDA_MAX

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise DomainError(f"unknown mechanism {self.mechanism!r}; expected one of {MECHANISMS}")
        for name in ("clip", "noise_scale", "sampling_rate", "delta"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise DomainError(f"{name} must be a finite number, got {value!r}")
        if self.clip < 0:
            raise DomainError(f"clip must be >= 0, got {self.clip}")
        if self.noise_scale <= 0:
            raise DomainError(f"noise_scale must be > 0, got {self.noise_scale}")
        if not 0.0 <= self.sampling_rate <= 1.0:
            raise DomainError(f"sampling_rate must lie in [0, 1], got {self.sampling_rate}")
        if not 0.0 < self.delta < 1.0:
            raise DomainError(f"delta must lie in (0, 1), got {self.delta}")
        for name in ("steps", "dim", "lambda_max"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise DomainError(f"{name} must be an integer >= 1, got {value!r}")

    def replace(self, **changes) -> "MechanismConfig":
        return dataclasses.replace(self, **changes)

    @property
    def ratio(self) -> float:
        """Sensitivity-to-noise ratio ``clip / noise_scale``."""
        return self.clip / self.noise_scale

    def lambdas(self) -> np.ndarray:
        return np.arange(1, self.lambda_max + 1)


@dataclass
class MomentProfile:
    """Moment bound ``alpha(lam)`` tabulated on an integer order grid."""

    mechanism: str
    lambdas: np.ndarray
    alphas: np.ndarray
    scope: str = "per_step"
    exact: bool = True
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=np.int64)
        self.alphas = np.asarray(self.alphas, dtype=float)
        if self.lambdas.ndim != 1 or self.lambdas.shape != self.alphas.shape:
            raise DomainError("lambdas and alphas must be 1-d arrays of equal length")
        if self.scope not in ("per_step", "composed"):
            raise DomainError(f"unknown scope {self.scope!r}")
        if self.lambdas.size and (self.lambdas[0] < 1 or np.any(np.diff(self.lambdas) <= 0)):
            raise DomainError("lambdas must be strictly increasing integers >= 1")
        if np.any(np.isnan(self.alphas)) or np.any(self.alphas < 0):
            raise DomainError("alphas must be nonnegative")

    def __len__(self):
        return self.lambdas.size

    def at(self, lam: int) -> float:
        idx = np.searchsorted(self.lambdas, lam)
        if idx >= self.lambdas.size or self.lambdas[idx] != lam:
            raise KeyError(lam)
        return float(self.alphas[idx])

    def shape_violation(self) -> float:
        """Largest breach of monotonicity or discrete convexity in lambda.

        Only consecutive-integer stretches of the grid are checked for
        convexity. Returns 0 for a well-shaped profile.
        """
        a = self.alphas
        if a.size < 2 or not np.all(np.isfinite(a)):
            return 0.0
        worst = max(0.0, float(np.max(-np.diff(a))))
        if a.size >= 3:
            unit = np.diff(self.lambdas) == 1
            d2 = a[2:] - 2 * a[1:-1] + a[:-2]
            ok = unit[1:] & unit[:-1]
            if np.any(ok):
                worst = max(worst, float(np.max(-d2[ok], initial=0.0)))
        return worst


# ---------------------------------------------------------------------------
# Per-coordinate moment terms


def _check_eta(eta):
    if np.any(np.asarray(eta) < 0):
        raise DomainError(f"eta must be >= 0, got {eta}")


def log_moment_term_F(r, eta):
    """Log of ``F(r, eta)`` for ``r >= 0`` and integer ``eta >= 0``.

    ``eta`` in {0, 1} gives exactly 0. Larger orders go through a two-term
    log-sum-exp, so large ``(eta - 1) r`` does not overflow.
    """
    _check_eta(eta)
    r_arr, e_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(eta, dtype=float))
    if np.any(r_arr < 0) or np.any(np.isnan(r_arr)):
        raise DomainError(f"r must be >= 0, got {r}")
    out = np.zeros(r_arr.shape)
    hi = (e_arr >= 2) & (r_arr > 0)
    if np.any(hi):
        e = e_arr[hi]
        rr = r_arr[hi]
        with np.errstate(invalid="ignore"):
            first = np.log(e) + (e - 1) * rr
            second = np.log(e - 1) - e * rr
        second = np.where(np.isposinf(rr), -np.inf, second)
        both = np.stack([first, second], axis=-1)
        out[hi] = log_sum_exp(both, axis=-1) - np.log(2 * e - 1)
    return float(out) if out.ndim == 0 else out


def moment_term_F(r, eta):
    """``F(r, eta) = (eta e^{(eta-1)r} + (eta-1) e^{-eta r}) / (2 eta - 1)``.

    This is the ``eta``-th moment of the likelihood ratio between two
    Laplace densities whose means differ by ``r`` scale units, taken under
    the first density. Overflow saturates to ``+inf``.
    """
    with np.errstate(over="ignore"):
        out = np.exp(log_moment_term_F(r, eta))
    return float(out) if np.ndim(out) == 0 else out


def log_moment_excess(r, eta):
    """Accurate ``log(F(r, eta) - 1)``.

    ``F - 1`` cancels to first order in ``r``, so for ``eta * r <= 1`` it is
    summed from its Taylor series, whose k-th term is
    ``eta (eta-1) r [((eta-1) r)^(k-1) + (-1)^k (eta r)^(k-1)] / ((2 eta - 1) k!)``.
    Returns ``-inf`` where ``F = 1`` (``eta < 2`` or ``r = 0``).
    """
    r_arr, e_arr = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(eta, dtype=float))
    out = np.full(r_arr.shape, -np.inf)
    active = (r_arr > 0) & (e_arr >= 2)
    out[active & np.isposinf(r_arr)] = np.inf
    a_all = (e_arr - 1) * r_arr
    b_all = e_arr * r_arr
    series = active & (b_all <= 1.0)
    direct = active & (b_all > 1.0) & np.isfinite(r_arr)

    if np.any(series):
        e, rr = e_arr[series], r_arr[series]
        a, b = a_all[series], b_all[series]
        total = np.zeros(e.shape)
        pa = np.ones(e.shape)
        pb = np.ones(e.shape)
        fact = 1.0
        for k in range(2, _SERIES_TERMS + 2):
            pa = pa * a
            pb = pb * b
            fact *= k
            sign = 1.0 if k % 2 == 0 else -1.0
            total += (pa + sign * pb) / fact
        out[series] = np.log(e * (e - 1) * rr / (2 * e - 1)) + np.log(total)

    if np.any(direct):
        e = e_arr[direct]
        a, b = a_all[direct], b_all[direct]
        log_p = np.log(e) + log_expm1(a)
        log_q = np.log(e - 1) + np.log(-np.expm1(-b))
        out[direct] = log_p + np.log1p(-np.exp(log_q - log_p)) - np.log(2 * e - 1)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Univariate accountant


def _validate_zeta(zeta):
    if not (isinstance(zeta, (int, float, np.floating)) and 0.0 <= zeta <= 1.0):
        raise DomainError(f"sampling rate must lie in [0, 1], got {zeta!r}")


def _validate_r(r):
    r = np.asarray(r, dtype=float)
    if np.any(np.isnan(r)) or np.any(r < 0):
        raise DomainError("r = C / b must be >= 0")


def _validate_lambdas(lambdas):
    lam = np.atleast_1d(np.asarray(lambdas))
    if lam.size and (not np.issubdtype(lam.dtype, np.integer)):
        if np.any(lam != np.round(lam)):
            raise DomainError("moment orders must be integers")
        lam = lam.astype(np.int64)
    if np.any(lam < 0):
        raise DomainError("moment orders must be >= 0")
    return lam.astype(np.int64)


def _tail_log_bound(m, j, zeta, r):
    """Log of a bound on the eta = j term: F - 1 <= e^{(j-1) r} - 1."""
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return (gammaln(m + 1) - gammaln(j + 1) - gammaln(m - j + 1)
                + xlogy(j, zeta) + xlog1py(m - j, -zeta) + log_expm1((j - 1) * r))


def _truncation_order(m_max, zeta, r, reference):
    """Smallest order K beyond which the tail is negligible against ``reference``."""
    if m_max <= 2:
        return int(m_max)
    js = np.arange(2, m_max + 1, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        ratios = (m_max - js) / (js + 1) * zeta / (1 - zeta) * (np.exp(r) + 1.0 / (js - 1))
    ratios = np.where(js >= m_max, 0.0, ratios)
    log_b = _tail_log_bound(m_max, js, zeta, r)
    # Dropping everything past K needs ratio(K+1) <= 1/2 and term(K+1) tiny.
    ok = (ratios[1:] <= 0.5) & (log_b[1:] < reference - 50.0)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return int(m_max)
    return int(js[idx[0]])


def _log_excess_profiles(zeta, r, m):
    """``log(A(r, m) - 1)`` over an array of ratios and ascending ``m = lam + 1``.

    ``A = sum_eta w_eta F(r, eta)``; since the weights sum to one,
    ``A - 1 = sum_{eta >= 2} w_eta (F(r, eta) - 1)``. Terms past a truncation
    order are replaced by a geometric tail bound, so the output is never
    below the exact value. Returns an array of shape ``(len(r), len(m))``.
    """
    r = np.asarray(r, dtype=float)
    out = np.full((r.size, m.size), -np.inf)
    hi = m >= 2
    if zeta == 0.0 or not np.any(hi):
        return out
    out[np.ix_(np.isposinf(r), hi)] = np.inf
    live = (r > 0) & np.isfinite(r)
    if not np.any(live):
        return out
    r_live = r[live]
    rows_m = m[hi]
    if zeta == 1.0:
        out[np.ix_(live, hi)] = log_moment_excess(r_live[:, None], rows_m[None, :].astype(float))
        return out

    m_top = int(rows_m[-1])
    r_min = float(np.min(r_live))
    r_max = float(np.max(r_live))
    table = subsample_weights(zeta, rows_m)
    ref = float(log_subsample_weight_matrix(np.array([m_top]), np.array([2]), zeta)[0, 0]
                + log_moment_excess(r_min, 2.0))
    k = _truncation_order(m_top, zeta, r_max, ref)
    while True:
        eta = np.arange(2, k + 1, dtype=float)
        partial = table.log_weighted_sum(log_moment_excess(r_live[None, :], eta[:, None]))
        if k >= m_top:
            total = partial
            break
        needs_tail = rows_m > k
        tail = np.full(partial.shape, -np.inf)
        tail[needs_tail] = math.log(2.0) + _tail_log_bound(rows_m[needs_tail, None], k + 1, zeta,
                                                           r_live[None, :])
        if np.all(tail <= partial - 35.0):
            total = np.logaddexp(partial, tail)
            break
        k = min(m_top, 2 * k)
    out[np.ix_(live, hi)] = total.T
    return out


def _log_excess_profile(zeta, r, m):
    """Single-ratio form of _log_excess_profiles."""
    return _log_excess_profiles(zeta, np.array([r], dtype=float), m)[0]


def _log_excess_coords(zeta, r, m):
    """``log(A - 1)`` for one ``m = lam + 1`` across an array of ratios ``r``."""
    r = np.asarray(r, dtype=float)
    out = np.full(r.shape, -np.inf)
    if zeta == 0.0 or m < 2 or r.size == 0:
        return out
    out[np.isposinf(r) & (r > 0)] = np.inf
    live = (r > 0) & np.isfinite(r)
    if not np.any(live):
        return out
    if zeta == 1.0:
        out[live] = log_moment_excess(r[live], float(m))
        return out
    r_live = r[live]
    r_top = float(np.max(r_live))
    r_bottom = float(np.min(r_live))
    ref_w = float(log_subsample_weight_matrix(np.array([m]), np.array([2]), zeta)[0, 0])
    # The smallest ratio gives the smallest reference term.
    ref = ref_w + float(log_moment_excess(r_bottom, 2.0))
    k = _truncation_order(int(m), zeta, r_top, ref)
    while True:
        eta = np.arange(2, k + 1)
        log_w = log_subsample_weight_matrix(np.array([m]), eta, zeta)[0]
        res = np.empty(r_live.shape)
        for start in range(0, r_live.size, _COORD_CHUNK):
            rr = r_live[start:start + _COORD_CHUNK]
            terms = log_w[None, :] + log_moment_excess(rr[:, None], eta[None, :].astype(float))
            res[start:start + rr.size] = log_sum_exp(terms, axis=1)
        if k >= m:
            break
        tail = math.log(2.0) + _tail_log_bound(m, k + 1, zeta, r_live)
        if np.all(tail <= res - 35.0):
            res = np.logaddexp(res, tail)
            break
        k = min(int(m), 2 * k)
    out[live] = res
    return out


def alpha_univariate_profile(zeta, r, lambdas):
    """Per-step moment bound of one clipped coordinate over many orders.

    Args:
        zeta: Sampling rate in [0, 1].
        r: Ratio ``|g| / b`` of the coordinate magnitude to the noise scale.
        lambdas: Nonnegative integer orders, ascending.

    Returns:
        Array of ``alpha(lam)`` values, each >= 0 (``inf`` on overflow).
    """
    _validate_zeta(zeta)
    _validate_r(r)
    lam = _validate_lambdas(lambdas)
    if lam.size > 1 and np.any(np.diff(lam) <= 0):
        order = np.argsort(lam)
        res = np.empty(lam.shape)
        res[order] = alpha_univariate_profile(zeta, r, lam[order])
        return res
    return np.logaddexp(0.0, _log_excess_profile(float(zeta), float(r), lam + 1))


def alpha_univariate(zeta, r, lam):
    """Per-step moment bound ``alpha(lam)`` of one clipped coordinate."""
    return float(alpha_univariate_profile(zeta, r, [lam])[0])


def alpha_univariate_coords(zeta, r, lam):
    """``alpha(lam)`` for every entry of an array of ratios ``r``."""
    _validate_zeta(zeta)
    _validate_r(r)
    (lam,) = _validate_lambdas([lam])
    return np.logaddexp(0.0, _log_excess_coords(float(zeta), r, int(lam) + 1))


# ---------------------------------------------------------------------------
# Majorization set


@dataclass(frozen=True)
class MajorizationSet:
    """The vector ``x_i = C (sqrt(i) - sqrt(i-1))``, ``i = 1..n``, kept implicit.

    Its prefix sums telescope to ``C sqrt(k)``, the largest l1 mass any k
    coordinates of an l2-clipped vector can carry.
    """

    clip: float
    dim: int

    def x(self, i):
        """Entries at 1-based indices ``i`` (scalar or array)."""
        i_arr = np.asarray(i, dtype=float)
        if np.any(i_arr < 1) or np.any(i_arr > self.dim):
            raise IndexError(f"index outside [1, {self.dim}]")
        out = self.clip / (np.sqrt(i_arr) + np.sqrt(i_arr - 1.0))
        return float(out) if out.ndim == 0 else out

    def prefix_sum(self, k) -> float:
        return self.clip * math.sqrt(k)

    def range_sum(self, first: int, last: int) -> float:
        """``sum_{i=first}^{last} x_i``, telescoped."""
        return self.clip * (last - first + 1) / (math.sqrt(last) + math.sqrt(first - 1))

    def to_array(self) -> np.ndarray:
        return self.x(np.arange(1, self.dim + 1))

    def __len__(self):
        return self.dim


def majorization_set(clip, dim) -> MajorizationSet:
    if not clip > 0 or not math.isfinite(clip):
        raise DomainError(f"clip must be > 0, got {clip}")
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise DomainError(f"dim must be an integer >= 1, got {dim}")
    return MajorizationSet(float(clip), int(dim))


# ---------------------------------------------------------------------------
# Multivariate accountant


def _initial_buckets(n):
    buckets = []
    a = 1
    while a <= n:
        buckets.append((a, min(2 * a - 1, n)))
        a *= 2
    return buckets


def alpha_univariate_profiles(zeta, r, lambdas):
    """alpha_univariate_profile for many ratios at once: shape ``(len(r), len(lambdas))``."""
    _validate_zeta(zeta)
    _validate_r(r)
    lam = _validate_lambdas(lambdas)
    if lam.size > 1 and np.any(np.diff(lam) <= 0):
        raise DomainError("lambdas must be strictly increasing")
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return np.logaddexp(0.0, _log_excess_profiles(float(zeta), r, lam + 1))


class _BucketedSum:
    """Certified bracket on ``sum_i alpha(x_i / b)`` from geometric buckets.

    The coordinate bound is convex and nondecreasing in the coordinate
    magnitude, so on a bucket it lies below the chord through its endpoint
    values (upper bound) and above its value at the bucket mean (Jensen,
    lower bound). Buckets are split until the bracket is within ``rel_tol``.
    """

    def __init__(self, zeta, noise, mset, lambdas, rel_tol):
        self.zeta = zeta
        self.noise = noise
        self.mset = mset
        self.lambdas = lambdas
        self.rel_tol = rel_tol
        self._cache = {}

    @staticmethod
    def _points(mset, first, last):
        size = last - first + 1
        pts = [float(mset.x(first))]
        if size > 1:
            pts.append(float(mset.x(last)))
        if size > 2:
            pts.append(mset.range_sum(first, last) / size)
        return pts

    def _prefetch(self, buckets):
        """Evaluates every point the given buckets need in one batch."""
        need = sorted({x for b in buckets for x in self._points(self.mset, *b)} - self._cache.keys())
        if need:
            vals = alpha_univariate_profiles(self.zeta, np.array(need) / self.noise, self.lambdas)
            self._cache.update(zip(need, vals))

    def bucket_bounds(self, first, last):
        size = last - first + 1
        pts = self._points(self.mset, first, last)
        a_left = self._cache[pts[0]]
        if size == 1:
            return a_left, a_left
        a_right = self._cache[pts[1]]
        if size == 2:
            s = a_left + a_right
            return s, s
        x_left, x_right, x_mean = pts
        # Chord weights in magnitude space; size * (x_mean - x_right) >= 0.
        w = size * (x_mean - x_right) / (x_left - x_right)
        w = min(max(w, 0.0), float(size))
        with np.errstate(invalid="ignore"):
            upper = (size - w) * a_right + w * a_left
        upper = np.where(np.isposinf(a_left), np.inf, upper)
        lower = size * self._cache[x_mean]
        return upper, np.minimum(lower, upper)

    def evaluate(self, max_rounds=24):
        buckets = _initial_buckets(self.mset.dim)
        self._prefetch(buckets)
        bounds = {b: self.bucket_bounds(*b) for b in buckets}
        for _ in range(max_rounds):
            upper = np.sum([bounds[b][0] for b in buckets], axis=0)
            lower = np.sum([bounds[b][1] for b in buckets], axis=0)
            if not np.all(np.isfinite(upper)):
                break
            scale = np.where(upper > 0, upper, 1.0)
            if np.max((upper - lower) / scale) <= self.rel_tol:
                break
            limit = self.rel_tol / len(buckets)
            refined = []
            fresh = []
            for b in buckets:
                first, last = b
                share = float(np.max((bounds[b][0] - bounds[b][1]) / scale))
                if share > limit and last - first + 1 > 2:
                    mid = int(math.floor(math.sqrt(first * (last + 1))))
                    mid = min(max(mid, first + 1), last)
                    halves = [(first, mid - 1), (mid, last)]
                    refined.extend(halves)
                    fresh.extend(halves)
                else:
                    refined.append(b)
            if not fresh:
                break
            self._prefetch(fresh)
            for h in fresh:
                bounds[h] = self.bucket_bounds(*h)
            buckets = refined
        upper = np.sum([bounds[b][0] for b in buckets], axis=0)
        # The batched and per-coordinate evaluators agree to ~1e-13 but not
        # bit for bit; the margin keeps the bound above either one.
        upper = upper * (1.0 + _ROUNDING_MARGIN)
        exact = all(last - first + 1 <= 2 for first, last in buckets)
        return upper, exact, len(buckets)


def _require_lap2(cfg):
    if cfg.mechanism != "lap2":
        raise DomainError(f"multivariate Laplace accounting needs mechanism 'lap2', got {cfg.mechanism!r}")


def _exact_sum(cfg, lam):
    mset = majorization_set(cfg.clip, cfg.dim)
    total = 0.0
    for start in range(1, cfg.dim + 1, _COORD_CHUNK):
        idx = np.arange(start, min(start + _COORD_CHUNK, cfg.dim + 1))
        vals = alpha_univariate_coords(cfg.sampling_rate, mset.x(idx) / cfg.noise_scale, lam)
        total += float(np.sum(vals))
    return total


def alpha_multivariate(cfg: MechanismConfig, lam: int, mode: str = "auto"):
    """Per-step moment bound of the n-dimensional mechanism at one order.

    Args:
        cfg: Configuration with ``mechanism == "lap2"``.
        lam: Nonnegative integer order.
        mode: ``"exact"`` sums all n coordinates; ``"bucketed"`` returns a
            certified upper bound from geometric buckets; ``"auto"`` picks
            exact for ``dim <= 2**20``.

    Returns:
        Tuple ``(alpha, is_exact)``.
    """
    _require_lap2(cfg)
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    (lam,) = _validate_lambdas([lam])
    if cfg.clip == 0.0 or cfg.sampling_rate == 0.0 or lam == 0:
        return 0.0, True
    if mode == "auto":
        mode = "exact" if cfg.dim <= EXACT_DIM_LIMIT else "bucketed"
    if mode == "exact":
        return _exact_sum(cfg, int(lam)), True
    summer = _BucketedSum(cfg.sampling_rate, cfg.noise_scale,
                          majorization_set(cfg.clip, cfg.dim),
                          np.array([lam]), BUCKET_REL_TOL)
    value, exact, _ = summer.evaluate()
    return float(value[0]), exact


def multivariate_profile(cfg: MechanismConfig, lambdas: Optional[Iterable[int]] = None,
                         mode: str = "auto", rel_tol: float = BUCKET_REL_TOL) -> MomentProfile:
    """Per-step profile of the n-dimensional bound over an order grid.

    ``"auto"`` sums coordinates one by one for ``dim <= 64`` and buckets
    above that; every order is evaluated either way.
    """
    _require_lap2(cfg)
    if mode not in MODES:
        raise DomainError(f"unknown mode {mode!r}")
    lam = cfg.lambdas() if lambdas is None else _validate_lambdas(lambdas)
    meta = {"dim": cfg.dim}
    if cfg.clip == 0.0 or cfg.sampling_rate == 0.0:
        return MomentProfile("lap2", lam, np.zeros(lam.shape), exact=True, meta=meta)
    if mode == "auto":
        mode = "exact" if cfg.dim <= EXACT_PROFILE_DIM_LIMIT else "bucketed"
    mset = majorization_set(cfg.clip, cfg.dim)
    if mode == "exact":
        total = np.zeros(lam.shape)
        for i in range(1, cfg.dim + 1):
            total = total + alpha_univariate_profile(cfg.sampling_rate, mset.x(i) / cfg.noise_scale, lam)
        meta["mode"] = "exact"
        return MomentProfile("lap2", lam, total, exact=True, meta=meta)
    summer = _BucketedSum(cfg.sampling_rate, cfg.noise_scale, mset, lam, rel_tol)
    values, exact, nb = summer.evaluate()
    meta.update(mode="bucketed", buckets=nb)
    return MomentProfile("lap2", lam, values, exact=exact, meta=meta)


def laplace_l1_profile(cfg: MechanismConfig, lambdas=None) -> MomentProfile:
    """Naive baseline: one coordinate carrying the inflated l1 bound ``sqrt(n) C``."""
    lam = cfg.lambdas() if lambdas is None else _validate_lambdas(lambdas)
    r = math.sqrt(cfg.dim) * cfg.clip / cfg.noise_scale
    return MomentProfile("laplace_l1", lam, alpha_univariate_profile(cfg.sampling_rate, r, lam))


# ---------------------------------------------------------------------------
# Baselines


def pure_laplace_epsilon(clip, noise_scale) -> float:
    """Pure epsilon of one Laplace release with l1 sensitivity ``clip``."""
    if not noise_scale > 0:
        raise DomainError(f"noise scale must be > 0, got {noise_scale}")
    if clip < 0:
        raise DomainError(f"clip must be >= 0, got {clip}")
    return clip / noise_scale


def clipping_geometry(dim):
    """Returns ``(sqrt(n), log(V_l1 / V_l2))`` for unit-radius clipping in R^n.

    ``V_l1 / V_l2 = (2 / sqrt(pi))^n Gamma(n/2 + 1) / Gamma(n + 1)``, the
    fraction of the l2 ball retained by the l1 cross-polytope.
    """
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise DomainError(f"dim must be an integer >= 1, got {dim}")
    n = float(dim)
    log_ratio = n * (math.log(2.0) - 0.5 * math.log(math.pi)) + math.lgamma(n / 2 + 1) - math.lgamma(n + 1)
    return math.sqrt(n), log_ratio
