"""Composition, (epsilon, delta) conversion, noise inversion and wall diagnostics.

Profiles hold per-step moment bounds ``alpha(lam)``. Composing T identical
steps multiplies them by T, and the composed profile converts to an
``(epsilon, delta)`` guarantee by scanning every order on the grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from lap2.accountant import (MechanismConfig, MomentProfile, laplace_l1_profile,
                             log_moment_term_F, multivariate_profile, pure_laplace_epsilon)
from lap2.errors import DomainError, InfeasibleError, InvariantError
from lap2.gaussian import GaussianVariant, gaussian_alphas, gaussian_profile

CONVERSIONS = ("balle", "simple")
# Relative bisection tolerance used when no absolute tau is given.
DEFAULT_REL_TAU = 1e-4


@dataclass(frozen=True)
class PrivacyPoint:
    """An ``(epsilon, delta)`` guarantee and the order that produced it."""

    epsilon: float
    delta: float
    lambda_star: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError(f"delta must lie in [0, 1], got {self.delta}")
        if math.isnan(self.epsilon) or self.epsilon < 0:
            raise DomainError(f"epsilon must be >= 0, got {self.epsilon}")


@dataclass(frozen=True)
class AccountReport:
    """Full result of accounting one configuration."""

    mechanism: str
    epsilon: float
    delta: float
    lambda_star: Optional[int]
    per_step_alpha: Optional[float]
    mode: str
    exact: bool


def compose(per_step: MomentProfile, steps: int) -> MomentProfile:
    """Bound for ``steps`` adaptive repetitions of the same mechanism."""
    if per_step.scope != "per_step":
        raise DomainError("compose expects a per-step profile")
    if isinstance(steps, bool) or int(steps) != steps or steps < 1:
        raise DomainError(f"steps must be an integer >= 1, got {steps!r}")
    meta = dict(per_step.meta, steps=int(steps))
    return MomentProfile(per_step.mechanism, per_step.lambdas.copy(), per_step.alphas * int(steps),
                         scope="composed", exact=per_step.exact, meta=meta)


def _check_nonempty(profile):
    if len(profile) == 0:
        raise DomainError("profile has no orders")


def delta_for_epsilon(profile: MomentProfile, epsilon: float) -> PrivacyPoint:
    """Smallest tail-bound delta over the grid: ``min exp(alpha - lam eps)``, capped at 1."""
    _check_nonempty(profile)
    if not epsilon >= 0:
        raise DomainError(f"epsilon must be >= 0, got {epsilon}")
    lam = profile.lambdas.astype(float)
    with np.errstate(invalid="ignore"):
        log_delta = profile.alphas - lam * epsilon
    log_delta = np.where(np.isnan(log_delta), np.inf, log_delta)
    idx = int(np.argmin(log_delta))
    delta = 1.0 if log_delta[idx] >= 0 else math.exp(log_delta[idx])
    return PrivacyPoint(float(epsilon), delta, int(profile.lambdas[idx]))


def _epsilon_curve(alphas, lam, delta, method):
    lam = np.asarray(lam, dtype=float)
    log_delta = math.log(delta)
    if method == "balle":
        return alphas / lam + np.log(lam / (lam + 1.0)) - (log_delta + np.log(lam + 1.0)) / lam
    if method == "simple":
        return (alphas - log_delta) / lam
    raise DomainError(f"unknown conversion {method!r}; expected one of {CONVERSIONS}")


def epsilon_for_delta(profile: MomentProfile, delta: float, method: str = "balle") -> PrivacyPoint:
    """Smallest epsilon over the grid for a target delta.

    ``"balle"`` uses ``alpha/lam + log(lam/(lam+1)) - (log delta + log(lam+1))/lam``,
    ``"simple"`` the plain tail bound ``(alpha - log delta)/lam``. The result is
    floored at 0.

    Raises:
        InfeasibleError: every order gives an infinite epsilon.
    """
    _check_nonempty(profile)
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    eps = _epsilon_curve(profile.alphas, profile.lambdas, delta, method)
    idx = int(np.argmin(eps))
    if not np.isfinite(eps[idx]):
        raise InfeasibleError("moment bound is infinite at every order")
    return PrivacyPoint(max(0.0, float(eps[idx])), float(delta), int(profile.lambdas[idx]))


# ---------------------------------------------------------------------------
# Configuration-level accounting


def _silent(cfg: MechanismConfig) -> bool:
    """True when the released output cannot depend on any record."""
    return cfg.clip == 0.0 or cfg.sampling_rate == 0.0


def moment_profile(cfg: MechanismConfig, lambdas=None, mode: str = "auto",
                   variant=GaussianVariant.NORMALIZED) -> MomentProfile:
    """Per-step profile for any mechanism that has one.

    ``mode`` applies to Lap2 and ``variant`` to the Gaussian mechanism.
    """
    if cfg.mechanism == "lap2":
        return multivariate_profile(cfg, lambdas, mode=mode)
    if cfg.mechanism == "laplace_l1":
        return laplace_l1_profile(cfg, lambdas)
    if cfg.mechanism == "gaussian":
        return gaussian_profile(cfg, lambdas, variant)
    raise DomainError("pure_laplace is a single pure-epsilon release and has no moment profile")


def alpha_lower_bound(cfg: MechanismConfig, lambdas) -> np.ndarray:
    """Cheap per-step lower bound on ``alpha(lam)``.

    Keeps only the ``eta = lam + 1`` term of the binomial sum, which is
    ``zeta^(lam+1)`` times the largest moment of the worst coordinate.
    """
    lam = np.asarray(lambdas, dtype=np.int64)
    m = lam + 1
    if _silent(cfg):
        return np.zeros(lam.shape)
    log_z = math.log(cfg.sampling_rate)
    if cfg.mechanism == "gaussian":
        sigma = cfg.noise_scale / cfg.clip
        log_kernel = m * (m - 1) / (2.0 * sigma * sigma)
    else:
        r = cfg.clip / cfg.noise_scale
        if cfg.mechanism == "laplace_l1":
            r *= math.sqrt(cfg.dim)
        log_kernel = log_moment_term_F(r, m)
    return np.maximum(0.0, m * log_z + log_kernel)


def _scan_pruned(cfg, lam, exact_alphas, objective, head=64):
    """Minimizes ``objective(T * alpha, lam)`` without evaluating every order.

    Orders beyond the first ``head`` are skipped when a lower bound on
    ``alpha`` (monotonicity plus alpha_lower_bound) already puts their
    objective above the best value found. The objective must be increasing
    in alpha, so the minimizer is the same as a full scan.
    """
    steps = cfg.steps
    head_lam = lam[:head]
    head_alpha = steps * exact_alphas(head_lam)
    head_obj = objective(head_alpha, head_lam)
    best = float(np.min(head_obj))
    rest = lam[head:]
    if rest.size == 0:
        return head_lam, head_alpha, head_obj
    floor = np.maximum(steps * alpha_lower_bound(cfg, rest), head_alpha[-1])
    keep = objective(floor, rest) <= best
    cand = rest[keep]
    cand_alpha = steps * exact_alphas(cand) if cand.size else np.zeros(0)
    lam_all = np.concatenate([head_lam, cand])
    alpha_all = np.concatenate([head_alpha, cand_alpha])
    return lam_all, alpha_all, objective(alpha_all, lam_all)


def _gaussian_exact(cfg):
    sigma = math.inf if cfg.clip == 0.0 else cfg.noise_scale / cfg.clip
    return lambda lam: gaussian_alphas(sigma, cfg.sampling_rate, lam)


def epsilon_of(cfg: MechanismConfig, mode: str = "auto", method: str = "balle",
               variant=GaussianVariant.NORMALIZED) -> PrivacyPoint:
    """Composed epsilon at ``cfg.delta`` over the grid ``1..cfg.lambda_max``.

    A configuration that carries no signal (zero clip or zero sampling
    rate) is exactly 0-DP. Gaussian profiles are scanned with lower-bound
    pruning, which returns the same minimizer as a full scan.
    """
    if cfg.mechanism == "pure_laplace":
        return PrivacyPoint(pure_laplace_epsilon(cfg.clip, cfg.noise_scale), 0.0, None)
    if _silent(cfg):
        return PrivacyPoint(0.0, cfg.delta, None)
    if cfg.mechanism == "gaussian" and GaussianVariant(variant) is GaussianVariant.NORMALIZED:
        objective = lambda a, l: _epsilon_curve(a, l, cfg.delta, method)  # noqa: E731
        lam, _, eps = _scan_pruned(cfg, cfg.lambdas(), _gaussian_exact(cfg), objective)
        idx = int(np.argmin(eps))
        if not np.isfinite(eps[idx]):
            raise InfeasibleError("moment bound is infinite at every order")
        return PrivacyPoint(max(0.0, float(eps[idx])), cfg.delta, int(lam[idx]))
    composed = compose(moment_profile(cfg, mode=mode, variant=variant), cfg.steps)
    return epsilon_for_delta(composed, cfg.delta, method)


def delta_of(cfg: MechanismConfig, epsilon: float, mode: str = "auto",
             variant=GaussianVariant.NORMALIZED) -> PrivacyPoint:
    """Composed tail-bound delta at ``epsilon`` over the grid ``1..cfg.lambda_max``."""
    if cfg.mechanism == "pure_laplace":
        eps0 = pure_laplace_epsilon(cfg.clip, cfg.noise_scale)
        return PrivacyPoint(float(epsilon), 0.0 if epsilon >= eps0 else 1.0, None)
    if _silent(cfg):
        return PrivacyPoint(float(epsilon), 0.0, None)
    if cfg.mechanism == "gaussian" and GaussianVariant(variant) is GaussianVariant.NORMALIZED:
        objective = lambda a, l: a - l * epsilon  # noqa: E731
        lam, alphas, _ = _scan_pruned(cfg, cfg.lambdas(), _gaussian_exact(cfg), objective)
        profile = MomentProfile("gaussian", *_sorted(lam, alphas), scope="composed")
        return delta_for_epsilon(profile, epsilon)
    return delta_for_epsilon(compose(moment_profile(cfg, mode=mode, variant=variant), cfg.steps), epsilon)


def _sorted(lam, alphas):
    order = np.argsort(lam)
    return lam[order], alphas[order]


def epsilon_lower_bound(cfg: MechanismConfig, method: str = "balle") -> float:
    """A cheap lower bound on epsilon_of(cfg), from alpha_lower_bound."""
    if cfg.mechanism == "pure_laplace":
        return pure_laplace_epsilon(cfg.clip, cfg.noise_scale)
    lam = cfg.lambdas()
    eps = _epsilon_curve(cfg.steps * alpha_lower_bound(cfg, lam), lam, cfg.delta, method)
    return max(0.0, float(np.min(eps)))


def account(cfg: MechanismConfig, mode: str = "auto", method: str = "balle",
            variant=GaussianVariant.NORMALIZED) -> AccountReport:
    """Epsilon at ``cfg.delta`` plus the details a report needs."""
    if cfg.mechanism == "pure_laplace":
        eps = pure_laplace_epsilon(cfg.clip, cfg.noise_scale)
        return AccountReport("pure_laplace", eps, 0.0, None, None, "closed_form", True)
    if _silent(cfg):
        return AccountReport(cfg.mechanism, 0.0, cfg.delta, None, 0.0, "closed_form", True)
    point = epsilon_of(cfg, mode=mode, method=method, variant=variant)
    lam = np.array([point.lambda_star])
    if cfg.mechanism == "lap2":
        profile = multivariate_profile(cfg, lam, mode=mode)
        used = profile.meta.get("mode", "exact")
        exact = profile.exact
    else:
        profile = moment_profile(cfg, lam, variant=variant)
        used, exact = "exact", True
    return AccountReport(cfg.mechanism, point.epsilon, point.delta, point.lambda_star,
                         float(profile.alphas[0]), used, exact)


# ---------------------------------------------------------------------------
# Noise inversion


class _NoiseCurve:
    """Memoized ``noise scale -> epsilon`` for one configuration."""

    def __init__(self, cfg, mode, method, epsilon_fn=None):
        self.cfg = cfg
        self.mode = mode
        self.method = method
        self.epsilon_fn = epsilon_fn
        self._memo = {}

    def __call__(self, noise):
        noise = float(noise)
        if noise not in self._memo:
            cfg = self.cfg.replace(noise_scale=noise)
            if self.epsilon_fn is not None:
                self._memo[noise] = float(self.epsilon_fn(cfg))
            else:
                self._memo[noise] = epsilon_of(cfg, self.mode, self.method).epsilon
        return self._memo[noise]

    def exceeds(self, noise, target):
        """True when epsilon at ``noise`` is above ``target``; uses the cheap bound first."""
        if self.epsilon_fn is None:
            cfg = self.cfg.replace(noise_scale=float(noise))
            if epsilon_lower_bound(cfg, self.method) > target:
                return True
        return self(noise) > target


def _tolerance(tau, b_high):
    return DEFAULT_REL_TAU * b_high if tau is None else tau


def bisect_noise(feasible: Callable[[float], bool], lo: float, hi: float, tau) -> float:
    """Shrinks ``[lo, hi]`` (``lo`` infeasible, ``hi`` feasible) to width <= tau.

    ``tau=None`` means a relative tolerance of ``1e-4 * hi``. Returns the
    feasible end.
    """
    while hi - lo > _tolerance(tau, hi):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def invert_noise_for_epsilon(cfg: MechanismConfig, epsilon_target: float,
                             bounds: Tuple[float, float] = (1e-4, 1e4), tau: Optional[float] = None,
                             mode: str = "auto", method: str = "balle", start: Optional[float] = None,
                             epsilon_fn: Optional[Callable[[MechanismConfig], float]] = None) -> float:
    """Smallest noise scale (within tau) whose composed epsilon meets the target.

    Args:
        cfg: Configuration; its ``noise_scale`` is ignored.
        epsilon_target: Target epsilon, > 0.
        bounds: Search bracket ``(lo, hi)`` on the noise scale.
        tau: Absolute tolerance on the noise scale, or None for ``1e-4``
            times the running upper end.
        mode: Multivariate evaluation mode.
        method: Conversion used for epsilon.
        start: Optional warm-start guess inside the bracket.
        epsilon_fn: Replaces the accountant (``cfg -> epsilon``); test hook.

    Returns:
        A noise scale ``b`` with ``epsilon(b) <= epsilon_target``.

    Raises:
        InfeasibleError: even the largest noise misses the target.
        InvariantError: epsilon increases across the bracket.
    """
    lo, hi = (float(v) for v in bounds)
    if not 0 < lo < hi or not math.isfinite(hi):
        raise DomainError(f"need 0 < lo < hi, got {bounds}")
    if not epsilon_target > 0:
        raise DomainError(f"epsilon target must be > 0, got {epsilon_target}")
    if tau is not None and not tau > 0:
        raise DomainError(f"tau must be > 0, got {tau}")
    curve = _NoiseCurve(cfg, mode, method, epsilon_fn)
    eps_hi = curve(hi)
    if eps_hi > epsilon_target:
        raise InfeasibleError(f"epsilon {eps_hi:.6g} at the largest noise {hi:.6g} exceeds the target")
    if not curve.exceeds(lo, epsilon_target):
        if curve(lo) < eps_hi:
            raise InvariantError("epsilon increases with the noise scale across the bracket")
        return lo
    # Lower endpoint is infeasible and the upper feasible, so the bracket is
    # consistent with a decreasing curve.
    if start is not None and lo < start < hi:
        lo, hi = _warm_bracket(curve, epsilon_target, lo, hi, float(start))
    return bisect_noise(lambda b: not curve.exceeds(b, epsilon_target), lo, hi, tau)


def _warm_bracket(curve, target, lo, hi, start):
    """Narrows ``[lo, hi]`` by doubling/halving outward from ``start``."""
    if curve.exceeds(start, target):
        a = start
        while True:
            b = min(2.0 * a, hi)
            if b >= hi or not curve.exceeds(b, target):
                return a, b
            a = b
    b = start
    while True:
        a = max(0.5 * b, lo)
        if a <= lo or curve.exceeds(a, target):
            return a, b
        b = a


# ---------------------------------------------------------------------------
# Privacy walls


@dataclass(frozen=True)
class WallRow:
    """One epsilon grid point of a wall report; nan marks an infeasible entry."""

    epsilon: float
    noise_gaussian: float
    noise_lap2: float
    w_r_gaussian: float
    w_r_lap2: float
    delta_g: float
    delta_l2: float
    left_wall: bool


@dataclass
class WallReport:
    """Wall diagnostics for one sampling rate."""

    sampling_rate: float
    rows: List[WallRow]
    left_wall_epsilon: Optional[float]
    meta: dict = field(default_factory=dict)


def log_log_slope(x, y) -> np.ndarray:
    """``|d log y / d log x|`` by central differences (one-sided at the ends).

    Non-finite or non-positive ``y`` values become nan and spoil their
    neighbours' slopes rather than being skipped.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        return np.full(x.shape, np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        ly = np.where((y > 0) & np.isfinite(y), np.log(y), np.nan)
        return np.abs(np.gradient(ly, np.log(x)))


InverterFn = Callable[[str, float, float], float]
DeltaFn = Callable[[str, float, float, float], float]


def wall_diagnostics(sampling_rates: Sequence[float], epsilons: Sequence[float], delta: float,
                     dim: int, steps: int, clip: float = 1.0, lambda_max: int = 4096,
                     bounds: Tuple[float, float] = (1e-4, 1e4), tau: Optional[float] = None,
                     mode: str = "auto", inverter: Optional[InverterFn] = None,
                     delta_fn: Optional[DeltaFn] = None) -> List[WallReport]:
    """Noise-versus-epsilon curves and the left wall for Gaussian and Lap2 noise.

    For every rate and grid epsilon, both mechanisms' noise is inverted to
    meet ``(epsilon, delta)``, and ``W_R = |d log noise / d log epsilon|`` is
    taken along the grid. The wall compares the two mechanisms at matched
    per-coordinate variance (Gaussian sigma = Laplace b * sqrt(2), with b the
    Lap2 noise at that epsilon): the left wall is the first grid epsilon with
    ``delta_g > 2 * delta_l2``.

    Args:
        sampling_rates: Rates q to report on.
        epsilons: Strictly increasing epsilon grid, at least 3 points.
        delta: Target delta for the inversions.
        dim: Parameter count n for the Lap2 accountant.
        steps: Number of composed steps T.
        clip: Clipping norm C.
        lambda_max: Largest moment order scanned.
        bounds: Noise search bracket.
        tau: Bisection tolerance (see invert_noise_for_epsilon).
        mode: Multivariate evaluation mode.
        inverter: Optional ``(mechanism, q, epsilon) -> noise`` replacing
            the inversion (test hook).
        delta_fn: Optional ``(mechanism, q, epsilon, noise) -> delta``
            replacing the tail-bound delta (test hook).

    Returns:
        One WallReport per rate, in input order.
    """
    eps = np.asarray(epsilons, dtype=float)
    if eps.ndim != 1 or eps.size < 3 or np.any(np.diff(eps) <= 0) or np.any(eps <= 0):
        raise DomainError("epsilon grid must be positive, strictly increasing, with >= 3 points")
    reports = []
    for q in sampling_rates:
        base = {
            "gaussian": MechanismConfig("gaussian", clip, 1.0, float(q), steps, dim, delta, lambda_max),
            "lap2": MechanismConfig("lap2", clip, 1.0, float(q), steps, dim, delta, lambda_max),
        }

        previous = {}

        def invert(mech, e):
            if inverter is not None:
                return float(inverter(mech, float(q), float(e)))
            lo, hi = bounds
            start = None
            if mech in previous:
                # Noise falls as epsilon grows, so the last grid point's noise
                # is already feasible here; W_R near 1 suggests the start.
                prev_eps, prev_noise = previous[mech]
                if prev_noise <= lo:
                    return float(lo)
                hi = prev_noise
                start = prev_noise * prev_eps / e
            try:
                noise = invert_noise_for_epsilon(base[mech], float(e), (lo, hi), tau, mode, start=start)
            except InfeasibleError:
                return math.nan
            previous[mech] = (float(e), noise)
            return noise

        def tail_delta(mech, e, noise):
            if not math.isfinite(noise):
                return math.nan
            if delta_fn is not None:
                return float(delta_fn(mech, float(q), float(e), noise))
            return delta_of(base[mech].replace(noise_scale=noise), float(e), mode).delta

        noise_g = np.array([invert("gaussian", e) for e in eps])
        noise_l = np.array([invert("lap2", e) for e in eps])
        slope_g = log_log_slope(eps, noise_g)
        slope_l = log_log_slope(eps, noise_l)
        rows = []
        wall = None
        for i, e in enumerate(eps):
            d_l2 = tail_delta("lap2", e, noise_l[i])
            d_g = tail_delta("gaussian", e, noise_l[i] * math.sqrt(2.0))
            hit = bool(wall is None and d_g > 2.0 * d_l2)
            if hit:
                wall = float(e)
            rows.append(WallRow(float(e), float(noise_g[i]), float(noise_l[i]), float(slope_g[i]),
                                float(slope_l[i]), d_g, d_l2, hit))
        meta = {"noise_matching": "sigma = b * sqrt(2)", "dim": dim, "steps": steps, "delta": delta}
        reports.append(WallReport(float(q), rows, wall, meta))
    return reports
