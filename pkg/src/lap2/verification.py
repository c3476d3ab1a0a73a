"""Field verification: the accountant checked against the independent oracles.

Each check returns a CheckResult with the worst error it saw. Checks marked
``report_only`` record a measurement (such as which moment ordering held)
and never fail the suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from lap2.accountant import (MechanismConfig, alpha_multivariate, alpha_univariate,
                             alpha_univariate_coords, log_moment_term_F, multivariate_profile)
from lap2.gaussian import alpha_gaussian
from lap2.oracle import (MixtureSpec, gaussian_mixture_moment, laplace_ratio_log_moment, mc_moment,
                         quadrature_moment_A, quadrature_moment_B, robin_hood_pair,
                         sample_clipped_gradient, verify_worst_case_means)

SUITES = ("fast", "full")


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    failing: Optional[dict] = None
    report_only: bool = False
    detail: dict = field(default_factory=dict)


class _Worst:
    """Tracks the largest error and the first tuple that broke the tolerance."""

    def __init__(self, tolerance):
        self.tolerance = tolerance
        self.max_error = 0.0
        self.failing = None

    def add(self, error, **where):
        if not error <= self.max_error:
            self.max_error = float(error)
        if self.failing is None and not error <= self.tolerance:
            self.failing = dict(where, error=float(error))

    def result(self, name, **detail):
        return CheckResult(name, self.max_error, self.tolerance, self.failing is None,
                           self.failing, detail=detail)


def check_F_closed_form(suite):
    worst = _Worst(1e-10)
    etas = range(0, 258) if suite == "full" else (0, 1, 2, 3, 8, 33, 129, 257)
    for r in (0.01, 0.1, 1.0, 2.0, 5.0):
        eta = np.array(list(etas))
        # Relative error of F, measured through the logs so large orders stay finite.
        gap = np.abs(np.expm1(log_moment_term_F(r, eta) - laplace_ratio_log_moment(eta, 0.0, r, 1.0)))
        for e, g in zip(etas, gap):
            worst.add(float(g), r=r, eta=e)
    return worst.result("F_vs_case_split")


def check_alpha_quadrature(suite):
    worst = _Worst(1e-8)
    zetas = (0.0, 1e-3, 1e-2, 1e-1, 0.5, 1.0)
    lams = (1, 2, 4, 8, 16, 64, 256) if suite == "full" else (1, 2, 8, 64)
    for zeta in zetas:
        for r in (0.01, 0.1, 1.0, 2.0, 5.0):
            for lam in lams:
                ref = quadrature_moment_A(MixtureSpec("laplace", 1.0, 0.0, r, zeta), lam)
                ours = alpha_univariate(zeta, r, lam)
                # Compare on the log scale: exp() of both overflows for large orders.
                worst.add(abs(math.expm1(ours - ref.log_value)), zeta=zeta, r=r, lam=lam)
    return worst.result("alpha_vs_quadrature")


def check_gaussian_quadrature(suite):
    worst = _Worst(1e-6)
    lams = (1, 2, 4, 8, 16, 32, 64) if suite == "full" else (1, 4, 16)
    for zeta in (1e-3, 1e-2, 1e-1):
        for sigma in (0.5, 1.0, 2.0, 4.0):
            for lam in lams:
                ref = gaussian_mixture_moment(sigma, zeta, lam)
                ours = alpha_gaussian(sigma, zeta, lam)
                worst.add(abs(math.expm1(ours - ref.log_value)), zeta=zeta, sigma=sigma, lam=lam)
    return worst.result("gaussian_vs_quadrature")


def check_monte_carlo(suite, seed):
    """Largest |MC - A| in units of the MC standard error (must stay below 4)."""
    worst = _Worst(4.0)
    samples = 200_000 if suite == "full" else 20_000
    k = 0
    for zeta in (0.01, 0.1, 0.5):
        for r in (0.1, 1.0):
            for lam in (1, 4):
                spec = MixtureSpec("laplace", 1.0, 0.0, r, zeta)
                ref = quadrature_moment_A(spec, lam).value
                est = mc_moment(spec, lam, samples, seed + k)
                k += 1
                z = abs(est.value - ref) / est.error_bound if est.error_bound > 0 else 0.0
                worst.add(z, zeta=zeta, r=r, lam=lam, seed=est.seed)
    return worst.result("monte_carlo_agreement")


def check_schur(suite, seed):
    """Reverse Robin-Hood transfers never decrease the summed coordinate bound."""
    worst = _Worst(1e-10)
    count = 500 if suite == "full" else 60
    rng = np.random.default_rng(seed)
    for n in (2, 8, 64):
        for k in range(count):
            x = np.abs(rng.standard_normal(n)) * rng.uniform(0.1, 2.0)
            zeta = float(rng.choice([1e-3, 1e-2, 1e-1, 0.5]))
            lam = int(rng.choice([1, 2, 8, 32]))
            x, y = robin_hood_pair(x, int(rng.integers(2 ** 31)))
            ax = float(np.sum(alpha_univariate_coords(zeta, x, lam)))
            ay = float(np.sum(alpha_univariate_coords(zeta, y, lam)))
            worst.add(max(0.0, ax - ay) / max(1.0, ay), n=n, index=k, zeta=zeta, lam=lam)
    # Monotone and convex in r (finite differences on a fine grid).
    r = np.linspace(0.0, 5.0, 501)
    h = r[1] - r[0]
    for zeta in (1e-2, 1e-1, 0.5):
        for lam in (1, 4, 16):
            a = alpha_univariate_coords(zeta, r, lam)
            d1 = np.diff(a) / h
            d2 = np.diff(a, 2)
            worst.add(max(0.0, -float(d1.min()) - 1e-12), zeta=zeta, lam=lam, kind="first_difference")
            worst.add(max(0.0, -float(d2.min()) - 1e-9), zeta=zeta, lam=lam, kind="second_difference")
    return worst.result("schur_convexity")


def check_majorization(suite, seed):
    """Random clipped gradients never beat the extreme magnitude vector."""
    worst = _Worst(1e-10)
    count = 1000 if suite == "full" else 40
    dims = (2, 8, 64, 1024)
    rng = np.random.default_rng(seed)
    spots = [(1e-2, 1.0, 4), (1e-1, 0.5, 16), (0.5, 2.0, 2)]
    bound = {}
    for n in dims:
        for zeta, clip, lam in spots:
            cfg = MechanismConfig("lap2", clip, 1.0, zeta, 1, n, 1e-5)
            bound[n, zeta] = alpha_multivariate(cfg, lam, "exact")[0]
    for n in dims:
        for k in range(count):
            zeta, clip, lam = spots[k % len(spots)]
            g = sample_clipped_gradient(n, clip, int(rng.integers(2 ** 31)))
            total = float(np.sum(alpha_univariate_coords(zeta, np.abs(g), lam)))
            worst.add(max(0.0, total - bound[n, zeta]), n=n, index=k, zeta=zeta, clip=clip, lam=lam)
    return worst.result("majorization_dominance")


def check_bucketed(suite):
    """Bucketed profile is an upper bound within 1% of the exact one."""
    worst = _Worst(1e-2)
    dims = (100, 2000, 20000) if suite == "full" else (100, 2000)
    lambdas = np.arange(1, 129)
    for n in dims:
        for zeta, clip in ((1e-2, 1.0), (1e-1, 0.3)):
            cfg = MechanismConfig("lap2", clip, 1.0, zeta, 1, n, 1e-5, 128)
            exact = multivariate_profile(cfg, lambdas, "exact").alphas
            bucketed = multivariate_profile(cfg, lambdas, "bucketed").alphas
            below = np.max(exact - bucketed) > 1e-12 * np.max(exact)
            err = float(np.max((bucketed - exact) / exact))
            worst.add(math.inf if below else err, n=n, zeta=zeta, clip=clip)
    return worst.result("bucketed_upper_bound")


def probe_ab_ordering(suite):
    """Measures whether A >= B held on a grid of Laplace mixtures (report only)."""
    a_ge_b = 0
    b_gt_a = []
    for zeta in (1e-3, 1e-2, 1e-1, 0.5):
        for r in (0.1, 1.0, 2.0):
            for lam in (1, 2, 4, 8):
                spec = MixtureSpec("laplace", 1.0, 0.0, r, zeta)
                la = quadrature_moment_A(spec, lam).log_value
                lb = quadrature_moment_B(spec, lam).log_value
                if la >= lb:
                    a_ge_b += 1
                else:
                    b_gt_a.append({"zeta": zeta, "r": r, "lam": lam, "log_gap": lb - la})
    return CheckResult("ab_ordering", 0.0, 0.0, True, None, report_only=True,
                       detail={"a_ge_b": a_ge_b, "b_gt_a": len(b_gt_a),
                               "examples": b_gt_a[:3]})


def probe_worst_case_means(suite):
    """Where A peaks over mean pairs in [-C, C]^2 (report only)."""
    rep = verify_worst_case_means(0.01, 1.0, 4, points=9)
    return CheckResult("worst_case_means", 0.0, 0.0, True, None, report_only=True,
                       detail={"argmax": list(rep.argmax), "gap": rep.gap,
                               "argmax_adjacent": list(rep.argmax_adjacent),
                               "gap_adjacent": rep.gap_adjacent})


def run_suite(suite: str = "fast", seed: int = 0,
              progress: Optional[Callable[[CheckResult], None]] = None) -> List[CheckResult]:
    """Runs every check in order.

    Args:
        suite: ``"fast"`` (a subset sized to run well under a minute) or
            ``"full"`` (the complete grids).
        seed: Base seed for the randomized checks.
        progress: Optional callback invoked after each check.

    Returns:
        The check results, in a fixed order.
    """
    if suite not in SUITES:
        raise ValueError(f"suite must be one of {SUITES}, got {suite!r}")
    steps = [
        lambda: check_F_closed_form(suite),
        lambda: check_alpha_quadrature(suite),
        lambda: check_gaussian_quadrature(suite),
        lambda: check_monte_carlo(suite, seed),
        lambda: check_schur(suite, seed),
        lambda: check_majorization(suite, seed),
        lambda: check_bucketed(suite),
        lambda: probe_ab_ordering(suite),
        lambda: probe_worst_case_means(suite),
    ]
    results = []
    for step in steps:
        res = step()
        results.append(res)
        if progress is not None:
            progress(res)
    return results


def summary(results: List[CheckResult]) -> Dict:
    return {
        "passed": all(r.passed for r in results),
        "checks": [
            {"name": r.name, "max_error": r.max_error, "tolerance": r.tolerance, "passed": r.passed,
             "report_only": r.report_only, "failing": r.failing, "detail": r.detail}
            for r in results
        ],
    }
