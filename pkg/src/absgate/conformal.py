"""Risk-guided confidence-threshold selection.

Given per-atom critical thresholds from a calibration set, the selected
threshold is an order statistic whose exceedance risk concentrates around
the target: the marginal coverage of the order-statistic rule follows a
Beta law, which also yields the half-width epsilon of the interval that
holds with the requested probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import AbstractionSequence
from .pipeline import select_abstraction
from .special import beta_cdf

_INDEX_FUZZ = 1e-9  # guards ceil/floor against float noise in (n+1)*alpha


class ConformalError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationRecord:
    atom_id: str
    theta_k: float
    level_labels: tuple[str, ...] = ()


@dataclass(frozen=True)
class ThresholdChoice:
    value: float
    degenerate: bool
    index: int | None = None


@dataclass(frozen=True)
class ThresholdResult:
    theta_hat: float
    alpha: float
    delta: float
    n: int
    epsilon: float | None
    degenerate: bool


@dataclass(frozen=True)
class MonteCarloReport:
    alpha: float
    delta: float
    n: int
    m: int
    trials: int
    seed: int
    epsilon: float | None
    mean_risk: float
    std_risk: float
    frac_within_guarantee: float


def critical_threshold(sequence: AbstractionSequence, level_supported) -> float:
    """Smallest threshold at which the selected rung is a supported one.

    Selection is piecewise constant in theta with breakpoints exactly at
    the rung confidences, so scanning theta over {0} plus those values is
    exhaustive. TOP counts as supported (it asserts nothing), so the scan
    always terminates. A supported original atom yields 0.
    """
    supported = list(level_supported)
    if len(supported) != len(sequence.real_levels):
        raise ConformalError(
            f"need one label per real level: got {len(supported)} for "
            f"{len(sequence.real_levels)} levels"
        )
    supported.append(True)  # TOP
    for theta in sorted({0.0} | {lv.confidence for lv in sequence.levels}):
        selection = select_abstraction(sequence, theta)
        if supported[selection.chosen_level]:
            return theta
    raise AssertionError("unreachable: TOP selection is always supported")


def select_threshold(thetas, alpha: float, max_value: float = 100.0) -> ThresholdChoice:
    """Quantile rule: the ceil((n+1)(1-alpha))-th smallest calibration
    threshold, or the top of the scale when alpha < 1/(n+1).

    Duplicate thresholds stay in the sorted multiset; the order statistic
    is taken as written, which errs conservative.
    """
    values = sorted(float(t) for t in thetas)
    n = len(values)
    if n == 0:
        raise ConformalError("empty calibration set")
    if not 0.0 < alpha < 1.0:
        raise ConformalError(f"alpha={alpha} outside (0, 1)")
    if alpha < 1.0 / (n + 1):
        return ThresholdChoice(value=max_value, degenerate=True, index=None)
    k = math.ceil((n + 1) * (1.0 - alpha) - _INDEX_FUZZ)
    k = min(max(k, 1), n)
    return ThresholdChoice(value=values[k - 1], degenerate=False, index=k)


def quantile_width(alpha: float, n: int) -> int:
    """l = floor((n+1) alpha), the Beta parameter of the coverage law."""
    return math.floor((n + 1) * alpha + _INDEX_FUZZ)


def epsilon(alpha: float, delta: float, n: int) -> float:
    """Smallest eps with P(|R - alpha| <= eps) >= 1 - delta.

    R = 1 - C where C ~ Beta(n+1-l, l) is the marginal coverage of the
    quantile rule, so the probability of the symmetric interval is
    F(1-alpha+eps) - F(1-alpha-eps) with F the Beta CDF; eps is found by
    bisection on that monotone function.
    """
    if not 0.0 < alpha < 1.0:
        raise ConformalError(f"alpha={alpha} outside (0, 1)")
    if not 0.0 < delta < 1.0:
        raise ConformalError(f"delta={delta} outside (0, 1)")
    if n < 1:
        raise ConformalError("n must be >= 1")
    l = quantile_width(alpha, n)
    if l < 1:
        raise ConformalError(
            f"degenerate quantile: alpha={alpha} below 1/(n+1)={1.0 / (n + 1):.6g}"
        )
    a, b = n + 1 - l, l
    center = 1.0 - alpha
    target = 1.0 - delta

    def prob_within(eps: float) -> float:
        hi = min(center + eps, 1.0)
        lo = max(center - eps, 0.0)
        return beta_cdf(hi, a, b) - beta_cdf(lo, a, b)

    lo_eps, hi_eps = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo_eps + hi_eps)
        if prob_within(mid) >= target:
            hi_eps = mid
        else:
            lo_eps = mid
    return hi_eps


def calibrate_threshold(
    thetas, alpha: float, delta: float, max_value: float = 100.0
) -> ThresholdResult:
    values = list(thetas)
    choice = select_threshold(values, alpha, max_value=max_value)
    eps = None if choice.degenerate else epsilon(alpha, delta, len(values))
    return ThresholdResult(
        theta_hat=choice.value,
        alpha=alpha,
        delta=delta,
        n=len(values),
        epsilon=eps,
        degenerate=choice.degenerate,
    )


def monte_carlo_validate(
    alpha: float,
    delta: float,
    n: int,
    trials: int,
    *,
    m: int = 100,
    seed: int = 0,
    sampler=None,
    max_value: float = 1.0,
) -> MonteCarloReport:
    """Empirical check of the exceedance guarantee on synthetic thresholds.

    Each trial draws n calibration and m test thresholds i.i.d., selects
    theta_hat by the quantile rule, and measures the test fraction above
    it. Reports the mean and spread of that realized risk and how often it
    stays within alpha + epsilon.
    """
    if trials < 1:
        raise ConformalError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    draw = sampler if sampler is not None else (lambda r, size: r.uniform(0.0, 1.0, size))
    calibration = np.sort(np.asarray(draw(rng, (trials, n)), dtype=float), axis=1)
    test = np.asarray(draw(rng, (trials, m)), dtype=float)
    degenerate = alpha < 1.0 / (n + 1)
    if degenerate:
        theta_hat = np.full(trials, max_value)
        eps = None
    else:
        k = math.ceil((n + 1) * (1.0 - alpha) - _INDEX_FUZZ)
        k = min(max(k, 1), n)
        theta_hat = calibration[:, k - 1]
        eps = epsilon(alpha, delta, n)
    risks = (test > theta_hat[:, None]).mean(axis=1)
    bound = alpha + (eps if eps is not None else 0.0)
    return MonteCarloReport(
        alpha=alpha,
        delta=delta,
        n=n,
        m=m,
        trials=trials,
        seed=seed,
        epsilon=eps,
        mean_risk=float(risks.mean()),
        std_risk=float(risks.std(ddof=1)) if trials > 1 else 0.0,
        frac_within_guarantee=float((risks <= bound).mean()),
    )
