"""Risk-coverage analytics.

Curve construction from threshold sweeps, area under the curve with the
zero-coverage anchor, matched-coverage comparisons between methods, and
ranking quality of confidence scores.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import groupby

import numpy as np

logger = logging.getLogger(__name__)


class AnalyticsError(ValueError):
    pass


@dataclass(frozen=True)
class RCPoint:
    theta: float
    coverage: float
    risk: float
    n_retained_atoms: int = 0

    def __post_init__(self):
        if not (math.isfinite(self.coverage) and math.isfinite(self.risk)):
            raise AnalyticsError("coverage and risk must be finite")
        if not 0.0 <= self.risk <= 1.0:
            raise AnalyticsError(f"risk {self.risk} outside [0, 1]")
        if self.coverage < 0.0:
            raise AnalyticsError("coverage must be non-negative")


@dataclass(frozen=True)
class RCCurve:
    method: str
    points: tuple[RCPoint, ...]
    anchored: bool = False

    def __post_init__(self):
        points = tuple(self.points)
        object.__setattr__(self, "points", points)
        if not points:
            raise AnalyticsError("a curve needs at least one operating point")
        coverages = [p.coverage for p in points]
        if any(b < a for a, b in zip(coverages, coverages[1:])):
            raise AnalyticsError("points must be sorted by coverage ascending")
        thetas = [p.theta for p in points]
        if len(set(thetas)) != len(thetas):
            raise AnalyticsError("at most one point per distinct theta")


@dataclass(frozen=True)
class SweepStat:
    """Per-prompt, per-threshold raw tallies feeding curve construction."""

    prompt_id: str
    theta: float
    n_atoms: int
    n_correct: int
    info_retained: float
    info_original: float


def build_rc_curve(stats, method: str, macro: bool = False) -> RCCurve:
    """Aggregate sweep tallies into one operating point per threshold.

    Micro averaging (default) pools retained atoms and information mass
    across prompts; macro averaging takes unweighted means of per-prompt
    risk and coverage. Thresholds whose retained pool is empty are
    skipped; the zero-coverage anchor is applied later by `aurc`.
    """
    stats = sorted(stats, key=lambda s: (s.theta, s.prompt_id))
    if not stats:
        raise AnalyticsError("no sweep statistics given")
    points = []
    for theta, group_iter in groupby(stats, key=lambda s: s.theta):
        group = list(group_iter)
        n_atoms = sum(s.n_atoms for s in group)
        if macro:
            risks = [1.0 - s.n_correct / s.n_atoms for s in group if s.n_atoms > 0]
            if not risks:
                continue
            covs = []
            for s in group:
                if s.info_original <= 0:
                    raise AnalyticsError(
                        f"prompt {s.prompt_id} carries zero original information"
                    )
                covs.append(s.info_retained / s.info_original)
            risk = sum(risks) / len(risks)
            coverage = sum(covs) / len(covs)
        else:
            if n_atoms == 0:
                continue
            info_original = sum(s.info_original for s in group)
            if info_original <= 0:
                raise AnalyticsError("pooled original information is zero")
            risk = 1.0 - sum(s.n_correct for s in group) / n_atoms
            coverage = sum(s.info_retained for s in group) / info_original
        risk = min(max(risk, 0.0), 1.0)
        points.append(RCPoint(theta, coverage, risk, n_atoms))
    if not points:
        raise AnalyticsError("every threshold had an empty retained pool")
    points.sort(key=lambda p: (p.coverage, p.theta))
    return RCCurve(method, tuple(points))


def _anchored_xy(curve: RCCurve) -> tuple[list[float], list[float]]:
    points = sorted(curve.points, key=lambda p: p.coverage)
    xs = [p.coverage for p in points]
    ys = [p.risk for p in points]
    if xs[0] > 0.0:
        xs.insert(0, 0.0)
        ys.insert(0, ys[0])
    return xs, ys


def aurc(curve: RCCurve) -> float:
    """Area under the risk-coverage curve over the full [0, 1] range.

    If the minimum observed coverage is positive, an anchor at coverage 0
    with the risk of the lowest-coverage point is prepended; beyond the
    highest observed coverage the last risk extends as a constant. The
    curve itself is read piecewise linearly (trapezoids).
    """
    xs, ys = _anchored_xy(curve)
    if xs[-1] < 1.0:
        xs.append(1.0)
        ys.append(ys[-1])
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    return float(((ys[1:] + ys[:-1]) * 0.5 * np.diff(xs)).sum())


def improvement(aurc_baseline: float, aurc_method: float) -> float:
    """Relative AURC reduction of a method against a baseline, in percent."""
    if aurc_baseline <= 0:
        raise AnalyticsError("baseline area must be positive")
    return 100.0 * (aurc_baseline - aurc_method) / aurc_baseline


def matched_coverage_gap(curve: RCCurve, baseline_point: RCPoint) -> float:
    """Risk difference, in percentage points, between a single-point method
    and the curve read at the same coverage (linear interpolation).

    Positive values favor the curve. Coverage outside the anchored span of
    the curve is refused rather than extrapolated.
    """
    xs, ys = _anchored_xy(curve)
    cov = baseline_point.coverage
    if cov < xs[0] or cov > xs[-1]:
        raise AnalyticsError(
            f"extrapolation refused: coverage {cov} outside [{xs[0]}, {xs[-1]}]"
        )
    interpolated = float(np.interp(cov, xs, ys))
    return 100.0 * (baseline_point.risk - interpolated)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=float)
    sorted_values = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_values[j + 1] == sorted_values[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * ((i + 1) + (j + 1))
        i = j + 1
    return ranks


def auroc(correct_scores, incorrect_scores) -> float:
    """Probability that a correct item outscores an incorrect one, ties
    counting half. Rank-based; identical to direct pair counting.
    """
    correct = np.asarray(list(correct_scores), dtype=float)
    incorrect = np.asarray(list(incorrect_scores), dtype=float)
    if correct.size == 0 or incorrect.size == 0:
        raise AnalyticsError("both score sets must be non-empty")
    combined = np.concatenate([correct, incorrect])
    ranks = _midranks(combined)
    u = ranks[: correct.size].sum() - correct.size * (correct.size + 1) / 2.0
    return float(u / (correct.size * incorrect.size))


# --- plotting -------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def render_rc_svg(curves, baseline_points=(), width=640, height=480, title="") -> str:
    """Self-contained SVG of risk-coverage curves on [0,1] x [0,1] axes.

    One polyline per curve; single-operating-point methods are drawn as
    markers. Deterministic output for byte-stable artifacts.
    """
    left, right, top, bottom = 60, 20, 30, 45
    plot_w = width - left - right
    plot_h = height - top - bottom

    def sx(v):
        return left + v * plot_w

    def sy(v):
        return top + (1.0 - v) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(
            f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" '
            f'font-family="sans-serif" font-size="14">{title}</text>'
        )
    for i in range(6):
        v = i / 5.0
        x, y = sx(v), sy(v)
        out.append(
            f'<line x1="{x:.1f}" y1="{sy(0):.1f}" x2="{x:.1f}" y2="{sy(0) + 4:.1f}" stroke="black"/>'
        )
        out.append(
            f'<text x="{x:.1f}" y="{sy(0) + 16:.1f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="10">{v:.1f}</text>'
        )
        out.append(
            f'<line x1="{sx(0) - 4:.1f}" y1="{y:.1f}" x2="{sx(0):.1f}" y2="{y:.1f}" stroke="black"/>'
        )
        out.append(
            f'<text x="{sx(0) - 7:.1f}" y="{y + 3:.1f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="10">{v:.1f}</text>'
        )
    out.append(
        f'<rect x="{sx(0):.1f}" y="{sy(1):.1f}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>'
    )
    out.append(
        f'<text x="{sx(0.5):.1f}" y="{height - 8}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">coverage</text>'
    )
    out.append(
        f'<text x="16" y="{sy(0.5):.1f}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="12" transform="rotate(-90 16 {sy(0.5):.1f})">risk</text>'
    )

    legend_y = top + 12
    color_index = 0
    for curve in curves:
        color = _PALETTE[color_index % len(_PALETTE)]
        color_index += 1
        xs, ys = _anchored_xy(curve)
        coords = " ".join(f"{sx(x):.2f},{sy(min(y, 1.0)):.2f}" for x, y in zip(xs, ys))
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<line x1="{sx(1) - 90:.1f}" y1="{legend_y}" x2="{sx(1) - 70:.1f}" '
            f'y2="{legend_y}" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{sx(1) - 65:.1f}" y="{legend_y + 3}" font-family="sans-serif" '
            f'font-size="10">{curve.method}</text>'
        )
        legend_y += 14
    for method, point in baseline_points:
        color = _PALETTE[color_index % len(_PALETTE)]
        color_index += 1
        out.append(
            f'<circle cx="{sx(point.coverage):.2f}" cy="{sy(min(point.risk, 1.0)):.2f}" '
            f'r="4" fill="{color}"/>'
        )
        out.append(
            f'<circle cx="{sx(1) - 80:.1f}" cy="{legend_y}" r="4" fill="{color}"/>'
        )
        out.append(
            f'<text x="{sx(1) - 65:.1f}" y="{legend_y + 3}" font-family="sans-serif" '
            f'font-size="10">{method}</text>'
        )
        legend_y += 14
    out.append("</svg>")
    return "\n".join(out) + "\n"
