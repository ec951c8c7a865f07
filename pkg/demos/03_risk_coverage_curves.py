"""Risk-coverage curves and their summary numbers.

Sweeping the confidence threshold produces one (coverage, risk) operating
point per threshold. The area under that curve (AURC, lower is better)
summarizes the whole trade-off; an anchor at coverage 0 keeps methods with
narrow coverage ranges comparable. Single-operating-point baselines are
compared by reading the curve at the same coverage.
"""

from pathlib import Path

from absgate import (
    SweepStat,
    aurc,
    build_rc_curve,
    improvement,
    matched_coverage_gap,
    render_rc_svg,
)
from absgate.analytics import RCPoint

# Synthetic sweep tallies for two prompts at four thresholds. Raising the
# threshold abstains more atoms: fewer retained, fewer errors, less info.
abstraction_stats = [
    SweepStat("p1", 0.0, 10, 6, 1.00, 1.00),
    SweepStat("p2", 0.0, 8, 5, 1.00, 1.00),
    SweepStat("p1", 50.0, 9, 6, 0.90, 1.00),
    SweepStat("p2", 50.0, 7, 5, 0.85, 1.00),
    SweepStat("p1", 75.0, 8, 7, 0.70, 1.00),
    SweepStat("p2", 75.0, 6, 5, 0.65, 1.00),
    SweepStat("p1", 90.0, 5, 5, 0.40, 1.00),
    SweepStat("p2", 90.0, 4, 4, 0.35, 1.00),
]
# Deleting the same atoms instead of abstracting them sheds risk a little
# faster per threshold but gives up far more information.
deletion_stats = [
    SweepStat("p1", 0.0, 10, 6, 1.00, 1.00),
    SweepStat("p2", 0.0, 8, 5, 1.00, 1.00),
    SweepStat("p1", 50.0, 8, 6, 0.75, 1.00),
    SweepStat("p2", 50.0, 6, 5, 0.70, 1.00),
    SweepStat("p1", 75.0, 6, 5, 0.50, 1.00),
    SweepStat("p2", 75.0, 4, 4, 0.40, 1.00),
    SweepStat("p1", 90.0, 3, 3, 0.16, 1.00),
    SweepStat("p2", 90.0, 2, 2, 0.14, 1.00),
]

abstraction_curve = build_rc_curve(abstraction_stats, "abstraction")
deletion_curve = build_rc_curve(deletion_stats, "deletion")

for curve in (abstraction_curve, deletion_curve):
    print(f"{curve.method} curve:")
    for point in curve.points:
        print(
            f"  theta {point.theta:5.1f}  coverage {point.coverage:.3f}  "
            f"risk {point.risk:.3f}  ({point.n_retained_atoms} atoms)"
        )

area_abs = aurc(abstraction_curve)
area_del = aurc(deletion_curve)
print(f"\nAURC abstraction = {area_abs:.4f}")
print(f"AURC deletion    = {area_del:.4f}")
print(f"relative improvement = {improvement(area_del, area_abs):.2f}%")

# A prompting baseline lands at a single operating point; compare it to the
# abstraction curve at matched coverage.
baseline = RCPoint(theta=0.0, coverage=0.70, risk=0.35)
gap = matched_coverage_gap(abstraction_curve, baseline)
print(f"\nbaseline at coverage {baseline.coverage}, risk {baseline.risk}")
print(f"risk gap at matched coverage = {gap:+.2f} points (positive favors the curve)")

out = Path(__file__).with_name("risk_coverage_demo.svg")
out.write_text(
    render_rc_svg(
        [abstraction_curve, deletion_curve], [("baseline", baseline)], title="demo"
    ),
    encoding="utf-8",
)
print(f"\nwrote {out.name}")
