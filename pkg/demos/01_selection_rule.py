"""How threshold selection walks an abstraction ladder.

An atom's ladder holds increasingly general restatements, each with its own
confidence, ending in full abstention (TOP). Raising the confidence
threshold pushes the selection toward more general rungs; TOP is reached
exactly when no real rung clears the bar.
"""

from absgate import select_abstraction
from absgate.domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Claim,
)

ladder = AbstractionSequence(
    "demo#1",
    (
        AbstractionLevel(0, Claim("Marie Curie", "was born in Warsaw, Poland"), 60.0),
        AbstractionLevel(1, Claim("Marie Curie", "was born in Poland"), 80.0),
        AbstractionLevel(2, Claim("Marie Curie", "was born in Europe"), 95.0),
        AbstractionLevel(3, TOP, TOP_CONFIDENCE),
    ),
)

print("ladder:")
for level in ladder.levels:
    statement = "(abstain)" if level.is_top else level.statement.sentence()
    print(f"  level {level.level}: confidence {level.confidence:5.1f}  {statement}")

print("\nselection as the threshold rises:")
for theta in (0, 50, 60, 79, 80, 90, 94.5, 95, 99, 100):
    result = select_abstraction(ladder, theta)
    chosen = "(abstain)" if result.abstained else result.chosen_statement.sentence()
    print(f"  theta {theta:>5} -> level {result.chosen_level}  {chosen}")

print("\nNote the strict inequality: at theta equal to a rung's confidence the")
print("selection moves past that rung, and at theta=100 nothing qualifies, so")
print("the atom abstains entirely.")
