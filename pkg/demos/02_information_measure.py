"""Measuring how much a claim narrows down an entity set.

A claim like "was born in London" picks out a subset of a broad category
(all people). Its information is the relative entropy reduction
1 - log(matching) / log(total): 0 for claims true of everything, 1 for
claims pinning down a single entity. Coverage compares the information
retained by a rewritten response against the original.
"""

from absgate import coverage, information
from absgate.domain import Claim
from absgate.infomeasure import EntityCounts, FixtureCounts

counts = FixtureCounts(
    {
        "How many people are there?": 12_352_844,
        "How many people are born in London?": 20_313,
        "How many people are born in England?": 135_340,
        "How many people are born in the United Kingdom?": 356_000,
        "How many people are people?": 12_352_844,
    }
)
total = counts.count("How many people are there?")

print("claim specificity on the 'people' category "
      f"(total {total:,} entities):")
for question in (
    "How many people are born in London?",
    "How many people are born in England?",
    "How many people are born in the United Kingdom?",
    "How many people are people?",
):
    matching = counts.count(question)
    info = information(EntityCounts(total, matching))
    print(f"  {question:<52} {matching:>10,} matches  I = {info:.3f}")

print("\nThe city-level claim carries more information than the country-level")
print("one, and a tautology carries none. Coverage is the ratio of retained")
print("information after abstraction:")

original = [
    (Claim("Alan Turing", "was born in London"), information(EntityCounts(total, 20_313))),
    (Claim("Alan Turing", "was a computer scientist"), 0.35),
]
abstracted = [
    (Claim("Alan Turing", "was born in England"), information(EntityCounts(total, 135_340))),
    (Claim("Alan Turing", "was a computer scientist"), 0.35),
]
print(f"  original  -> {sum(i for _, i in original):.3f} information units")
print(f"  rewritten -> {sum(i for _, i in abstracted):.3f} information units")
print(f"  coverage  -> {coverage(original, abstracted):.3f}")
