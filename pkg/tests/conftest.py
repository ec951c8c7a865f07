import pytest

from absgate.domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Claim,
)


def make_sequence(confidences, atom_id="atom#1", entity="X", facts=None):
    """Ladder with the given real-level confidences, TOP appended."""
    levels = []
    for i, conf in enumerate(confidences):
        fact = facts[i] if facts else f"fact level {i}"
        levels.append(AbstractionLevel(i, Claim(entity, fact), float(conf)))
    levels.append(AbstractionLevel(len(levels), TOP, TOP_CONFIDENCE))
    return AbstractionSequence(atom_id, tuple(levels))


@pytest.fixture
def sequence_factory():
    return make_sequence
