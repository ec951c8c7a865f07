"""Core value types shared by every stage of the abstraction pipeline.

Everything here is an immutable value object, safe to share between
concurrent workers.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

PROMPT_SOURCES = ("factscore", "longfact", "custom")
RESPONSE_STAGES = ("original", "reconstructed")
LABELS = ("supported", "unsupported")

TOP_CONFIDENCE = 100.0
MAX_RATIONALE_CHARS = 280
MAX_QUOTE_CHARS = 600


class DomainError(ValueError):
    """A value violates one of the domain contracts."""


class Top:
    """Marker for full abstention: the zero-information end of a sequence."""

    __slots__ = ()
    _instance = None

    def __new__(cls) -> "Top":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "TOP"


TOP = Top()


@dataclass(frozen=True)
class Claim:
    """One entity plus one fact about it."""

    entity: str
    fact: str

    def __post_init__(self):
        if not self.entity.strip() or not self.fact.strip():
            raise DomainError("claim entity and fact must be non-empty")

    def bracketed(self) -> str:
        return f"[{self.entity}] [{self.fact}]."

    def sentence(self) -> str:
        text = f"{self.entity} {self.fact}".strip()
        return text if text.endswith((".", "!", "?")) else text + "."


_WS_RE = re.compile(r"\s+")


def normalize_claim(claim) -> str:
    """Canonical form of a claim used for exact-string deduplication.

    Lowercases, collapses whitespace, and strips terminal punctuation.
    Idempotent. Accepts a Claim, an (entity, fact) pair, or an already
    joined string. Rejects TOP, which carries no claim text.
    """
    if isinstance(claim, Top):
        raise DomainError("TOP carries no claim text")
    if isinstance(claim, Claim):
        text = f"{claim.entity} {claim.fact}"
    elif isinstance(claim, str):
        text = claim
    else:
        entity, fact = claim
        text = f"{entity} {fact}"
    text = _WS_RE.sub(" ", text).strip().lower()
    return text.rstrip(".!? ")


def validate_confidence(raw) -> float:
    """Check a confidence value against the 0..100 scale used everywhere.

    Out-of-range values signal malformed model output upstream.
    """
    value = float(raw)
    if math.isnan(value) or not (0.0 <= value <= 100.0):
        raise DomainError(f"confidence {raw!r} outside [0, 100]")
    return value


@dataclass(frozen=True)
class PromptRecord:
    id: str
    text: str
    source: str = "custom"

    def __post_init__(self):
        if not self.id:
            raise DomainError("prompt id must be non-empty")
        if not self.text.strip():
            raise DomainError("prompt text must be non-empty")
        if self.source not in PROMPT_SOURCES:
            raise DomainError(f"unknown prompt source {self.source!r}")


@dataclass(frozen=True)
class ResponseText:
    prompt_id: str
    text: str
    stage: str = "original"
    theta: float | None = None

    def __post_init__(self):
        if self.stage not in RESPONSE_STAGES:
            raise DomainError(f"unknown response stage {self.stage!r}")
        if self.stage == "reconstructed" and self.theta is None:
            raise DomainError("reconstructed responses need a threshold")
        if self.stage == "original" and self.theta is not None:
            raise DomainError("original responses carry no threshold")
        if self.theta is not None:
            validate_confidence(self.theta)


@dataclass(frozen=True)
class Atom:
    """One entity-fact claim extracted from a response."""

    id: str
    response_id: str
    index: int
    entity: str
    fact: str
    raw: str = ""

    def __post_init__(self):
        if self.index < 1:
            raise DomainError("atom index is 1-based")
        if not self.entity.strip() or not self.fact.strip():
            raise DomainError("atom entity and fact must be non-empty")

    @property
    def claim(self) -> Claim:
        return Claim(self.entity, self.fact)


@dataclass(frozen=True)
class AbstractionLevel:
    """One rung of an abstraction ladder; the last rung is always TOP."""

    level: int
    statement: Claim | Top
    confidence: float
    reasoning: str = ""

    def __post_init__(self):
        if self.level < 0:
            raise DomainError("abstraction level is 0-based")
        validate_confidence(self.confidence)
        if isinstance(self.statement, Top) and self.confidence != TOP_CONFIDENCE:
            raise DomainError("TOP is trivially reliable: confidence is 100")

    @property
    def is_top(self) -> bool:
        return isinstance(self.statement, Top)


@dataclass(frozen=True)
class AbstractionSequence:
    """Ordered, increasingly general variants of one atom, ending in TOP."""

    atom_id: str
    levels: tuple[AbstractionLevel, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise DomainError("sequence must have at least one level")
        if not levels[-1].is_top:
            raise DomainError("sequence must end in TOP")
        if any(lv.is_top for lv in levels[:-1]):
            raise DomainError("TOP may appear only as the final level")
        for expect, lv in enumerate(levels):
            if lv.level != expect:
                raise DomainError("level indices must run 0..K without gaps")

    @property
    def real_levels(self) -> tuple[AbstractionLevel, ...]:
        return self.levels[:-1]

    @property
    def confidences(self) -> tuple[float, ...]:
        return tuple(lv.confidence for lv in self.levels)


@dataclass(frozen=True)
class SelectionResult:
    """The most specific rung of a sequence cleared by a threshold."""

    atom_id: str
    theta: float
    chosen_level: int
    chosen_statement: Claim | Top

    def __post_init__(self):
        validate_confidence(self.theta)
        if self.chosen_level < 0:
            raise DomainError("chosen level is 0-based")

    @property
    def abstained(self) -> bool:
        return isinstance(self.chosen_statement, Top)


@dataclass(frozen=True)
class Evidence:
    title: str
    url: str
    quote: str = ""

    def __post_init__(self):
        if len(self.quote) > MAX_QUOTE_CHARS:
            raise DomainError(f"evidence quote exceeds {MAX_QUOTE_CHARS} chars")


@dataclass(frozen=True)
class CorrectnessLabel:
    """Supported/unsupported verdict for an atom or abstraction level."""

    target: str
    label: str
    rationale: str = ""
    evidence: tuple[Evidence, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "evidence", tuple(self.evidence))
        if self.label not in LABELS:
            raise DomainError(f"label must be one of {LABELS}, got {self.label!r}")
        if len(self.rationale) > MAX_RATIONALE_CHARS:
            raise DomainError(f"rationale exceeds {MAX_RATIONALE_CHARS} chars")

    @property
    def supported(self) -> bool:
        return self.label == "supported"
