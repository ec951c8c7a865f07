"""Information content of claims and retained-information coverage.

A claim's information is the relative entropy reduction it induces on a
broad entity set: 1 - log|matching entities| / log|category total|.
Entity counts come from counting questions answered by a pluggable
provider (fixture table or a live SPARQL endpoint).
"""

from __future__ import annotations

import logging
import math
import re
import time
from dataclasses import dataclass

import requests

from .backend import messages_request
from .domain import Claim, normalize_claim
from .pipeline import repair_messages

logger = logging.getLogger(__name__)


class InfoError(ValueError):
    pass


class QuestionParseError(InfoError):
    pass


class MissingCountError(InfoError):
    def __init__(self, question: str):
        super().__init__(f"no count available for question: {question!r}")
        self.question = question


class CountTransportError(InfoError):
    retriable = True


@dataclass(frozen=True)
class CountingQuestions:
    claim_key: str
    broad: str
    specific: str
    category: str

    def __post_init__(self):
        for q in (self.broad, self.specific):
            if not q.startswith("How many"):
                raise InfoError(f"counting question must start with 'How many': {q!r}")
        if not self.specific.startswith(f"How many {self.category}"):
            raise InfoError("specific question must embed the broad category")


@dataclass(frozen=True)
class EntityCounts:
    e_total: int
    e_claim: int
    provider: str = "fixture"

    def __post_init__(self):
        if self.e_total < 1:
            raise InfoError("category total must be >= 1")
        if self.e_claim < 0:
            raise InfoError("claim count must be >= 0")


_BROAD_RE = re.compile(r"(?m)^\s*[-*]?\s*Broad:\s*(How many .+\?)\s*$")
_SPECIFIC_RE = re.compile(r"(?m)^\s*[-*]?\s*Specific:\s*(How many .+\?)\s*$")
_CATEGORY_RE = re.compile(r"^How many (.+?) are there\?$")


def parse_counting_questions(text: str) -> tuple[str, str, str]:
    """Extract the Broad/Specific question pair and the plural category."""
    broad = _BROAD_RE.search(text)
    specific = _SPECIFIC_RE.search(text)
    missing = [name for name, m in (("Broad", broad), ("Specific", specific)) if not m]
    if missing:
        raise QuestionParseError(f"missing {' and '.join(missing)} line(s)")
    broad_q = broad.group(1).strip()
    specific_q = specific.group(1).strip()
    category = _CATEGORY_RE.match(broad_q)
    if not category:
        raise QuestionParseError(f"broad question has unexpected shape: {broad_q!r}")
    return broad_q, specific_q, category.group(1)


_REPAIR_INSTRUCTION = (
    "Your previous reply did not match the required output format. Reply with "
    "exactly two lines:\n- Broad: How many [pluralized broad category] are there?\n"
    "- Specific: How many [pluralized broad category] [rest of the sentence]?"
)


def generate_counting_questions(pipeline, claim: Claim) -> CountingQuestions:
    """One model call converting a claim into its two counting questions,
    with a single format-repair round before giving up."""
    request = pipeline.request("counting_questions", {"statement": claim.sentence()})
    reply = pipeline.backend.complete(request)
    try:
        broad, specific, category = parse_counting_questions(reply.text)
    except QuestionParseError:
        repair = pipeline.backend.complete(
            messages_request(
                repair_messages(request, reply.text, _REPAIR_INSTRUCTION),
                model=request.model,
                temperature=request.temperature,
                max_tokens=request.max_tokens,
            )
        )
        try:
            broad, specific, category = parse_counting_questions(repair.text)
        except QuestionParseError as exc:
            raise QuestionParseError(
                f"counting questions unparseable for {claim.sentence()!r}: {exc}"
            ) from exc
    return CountingQuestions(normalize_claim(claim), broad, specific, category)


_WS_RE = re.compile(r"\s+")


def normalize_question(question: str) -> str:
    return _WS_RE.sub(" ", question).strip().lower().rstrip("?.! ")


class FixtureCounts:
    """Exact count lookup from a shipped table of normalized questions."""

    name = "fixture"

    def __init__(self, table):
        self._table = {normalize_question(q): int(c) for q, c in dict(table).items()}

    @classmethod
    def from_file(cls, path) -> "FixtureCounts":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip() or line.lstrip().startswith("#"):
                    continue
                question, _, count = line.rpartition("\t")
                table[question] = int(count)
        return cls(table)

    def count(self, question: str) -> int:
        key = normalize_question(question)
        if key not in self._table:
            raise MissingCountError(question)
        return self._table[key]

    def items(self):
        return sorted(self._table.items())


class SparqlCounts:
    """COUNT queries against a SPARQL endpoint, one template per question.

    Rate-limited to one request per ``min_interval`` seconds.
    """

    name = "sparql"

    def __init__(self, endpoint, templates, session=None, min_interval=1.0, timeout=60.0):
        self.endpoint = endpoint
        self._templates = {normalize_question(q): t for q, t in dict(templates).items()}
        self._session = session if session is not None else requests.Session()
        self.min_interval = min_interval
        self.timeout = timeout
        self._last_request = 0.0

    def count(self, question: str) -> int:
        template = self._templates.get(normalize_question(question))
        if template is None:
            raise MissingCountError(question)
        wait = self.min_interval - (time.monotonic() - self._last_request)
        if wait > 0:
            time.sleep(wait)
        try:
            resp = self._session.get(
                self.endpoint,
                params={"query": template, "format": "json"},
                headers={"User-Agent": "absgate/0.1 (entity counting)"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise CountTransportError(f"endpoint unreachable: {exc}") from exc
        finally:
            self._last_request = time.monotonic()
        if not 200 <= resp.status_code < 300:
            raise CountTransportError(f"endpoint status {resp.status_code}")
        try:
            bindings = resp.json()["results"]["bindings"]
            first = bindings[0]
            value = next(iter(first.values()))["value"]
            return int(float(value))
        except (KeyError, IndexError, StopIteration, ValueError) as exc:
            raise CountTransportError(f"unexpected result shape: {exc}") from exc


def count_entities(question: str, provider) -> int:
    """Answer one counting question through the configured provider."""
    return provider.count(question)


def information(counts: EntityCounts) -> float:
    """Relative entropy reduction of a claim: 1 - ln|matching| / ln|total|.

    The matching count is clamped into [1, total]: knowledge-base sparsity
    can produce zeros (treated as maximally specific) or counts above the
    category total (treated as uninformative).
    """
    if counts.e_total < 2:
        raise InfoError("category total must be >= 2 for a meaningful measure")
    clamped = min(max(counts.e_claim, 1), counts.e_total)
    return 1.0 - math.log(clamped) / math.log(counts.e_total)


def coverage(original, abstracted) -> float:
    """Retained-information ratio between two claim sets.

    Inputs are (claim, info) pairs; each side is deduplicated on the
    canonical claim string before summing. Values above 1 are reported
    with a warning, not clamped, so measurement artifacts stay visible.
    """

    def pooled(pairs) -> float:
        seen = {}
        for claim, info in pairs:
            seen[normalize_claim(claim)] = float(info)
        return sum(seen.values())

    total_original = pooled(original)
    if total_original <= 0:
        raise InfoError("original response carries zero information")
    ratio = pooled(abstracted) / total_original
    if ratio > 1.0:
        logger.warning("coverage %.4f exceeds 1: duplicated or re-measured claims", ratio)
    return ratio
