"""The staged abstraction procedure.

Stages: generate a response, split it into atoms, elicit a confidence per
atom, build an abstraction ladder per atom with per-rung confidences,
select the most specific rung above a threshold, reconstruct the
survivors into fluent text, and split the result again for evaluation.
Also houses the deletion and prompting baselines used for comparison.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backend import ChatRequest, messages_request
from .domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Atom,
    Claim,
    DomainError,
    PromptRecord,
    ResponseText,
    SelectionResult,
    normalize_claim,
    validate_confidence,
)

logger = logging.getLogger(__name__)

BASELINE_KINDS = ("inline", "self_revision", "inline_theta", "self_revision_theta")


class PipelineError(Exception):
    def __init__(self, message: str, stage: str = ""):
        super().__init__(f"[{stage}] {message}" if stage else message)
        self.stage = stage


class AtomizationError(PipelineError):
    def __init__(self, message):
        super().__init__(message, stage="atomize")


class ParseRepairError(PipelineError):
    """A parse failed and the single targeted repair round did not fix it."""


# --- line grammar ----------------------------------------------------------

_ITEM_HEAD_RE = re.compile(r"^\s*(\d+)[.)]\s*(.*)$")
_BRACKET_PAIR_RE = re.compile(r"^\[(?P<entity>[^\]]+)\]\s*\[(?P<fact>.+)\]\s*\.?\s*$")
_STOP_RE = re.compile(r"^STOP\.?\s*$")
_REASONING_RE = re.compile(r"^\s*Reasoning:\s*(.*\S)?\s*$")
_CONFIDENCE_RE = re.compile(r"^\s*Confidence:\s*(-?\d+(?:\.\d+)?)\s*%?\s*$")


def parse_bracket_pair(text: str) -> tuple[str, str] | None:
    """Parse one `[entity] [fact].` line; trailing period optional."""
    match = _BRACKET_PAIR_RE.match(text.strip())
    if not match:
        return None
    return match.group("entity").strip(), match.group("fact").strip()


def atom_raw_line(entity: str, fact: str) -> str:
    return f"[{entity}] [{fact}]."


@dataclass(frozen=True)
class AtomizationOutput:
    atoms: tuple[Atom, ...]
    unparsed_lines: tuple[tuple[int, str], ...]


def parse_atomization(text: str):
    """Split model output into numbered atoms; collect everything else.

    Indices must follow the model's strictly increasing list numbering;
    a line that breaks the numbering is treated as unparsed.
    """
    parsed = []
    unparsed = []
    last_index = 0
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        head = _ITEM_HEAD_RE.match(stripped)
        pair = parse_bracket_pair(head.group(2)) if head else None
        if head and pair:
            index = int(head.group(1))
            if index <= last_index:
                unparsed.append((line_no, stripped))
                continue
            last_index = index
            parsed.append((index, pair[0], pair[1], stripped))
        else:
            unparsed.append((line_no, stripped))
    return parsed, unparsed


def _item_blocks(text: str):
    """Slice numbered-list output into (index, block text) chunks."""
    heads = list(re.finditer(r"(?m)^\s*(\d+)[.)]", text))
    blocks = []
    for pos, head in enumerate(heads):
        end = heads[pos + 1].start() if pos + 1 < len(heads) else len(text)
        blocks.append((int(head.group(1)), text[head.start() : end]))
    return blocks


def parse_scored_items(text: str) -> dict[int, tuple[str, float]]:
    """Parse `N. ... Reasoning: ... Confidence: ...` blocks.

    Returns only indices with a usable in-range confidence; duplicated
    indices are dropped entirely so the repair round re-requests them.
    """
    seen: dict[int, tuple[str, float] | None] = {}
    for index, block in _item_blocks(text):
        reasoning = ""
        confidence = None
        for line in block.splitlines():
            r = _REASONING_RE.match(line)
            if r and not reasoning:
                reasoning = r.group(1) or ""
            c = _CONFIDENCE_RE.match(line)
            if c and confidence is None:
                try:
                    confidence = validate_confidence(float(c.group(1)))
                except DomainError:
                    confidence = None
                    break
        if index in seen:
            seen[index] = None
            continue
        seen[index] = (reasoning, confidence) if confidence is not None else None
    return {i: v for i, v in seen.items() if v is not None}


def parse_abstraction_ladder(text: str):
    """Parse the ladder output: bracketed statements terminated by STOP."""
    items = []
    saw_stop = False
    for _, block in _item_blocks(text):
        lines = block.splitlines()
        head = _ITEM_HEAD_RE.match(lines[0].strip())
        body = head.group(2) if head else ""
        if _STOP_RE.match(body.strip()):
            saw_stop = True
            break
        pair = parse_bracket_pair(body)
        if pair is None:
            continue
        reasoning = ""
        for line in lines[1:]:
            r = _REASONING_RE.match(line)
            if r:
                reasoning = r.group(1) or ""
                break
        items.append((pair[0], pair[1], reasoning))
    return items, saw_stop


# --- request builders (shared with fixture tooling) -------------------------


def statements_block(indexed_claims) -> str:
    return "\n".join(f"{index}. {claim.bracketed()}" for index, claim in indexed_claims)


def statement_list_block(claims) -> str:
    return "\n".join(f"- {claim.sentence()}" for claim in claims)


def format_number(value: float) -> str:
    return f"{value:g}"


def repair_messages(request: ChatRequest, reply_text: str, instruction: str) -> list[dict]:
    from .templates import render_template

    return [
        {"role": "user", "content": render_template(request.template_id, request.variables)},
        {"role": "assistant", "content": reply_text},
        {"role": "user", "content": instruction},
    ]


def score_repair_instruction(missing_indexed_claims) -> str:
    listed = statements_block(missing_indexed_claims)
    return (
        "Your reply was missing or invalid for the items below. Provide ONLY these "
        "items now, keeping their original index numbers and the same "
        "Reasoning/Confidence format.\n" + listed
    )


# --- selection rule ---------------------------------------------------------


def select_abstraction(sequence: AbstractionSequence, theta: float) -> SelectionResult:
    """Most specific rung whose confidence strictly exceeds theta.

    The terminal TOP rung has confidence 100, so a rung exists for every
    theta below 100; at theta = 100 nothing clears the strict inequality
    and the result falls back to abstention.
    """
    theta = validate_confidence(theta)
    for level in sequence.levels:
        if level.confidence > theta:
            return SelectionResult(sequence.atom_id, theta, level.level, level.statement)
    top = sequence.levels[-1]
    return SelectionResult(sequence.atom_id, theta, top.level, top.statement)


def attainable_thetas(sequences) -> tuple[float, ...]:
    """All thresholds at which some selection outcome changes: zero plus
    every distinct real-rung confidence."""
    values = {0.0}
    for sequence in sequences:
        values.update(lv.confidence for lv in sequence.real_levels)
    return tuple(sorted(values))


def baseline_redaction(atoms, scores, theta: float):
    """Deletion baseline: keep an atom iff its confidence exceeds theta."""
    theta = validate_confidence(theta)
    lookup = scores.by_atom_id if isinstance(scores, ScoredAtoms) else dict(scores)
    missing = [atom.id for atom in atoms if atom.id not in lookup]
    if missing:
        raise PipelineError(f"scores missing for atoms {missing}", stage="redaction")
    return tuple(atom for atom in atoms if lookup[atom.id] > theta)


# --- scored atoms ------------------------------------------------------------


@dataclass(frozen=True)
class ScoredAtom:
    atom_id: str
    reasoning: str
    confidence: float


@dataclass(frozen=True)
class ScoredAtoms:
    entries: tuple[ScoredAtom, ...]

    @property
    def by_atom_id(self) -> dict[str, float]:
        return {e.atom_id: e.confidence for e in self.entries}


@dataclass(frozen=True)
class SAResult:
    theta: float
    selections: tuple[SelectionResult, ...]
    reconstructed: ResponseText
    retained_atoms: tuple[Atom, ...]


@dataclass(frozen=True)
class PreparedResponse:
    """Shared stage artifacts reused across an entire threshold sweep."""

    prompt: PromptRecord
    response: ResponseText
    atomization: AtomizationOutput
    scored: ScoredAtoms
    sequences: tuple[AbstractionSequence, ...]


def response_id(response: ResponseText) -> str:
    if response.stage == "original":
        return response.prompt_id
    return f"{response.prompt_id}@{format_number(response.theta)}"


class Pipeline:
    """Configured front end over the backend gateway for all stages."""

    def __init__(
        self,
        backend,
        model: str,
        temperatures: dict | None = None,
        max_tokens: int = 2048,
        max_levels: int = 10,
        max_workers: int = 4,
    ):
        self.backend = backend
        self.model = model
        self.temperatures = dict(temperatures or {})
        self.max_tokens = max_tokens
        self.max_levels = max_levels
        self.max_workers = max_workers

    def _temperature(self, stage: str) -> float:
        if stage in self.temperatures:
            return float(self.temperatures[stage])
        return float(self.temperatures.get("default", 0.0))

    def request(self, template_id: str, variables: dict, stage: str | None = None) -> ChatRequest:
        return ChatRequest(
            template_id,
            variables,
            model=self.model,
            temperature=self._temperature(stage or template_id),
            max_tokens=self.max_tokens,
        )

    def _complete_messages(self, messages, stage: str):
        request = messages_request(
            messages,
            model=self.model,
            temperature=self._temperature(stage),
            max_tokens=self.max_tokens,
        )
        return self.backend.complete(request)

    # --- stage 1: generation -------------------------------------------------

    def generate(self, prompt: PromptRecord) -> ResponseText:
        reply = self.backend.complete(
            self.request("raw", {"prompt": prompt.text}, stage="generation")
        )
        return ResponseText(prompt.id, reply.text, "original")

    # --- stage 2: atomization ------------------------------------------------

    def atomize(self, response: ResponseText, rid: str | None = None) -> AtomizationOutput:
        if not response.text.strip():
            raise AtomizationError("empty response text")
        rid = rid or response_id(response)
        reply = self.backend.complete(self.request("atomization", {"text": response.text}))
        parsed, unparsed = parse_atomization(reply.text)
        if not parsed:
            raise AtomizationError(f"atomization failed for response {rid}: no atoms parsed")
        for line_no, line in unparsed:
            logger.warning("unparsed atomization line %d for %s: %s", line_no, rid, line)
        atoms = tuple(
            Atom(
                id=f"{rid}#{index}",
                response_id=rid,
                index=index,
                entity=entity,
                fact=fact,
                raw=raw,
            )
            for index, entity, fact, raw in parsed
        )
        return AtomizationOutput(atoms=atoms, unparsed_lines=tuple(unparsed))

    # --- stage 3 step 1: atom confidence --------------------------------------

    def score_atoms(self, prompt: PromptRecord, response: ResponseText, atoms) -> ScoredAtoms:
        if not atoms:
            raise PipelineError("no atoms to score", stage="score")
        indexed = [(atom.index, atom.claim) for atom in atoms]
        request = self.request(
            "atom_confidence", {"statements": statements_block(indexed)}, stage="score"
        )
        reply = self.backend.complete(request)
        parsed = parse_scored_items(reply.text)
        needed = {atom.index: atom for atom in atoms}
        good = {i: v for i, v in parsed.items() if i in needed}
        missing = sorted(set(needed) - set(good))
        if missing:
            missing_claims = [(i, needed[i].claim) for i in missing]
            repair = self._complete_messages(
                repair_messages(request, reply.text, score_repair_instruction(missing_claims)),
                stage="score",
            )
            for i, v in parse_scored_items(repair.text).items():
                if i in needed and i not in good:
                    good[i] = v
            missing = sorted(set(needed) - set(good))
        if missing:
            raise ParseRepairError(
                f"confidence scores unavailable for atom indices {missing}", stage="score"
            )
        entries = tuple(
            ScoredAtom(needed[i].id, good[i][0], good[i][1]) for i in sorted(needed)
        )
        return ScoredAtoms(entries)

    # --- stage 3 step 2: abstraction ladders -----------------------------------

    def generate_abstraction_sequence(self, atom: Atom, atom_score: float) -> AbstractionSequence:
        atom_score = validate_confidence(atom_score)
        reply = self.backend.complete(
            self.request("abstraction", {"statement": atom.claim.bracketed()})
        )
        items, saw_stop = parse_abstraction_ladder(reply.text)
        level0_reasoning = ""
        entity_key = normalize_claim((atom.entity, "x"))
        ladder: list[tuple[Claim, str]] = []
        for pos, (entity, fact, reasoning) in enumerate(items):
            if pos == 0:
                # The first item restates the source atom.
                level0_reasoning = reasoning
                continue
            if normalize_claim((entity, "x")) != entity_key:
                logger.warning(
                    "entity drift in ladder for %s at step %d (%r); truncating",
                    atom.id,
                    pos,
                    entity,
                )
                break
            ladder.append((Claim(atom.entity, fact), reasoning))
            if len(ladder) + 1 >= self.max_levels:
                if not saw_stop:
                    logger.warning("ladder for %s hit the %d-level cap", atom.id, self.max_levels)
                break

        confidences: dict[int, tuple[str, float]] = {}
        if ladder:
            indexed = [(1, atom.claim)] + [
                (pos + 2, claim) for pos, (claim, _) in enumerate(ladder)
            ]
            request = self.request(
                "abstraction_confidence",
                {
                    "statements": statements_block(indexed),
                    "confidence": format_number(atom_score),
                },
                stage="score",
            )
            reply = self.backend.complete(request)
            confidences = parse_scored_items(reply.text)
            needed = set(range(2, len(ladder) + 2))
            missing = sorted(needed - set(confidences))
            if missing:
                missing_claims = [(i, ladder[i - 2][0]) for i in missing]
                repair = self._complete_messages(
                    repair_messages(
                        request, reply.text, score_repair_instruction(missing_claims)
                    ),
                    stage="score",
                )
                for i, v in parse_scored_items(repair.text).items():
                    if i in needed and i not in confidences:
                        confidences[i] = v
                missing = sorted(needed - set(confidences))
            if missing:
                raise ParseRepairError(
                    f"abstraction confidences unavailable for {atom.id} items {missing}",
                    stage="score",
                )

        levels = [AbstractionLevel(0, atom.claim, atom_score, level0_reasoning)]
        for pos, (claim, reasoning) in enumerate(ladder):
            levels.append(
                AbstractionLevel(pos + 1, claim, confidences[pos + 2][1], reasoning)
            )
        levels.append(AbstractionLevel(len(levels), TOP, TOP_CONFIDENCE))
        return AbstractionSequence(atom.id, tuple(levels))

    # --- shared preparation -----------------------------------------------------

    def prepare(self, prompt: PromptRecord, response: ResponseText | None = None) -> PreparedResponse:
        response = response if response is not None else self.generate(prompt)
        atomization = self.atomize(response)
        scored = self.score_atoms(prompt, response, atomization.atoms)
        score_by_id = scored.by_atom_id
        atoms = atomization.atoms
        if self.max_workers > 1 and len(atoms) > 1:
            with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
                sequences = tuple(
                    pool.map(
                        lambda atom: self.generate_abstraction_sequence(
                            atom, score_by_id[atom.id]
                        ),
                        atoms,
                    )
                )
        else:
            sequences = tuple(
                self.generate_abstraction_sequence(atom, score_by_id[atom.id])
                for atom in atoms
            )
        return PreparedResponse(prompt, response, atomization, scored, sequences)

    # --- stage 3 step 3 + stage 4 -------------------------------------------------

    def apply_theta(self, prepared: PreparedResponse, theta: float) -> SAResult:
        theta = validate_confidence(theta)
        selections = tuple(
            select_abstraction(sequence, theta) for sequence in prepared.sequences
        )
        survivors = [s.chosen_statement for s in selections if not s.abstained]
        if survivors:
            reply = self.backend.complete(
                self.request(
                    "reconstruction", {"statement list": statement_list_block(survivors)}
                )
            )
            text = reply.text
        else:
            text = ""
        reconstructed = ResponseText(prepared.prompt.id, text, "reconstructed", theta)
        if text.strip():
            retained = self.atomize(reconstructed).atoms
        else:
            retained = ()
        return SAResult(theta, selections, reconstructed, retained)

    def run_sa(self, prompt: PromptRecord, theta: float, response=None) -> SAResult:
        return self.apply_theta(self.prepare(prompt, response), theta)

    def sweep(self, prompt: PromptRecord, thetas, response=None) -> list[SAResult]:
        thetas = list(thetas)
        if any(b < a for a, b in zip(thetas, thetas[1:])):
            raise PipelineError("thetas must be sorted ascending", stage="sweep")
        prepared = self.prepare(prompt, response)
        return [self.apply_theta(prepared, theta) for theta in thetas]

    # --- prompting baselines -------------------------------------------------------

    def baseline_prompted(
        self,
        kind: str,
        prompt: PromptRecord,
        original_response: ResponseText | None = None,
        theta: float | None = None,
    ) -> ResponseText:
        if kind not in BASELINE_KINDS:
            raise PipelineError(f"unknown baseline kind {kind!r}", stage="baseline")
        variables = {"question": prompt.text}
        if kind.startswith("self_revision"):
            if original_response is None:
                raise PipelineError(
                    f"{kind} requires the original response", stage="baseline"
                )
            variables["original_answer"] = original_response.text
        if kind.endswith("_theta"):
            if theta is None:
                raise PipelineError(f"{kind} requires a threshold", stage="baseline")
            variables["theta"] = format_number(validate_confidence(theta))
        reply = self.backend.complete(self.request(kind, variables, stage="baseline"))
        return ResponseText(prompt.id, reply.text, "original")
