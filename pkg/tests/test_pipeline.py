import random

import pytest

from absgate.backend import MockBackend, messages_request, request_digest
from absgate.domain import (
    Atom,
    Claim,
    DomainError,
    PromptRecord,
    ResponseText,
)
from absgate.pipeline import (
    AtomizationError,
    ParseRepairError,
    Pipeline,
    PipelineError,
    attainable_thetas,
    baseline_redaction,
    format_number,
    parse_atomization,
    parse_bracket_pair,
    parse_scored_items,
    repair_messages,
    score_repair_instruction,
    select_abstraction,
    statement_list_block,
    statements_block,
)

from conftest import make_sequence

MODEL = "test-model"


def make_pipeline(backend=None, temperatures=None):
    return Pipeline(
        backend or MockBackend(),
        model=MODEL,
        temperatures=temperatures or {},
        max_tokens=2048,
        max_workers=1,
    )


SAMPLE_ATOM_LIST = """\
1. [Jennifer Coolidge] [is an American].
2. [Jennifer Coolidge] [is an actress].
3. [Jennifer Coolidge] [is known for her work in the comedy genre].
4. [Jennifer Coolidge] [has received several accolades].
5. [Jennifer Coolidge] [has received a Golden Globe Award].
6. [Jennifer Coolidge] [has received two Primetime Emmy Awards].
"""


class TestParsers:
    def test_bracket_pair(self):
        assert parse_bracket_pair("[X] [is Y].") == ("X", "is Y")
        assert parse_bracket_pair("[X] [is Y]") == ("X", "is Y")
        assert parse_bracket_pair("  [X]   [is Y].  ") == ("X", "is Y")
        assert parse_bracket_pair("[X] [has [nested] brackets].") == (
            "X",
            "has [nested] brackets",
        )
        assert parse_bracket_pair("no brackets") is None

    def test_example_atom_list_parses_to_six_atoms(self):
        parsed, unparsed = parse_atomization(SAMPLE_ATOM_LIST)
        assert len(parsed) == 6
        assert unparsed == []
        index, entity, fact, _ = parsed[0]
        assert (index, entity, fact) == (1, "Jennifer Coolidge", "is an American")

    def test_single_line(self):
        parsed, _ = parse_atomization("1. [X] [is Y].")
        assert parsed == [(1, "X", "is Y", "1. [X] [is Y].")]

    def test_partial_parse_collects_garbage(self):
        text = "1. [A] [b].\ngarbage\n2. [C] [d].\n3. [E] [f]."
        parsed, unparsed = parse_atomization(text)
        assert len(parsed) == 3
        assert unparsed == [(2, "garbage")]

    def test_non_increasing_indices_rejected(self):
        text = "1. [A] [b].\n1. [C] [d].\n2. [E] [f]."
        parsed, unparsed = parse_atomization(text)
        assert [p[0] for p in parsed] == [1, 2]
        assert len(unparsed) == 1

    def test_scored_items(self):
        text = "1. [A] [b].\n   Reasoning: r\n   Confidence: 85"
        assert parse_scored_items(text) == {1: ("r", 85.0)}

    def test_scored_items_out_of_range_dropped(self):
        text = "1. [A] [b].\n   Reasoning: r\n   Confidence: 105"
        assert parse_scored_items(text) == {}

    def test_scored_items_duplicates_dropped(self):
        text = (
            "1. [A] [b].\n Reasoning: r\n Confidence: 10\n"
            "1. [A] [b].\n Reasoning: r\n Confidence: 20\n"
            "2. [C] [d].\n Reasoning: s\n Confidence: 30"
        )
        assert parse_scored_items(text) == {2: ("s", 30.0)}

    def test_round_trip_atom_raw(self):
        rng = random.Random(3)
        for _ in range(100):
            entity = f"Entity {rng.randint(1, 99)}"
            fact = f"did thing number {rng.randint(1, 99)}"
            line = f"{rng.randint(1, 9)}. [{entity}] [{fact}]."
            parsed, _ = parse_atomization(line)
            _, e, f, raw = parsed[0]
            assert raw.rstrip(".") .endswith(f"[{e}] [{f}]")


class TestSelectAbstraction:
    def test_direct_rule(self, sequence_factory):
        seq = sequence_factory([60, 80, 95])
        assert select_abstraction(seq, 90).chosen_level == 2

    def test_abstention_branch(self, sequence_factory):
        seq = sequence_factory([60, 80, 95])
        result = select_abstraction(seq, 99)
        assert result.abstained
        assert result.chosen_level == 3

    def test_identity_case(self, sequence_factory):
        seq = sequence_factory([60, 80, 95])
        assert select_abstraction(seq, 50).chosen_level == 0

    def test_theta_100_always_abstains(self, sequence_factory):
        seq = sequence_factory([60, 100])
        assert select_abstraction(seq, 100).abstained

    def test_argmin_contract_and_monotonicity_bruteforce(self, sequence_factory):
        rng = random.Random(13)
        thetas = [i * 2.5 for i in range(41)]
        for _ in range(400):
            confs = [rng.choice(range(0, 101, 5)) for _ in range(rng.randint(1, 5))]
            seq = sequence_factory(confs)
            previous_level = -1
            for theta in thetas:
                result = select_abstraction(seq, theta)
                idx = result.chosen_level
                # independent scan: first level above theta, else TOP
                want = next(
                    (i for i, c in enumerate(seq.confidences) if c > theta),
                    len(seq.levels) - 1,
                )
                assert idx == want
                for j in range(idx):
                    assert seq.confidences[j] <= theta
                if not result.abstained:
                    assert seq.confidences[idx] > theta
                assert idx >= previous_level
                previous_level = idx


class TestAttainableThetas:
    def test_contains_zero_and_all_confidences(self, sequence_factory):
        seqs = [sequence_factory([60, 80]), sequence_factory([80, 95])]
        assert attainable_thetas(seqs) == (0.0, 60.0, 80.0, 95.0)

    def test_reproduces_every_operating_point(self, sequence_factory):
        rng = random.Random(29)
        for _ in range(50):
            seqs = [
                sequence_factory(
                    [rng.choice(range(0, 101, 10)) for _ in range(rng.randint(1, 4))],
                    atom_id=f"a{i}",
                )
                for i in range(rng.randint(1, 5))
            ]
            grid = attainable_thetas(seqs)

            def outcome(theta):
                return tuple(select_abstraction(s, theta).chosen_level for s in seqs)

            fine = {outcome(t / 4) for t in range(401)}
            coarse = {outcome(t) for t in grid}
            assert fine == coarse


class TestBaselineRedaction:
    def _atoms(self, confs):
        atoms = [
            Atom(f"r#{i+1}", "r", i + 1, f"E{i}", f"fact {i}") for i in range(len(confs))
        ]
        scores = {a.id: float(c) for a, c in zip(atoms, confs)}
        return atoms, scores

    def test_strict_threshold(self):
        atoms, scores = self._atoms([60, 80, 95])
        kept = baseline_redaction(atoms, scores, 90)
        assert [a.index for a in kept] == [3]

    def test_theta_zero_keeps_all_above_zero(self):
        atoms, scores = self._atoms([60, 80, 95])
        assert len(baseline_redaction(atoms, scores, 0)) == 3

    def test_boundary_is_strict(self):
        atoms, scores = self._atoms([60, 80, 95])
        kept = baseline_redaction(atoms, scores, 80)
        assert [a.index for a in kept] == [3]

    def test_equivalent_to_selection_on_degenerate_sequences(self, sequence_factory):
        rng = random.Random(31)
        for _ in range(200):
            confs = [rng.choice(range(0, 101, 5)) for _ in range(rng.randint(1, 6))]
            theta = rng.choice(range(0, 101, 5))
            atoms, scores = self._atoms(confs)
            kept = {a.id for a in baseline_redaction(atoms, scores, theta)}
            for atom, conf in zip(atoms, confs):
                seq = sequence_factory([conf], atom_id=atom.id)
                selected = not select_abstraction(seq, theta).abstained
                assert (atom.id in kept) == selected

    def test_missing_scores_rejected(self):
        atoms, scores = self._atoms([60, 80])
        scores.pop(atoms[0].id)
        with pytest.raises(PipelineError):
            baseline_redaction(atoms, scores, 50)


# --- scripted end-to-end micro world ---------------------------------------


def scored_reply(entries):
    """entries: list of (index, claim_text, reasoning, confidence)"""
    blocks = []
    for index, claim_text, reasoning, confidence in entries:
        blocks.append(
            f"{index}. {claim_text}\n   Reasoning: {reasoning}\n   Confidence: {confidence}"
        )
    return "\n".join(blocks)


class MicroWorld:
    """Two-atom scripted response used by the staged tests."""

    prompt = PromptRecord("p1", "Tell me about the Mars rover.", source="custom")
    response_text = (
        "The Curiosity rover landed on Mars in August 2012. It was built by NASA."
    )
    atoms = [
        ("Curiosity", "landed on Mars in August 2012"),
        ("Curiosity", "was built by NASA"),
    ]
    atom_scores = [70.0, 95.0]
    ladders = [
        [("landed on Mars in 2012", 85.0), ("landed on Mars", 99.0)],
        [],
    ]

    def __init__(self):
        self.backend = MockBackend()
        self.pipeline = make_pipeline(self.backend)
        self._script()

    def _script(self):
        p = self.pipeline
        # generation
        self.backend.script(
            p.request("raw", {"prompt": self.prompt.text}, stage="generation"),
            self.response_text,
        )
        # atomization of the original response
        atom_lines = "\n".join(
            f"{i+1}. [{e}] [{f}]." for i, (e, f) in enumerate(self.atoms)
        )
        self.backend.script(
            p.request("atomization", {"text": self.response_text}), atom_lines
        )
        # atom confidences
        indexed = [(i + 1, Claim(e, f)) for i, (e, f) in enumerate(self.atoms)]
        self.backend.script(
            p.request("atom_confidence", {"statements": statements_block(indexed)}, stage="score"),
            scored_reply(
                [
                    (i + 1, Claim(e, f).bracketed(), f"reason {i+1}", s)
                    for i, ((e, f), s) in enumerate(zip(self.atoms, self.atom_scores))
                ]
            ),
        )
        # ladders and their confidences
        for (entity, fact), score, ladder in zip(
            self.atoms, self.atom_scores, self.ladders
        ):
            claim = Claim(entity, fact)
            lines = [f"1. {claim.bracketed()}\n   Reasoning: original."]
            for j, (general_fact, _) in enumerate(ladder):
                lines.append(
                    f"{j+2}. [{entity}] [{general_fact}].\n   Reasoning: step {j+1}."
                )
            lines.append(f"{len(ladder)+2}. STOP.\n   Reasoning: enough.")
            self.backend.script(
                p.request("abstraction", {"statement": claim.bracketed()}),
                "\n".join(lines),
            )
            if ladder:
                indexed = [(1, claim)] + [
                    (j + 2, Claim(entity, general_fact))
                    for j, (general_fact, _) in enumerate(ladder)
                ]
                self.backend.script(
                    p.request(
                        "abstraction_confidence",
                        {
                            "statements": statements_block(indexed),
                            "confidence": format_number(score),
                        },
                        stage="score",
                    ),
                    scored_reply(
                        [(1, claim.bracketed(), "given", score)]
                        + [
                            (j + 2, Claim(entity, gf).bracketed(), "broader", conf)
                            for j, (gf, conf) in enumerate(ladder)
                        ]
                    ),
                )

    def script_reconstruction(self, claims, text):
        self.backend.script(
            self.pipeline.request(
                "reconstruction", {"statement list": statement_list_block(claims)}
            ),
            text,
        )
        atom_lines = "\n".join(f"{i+1}. {c.bracketed()}" for i, c in enumerate(claims))
        self.backend.script(
            self.pipeline.request("atomization", {"text": text}), atom_lines
        )


class TestStagedPipeline:
    def test_atomize(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        output = world.pipeline.atomize(response)
        assert [a.entity for a in output.atoms] == ["Curiosity", "Curiosity"]
        assert output.atoms[0].id == "p1#1"

    def test_atomize_rejects_empty_text(self):
        world = MicroWorld()
        with pytest.raises(AtomizationError):
            world.pipeline.atomize(ResponseText("p1", "   "))

    def test_atomization_failure_when_nothing_parses(self):
        backend = MockBackend()
        pipeline = make_pipeline(backend)
        response = ResponseText("p1", "some text")
        backend.script(
            pipeline.request("atomization", {"text": "some text"}), "no atoms here"
        )
        with pytest.raises(AtomizationError, match="atomization failed"):
            pipeline.atomize(response)

    def test_score_atoms(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        scored = world.pipeline.score_atoms(world.prompt, response, atoms)
        assert [e.confidence for e in scored.entries] == [70.0, 95.0]
        assert scored.entries[0].reasoning == "reason 1"

    def test_score_repair_roundtrip(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        p = world.pipeline
        indexed = [(a.index, a.claim) for a in atoms]
        base_request = p.request(
            "atom_confidence", {"statements": statements_block(indexed)}, stage="score"
        )
        partial = scored_reply([(1, atoms[0].claim.bracketed(), "r", 70)])
        world.backend.script(base_request, partial)
        repair_request = messages_request(
            repair_messages(
                base_request, partial, score_repair_instruction([(2, atoms[1].claim)])
            ),
            model=MODEL,
            temperature=0.0,
            max_tokens=2048,
        )
        world.backend.script(
            repair_request, scored_reply([(2, atoms[1].claim.bracketed(), "r2", 95)])
        )
        scored = p.score_atoms(world.prompt, response, atoms)
        assert [e.confidence for e in scored.entries] == [70.0, 95.0]

    def test_score_repair_exhaustion(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        p = world.pipeline
        indexed = [(a.index, a.claim) for a in atoms]
        base_request = p.request(
            "atom_confidence", {"statements": statements_block(indexed)}, stage="score"
        )
        partial = scored_reply([(1, atoms[0].claim.bracketed(), "r", 70)])
        world.backend.script(base_request, partial)
        repair_request = messages_request(
            repair_messages(
                base_request, partial, score_repair_instruction([(2, atoms[1].claim)])
            ),
            model=MODEL,
            temperature=0.0,
            max_tokens=2048,
        )
        world.backend.script(repair_request, "still nothing useful")
        with pytest.raises(ParseRepairError, match=r"\[2\]"):
            p.score_atoms(world.prompt, response, atoms)

    def test_generate_abstraction_sequence(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        seq = world.pipeline.generate_abstraction_sequence(atoms[0], 70.0)
        assert seq.confidences == (70.0, 85.0, 99.0, 100.0)
        assert seq.levels[1].statement.fact == "landed on Mars in 2012"
        assert seq.levels[-1].is_top

    def test_level_zero_confidence_forced_to_atom_score(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        # ladder confidences script echoes 70 for item 1 but pipeline must
        # force whatever score it was given
        seq = world.pipeline.generate_abstraction_sequence(atoms[0], 70.0)
        assert seq.levels[0].confidence == 70.0

    def test_sequence_without_abstractions_skips_scoring_call(self):
        world = MicroWorld()
        response = world.pipeline.generate(world.prompt)
        atoms = world.pipeline.atomize(response).atoms
        calls_before = world.backend.calls
        seq = world.pipeline.generate_abstraction_sequence(atoms[1], 95.0)
        assert world.backend.calls == calls_before + 1  # ladder call only
        assert seq.confidences == (95.0, 100.0)

    def test_entity_drift_truncates(self):
        backend = MockBackend()
        pipeline = make_pipeline(backend)
        atom = Atom("p1#1", "p1", 1, "Curiosity", "landed on Mars in August 2012")
        ladder_text = (
            "1. [Curiosity] [landed on Mars in August 2012].\n Reasoning: original.\n"
            "2. [Curiosity] [landed on Mars in 2012].\n Reasoning: year only.\n"
            "3. [Perseverance] [landed on Mars].\n Reasoning: drifted entity.\n"
            "4. STOP.\n Reasoning: done."
        )
        backend.script(
            pipeline.request("abstraction", {"statement": atom.claim.bracketed()}),
            ladder_text,
        )
        indexed = [(1, atom.claim), (2, Claim("Curiosity", "landed on Mars in 2012"))]
        backend.script(
            pipeline.request(
                "abstraction_confidence",
                {"statements": statements_block(indexed), "confidence": "70"},
                stage="score",
            ),
            scored_reply(
                [
                    (1, atom.claim.bracketed(), "given", 70),
                    (2, "[Curiosity] [landed on Mars in 2012].", "broader", 85),
                ]
            ),
        )
        seq = pipeline.generate_abstraction_sequence(atom, 70.0)
        assert len(seq.real_levels) == 2  # drifted level rejected

    def test_missing_stop_truncates_at_cap(self):
        backend = MockBackend()
        pipeline = Pipeline(backend, model=MODEL, max_levels=3, max_workers=1)
        atom = Atom("p1#1", "p1", 1, "X", "is very specific")
        lines = ["1. [X] [is very specific].\n Reasoning: original."]
        for j in range(8):
            lines.append(f"{j+2}. [X] [is specific level {j}].\n Reasoning: more.")
        backend.script(
            pipeline.request("abstraction", {"statement": atom.claim.bracketed()}),
            "\n".join(lines),
        )
        indexed = [(1, atom.claim), (2, Claim("X", "is specific level 0")), (3, Claim("X", "is specific level 1"))]
        backend.script(
            pipeline.request(
                "abstraction_confidence",
                {"statements": statements_block(indexed), "confidence": "50"},
                stage="score",
            ),
            scored_reply(
                [
                    (1, atom.claim.bracketed(), "given", 50),
                    (2, "[X] [is specific level 0].", "b", 60),
                    (3, "[X] [is specific level 1].", "b", 70),
                ]
            ),
        )
        seq = pipeline.generate_abstraction_sequence(atom, 50.0)
        assert len(seq.real_levels) == 3

    def test_run_sa_theta_zero_keeps_original_statements(self):
        world = MicroWorld()
        claims = [Claim(e, f) for e, f in world.atoms]
        world.script_reconstruction(claims, "Curiosity landed in 2012 and NASA built it.")
        result = world.pipeline.run_sa(world.prompt, 0.0)
        assert all(s.chosen_level == 0 for s in result.selections)
        retained_claims = {(a.entity, a.fact) for a in result.retained_atoms}
        assert retained_claims == set(world.atoms)

    def test_run_sa_theta_100_abstains_everything(self):
        world = MicroWorld()
        result = world.pipeline.run_sa(world.prompt, 100.0)
        assert all(s.abstained for s in result.selections)
        assert result.reconstructed.text == ""
        assert result.retained_atoms == ()

    def test_run_sa_intermediate_theta(self):
        world = MicroWorld()
        claims = [Claim("Curiosity", "landed on Mars in 2012"), Claim("Curiosity", "was built by NASA")]
        world.script_reconstruction(
            claims, "Curiosity landed on Mars in 2012. It was built by NASA."
        )
        result = world.pipeline.run_sa(world.prompt, 75.0)
        assert [s.chosen_level for s in result.selections] == [1, 0]

    def test_sweep_shares_preparation(self):
        world = MicroWorld()
        claims_full = [Claim(e, f) for e, f in world.atoms]
        world.script_reconstruction(claims_full, "Everything survived.")
        calls_after_prepare = None
        results = None
        prepared = world.pipeline.prepare(world.prompt)
        calls_after_prepare = world.backend.calls
        results = [world.pipeline.apply_theta(prepared, t) for t in (0.0, 100.0)]
        # theta=0: reconstruction + re-atomization; theta=100: no calls
        assert world.backend.calls == calls_after_prepare + 2
        assert len(results[0].retained_atoms) == 2
        assert results[1].retained_atoms == ()

    def test_sweep_requires_sorted_thetas(self):
        world = MicroWorld()
        with pytest.raises(PipelineError, match="sorted"):
            world.pipeline.sweep(world.prompt, [50.0, 10.0])

    def test_sweep_non_top_count_monotone(self, sequence_factory):
        rng = random.Random(41)
        for _ in range(100):
            seqs = [
                sequence_factory(
                    [rng.choice(range(0, 101, 10)) for _ in range(rng.randint(1, 4))],
                    atom_id=f"a{i}",
                )
                for i in range(6)
            ]
            counts = []
            for theta in attainable_thetas(seqs):
                kept = sum(
                    1 for s in seqs if not select_abstraction(s, theta).abstained
                )
                counts.append(kept)
            assert all(b <= a for a, b in zip(counts, counts[1:]))


class TestBaselinePrompted:
    def test_inline_single_call(self):
        backend = MockBackend()
        pipeline = make_pipeline(backend)
        prompt = PromptRecord("p1", "What is X?")
        backend.script(
            pipeline.request("inline", {"question": prompt.text}, stage="baseline"),
            "X at a safe granularity.",
        )
        response = pipeline.baseline_prompted("inline", prompt)
        assert response.text == "X at a safe granularity."
        assert backend.calls == 1

    def test_inline_theta_embeds_value(self):
        backend = MockBackend()
        pipeline = make_pipeline(backend)
        prompt = PromptRecord("p1", "What is X?")
        request = pipeline.request(
            "inline_theta", {"question": prompt.text, "theta": "90"}, stage="baseline"
        )
        backend.script(request, "Cautious answer.")
        response = pipeline.baseline_prompted("inline_theta", prompt, theta=90.0)
        assert response.text == "Cautious answer."
        rendered = request.messages()[0]["content"]
        assert "at least 90% confident" in rendered

    def test_self_revision_includes_original(self):
        backend = MockBackend()
        pipeline = make_pipeline(backend)
        prompt = PromptRecord("p1", "What is X?")
        original = ResponseText("p1", "X is maybe Y.")
        request = pipeline.request(
            "self_revision",
            {"question": prompt.text, "original_answer": original.text},
            stage="baseline",
        )
        backend.script(request, "X is a thing.")
        response = pipeline.baseline_prompted("self_revision", prompt, original)
        assert response.text == "X is a thing."
        rendered = request.messages()[0]["content"]
        assert "X is maybe Y." in rendered and "What is X?" in rendered

    def test_missing_prerequisites(self):
        pipeline = make_pipeline()
        prompt = PromptRecord("p1", "Q")
        with pytest.raises(PipelineError):
            pipeline.baseline_prompted("self_revision", prompt)
        with pytest.raises(PipelineError):
            pipeline.baseline_prompted("inline_theta", prompt)
        with pytest.raises(PipelineError):
            pipeline.baseline_prompted("unknown", prompt)


def test_theta_validation():
    seq = make_sequence([50])
    with pytest.raises(DomainError):
        select_abstraction(seq, 101)
