import json
import math
import random

import pytest

from absgate.backend import MockBackend, messages_request
from absgate.domain import Claim
from absgate.infomeasure import (
    CountingQuestions,
    EntityCounts,
    FixtureCounts,
    InfoError,
    MissingCountError,
    QuestionParseError,
    SparqlCounts,
    count_entities,
    coverage,
    generate_counting_questions,
    information,
    normalize_question,
    parse_counting_questions,
)
from absgate.pipeline import Pipeline, repair_messages

MODEL = "test-model"

# Entity counts used in the worked examples: all people, people born in
# London, people born in England.
PEOPLE_TOTAL = 12_352_844
BORN_LONDON = 20_313
BORN_ENGLAND = 135_340


class TestParseCountingQuestions:
    def test_two_line_format(self):
        text = "- Broad: How many people are there?\n- Specific: How many people are Mexican painters?"
        broad, specific, category = parse_counting_questions(text)
        assert broad == "How many people are there?"
        assert specific == "How many people are Mexican painters?"
        assert category == "people"

    def test_missing_specific_line(self):
        with pytest.raises(QuestionParseError, match="Specific"):
            parse_counting_questions("- Broad: How many people are there?")

    def test_category_extraction(self):
        text = "- Broad: How many cities are there?\n- Specific: How many cities are the capital of France?"
        assert parse_counting_questions(text)[2] == "cities"

    def test_questions_type_invariants(self):
        with pytest.raises(InfoError):
            CountingQuestions("k", "What about people?", "How many people x?", "people")
        with pytest.raises(InfoError):
            CountingQuestions(
                "k", "How many people are there?", "How many cities x?", "people"
            )


class TestGenerateCountingQuestions:
    def _pipeline(self):
        backend = MockBackend()
        return Pipeline(backend, model=MODEL, max_workers=1), backend

    def test_painter_example(self):
        pipeline, backend = self._pipeline()
        claim = Claim("Frida Kahlo", "was a Mexican painter.")
        backend.script(
            pipeline.request("counting_questions", {"statement": claim.sentence()}),
            "- Broad: How many people are there?\n- Specific: How many people are Mexican painters?",
        )
        questions = generate_counting_questions(pipeline, claim)
        assert questions.broad == "How many people are there?"
        assert questions.specific == "How many people are Mexican painters?"
        assert questions.category == "people"

    def test_capital_example_category(self):
        pipeline, backend = self._pipeline()
        claim = Claim("Paris", "is the capital of France.")
        backend.script(
            pipeline.request("counting_questions", {"statement": claim.sentence()}),
            "- Broad: How many cities are there?\n- Specific: How many cities are the capital of France?",
        )
        assert generate_counting_questions(pipeline, claim).category == "cities"

    def test_repair_then_error(self):
        pipeline, backend = self._pipeline()
        claim = Claim("X", "is Y.")
        request = pipeline.request("counting_questions", {"statement": claim.sentence()})
        backend.script(request, "no questions at all")
        from absgate.infomeasure import _REPAIR_INSTRUCTION

        repair_request = messages_request(
            repair_messages(request, "no questions at all", _REPAIR_INSTRUCTION),
            model=MODEL,
            temperature=0.0,
            max_tokens=2048,
        )
        backend.script(repair_request, "still unusable")
        with pytest.raises(QuestionParseError):
            generate_counting_questions(pipeline, claim)
        assert backend.calls == 2

    def test_repair_recovers(self):
        pipeline, backend = self._pipeline()
        claim = Claim("X", "is Y.")
        request = pipeline.request("counting_questions", {"statement": claim.sentence()})
        backend.script(request, "garbled")
        from absgate.infomeasure import _REPAIR_INSTRUCTION

        repair_request = messages_request(
            repair_messages(request, "garbled", _REPAIR_INSTRUCTION),
            model=MODEL,
            temperature=0.0,
            max_tokens=2048,
        )
        backend.script(
            repair_request,
            "- Broad: How many things are there?\n- Specific: How many things are Y?",
        )
        assert generate_counting_questions(pipeline, claim).category == "things"


class TestCountProviders:
    def test_fixture_lookup(self):
        provider = FixtureCounts(
            {
                "How many people are there?": PEOPLE_TOTAL,
                "How many people are born in London?": BORN_LONDON,
                "How many people are born in England?": BORN_ENGLAND,
            }
        )
        assert count_entities("How many people are there?", provider) == PEOPLE_TOTAL
        assert count_entities("How many people are born in London?", provider) == BORN_LONDON
        assert count_entities("How many people are born in England?", provider) == BORN_ENGLAND

    def test_fixture_normalization(self):
        provider = FixtureCounts({"How many people are there?": 7})
        assert provider.count("  how many PEOPLE are there ") == 7

    def test_fixture_miss_names_question(self):
        provider = FixtureCounts({})
        with pytest.raises(MissingCountError, match="How many dogs"):
            provider.count("How many dogs are there?")

    def test_fixture_file_round_trip(self, tmp_path):
        path = tmp_path / "counts.tsv"
        path.write_text(
            "# comment line\nhow many people are there\t42\nhow many cats are there\t7\n",
            encoding="utf-8",
        )
        provider = FixtureCounts.from_file(path)
        assert provider.count("How many people are there?") == 42
        assert provider.count("How many cats are there?") == 7

    def test_normalize_question(self):
        assert normalize_question("  How  many people are there? ") == (
            "how many people are there"
        )
        assert normalize_question(normalize_question("How many X?")) == "how many x"


class FakeSparqlSession:
    def __init__(self, payload=None, status=200, error=None):
        self.payload = payload
        self.status = status
        self.error = error
        self.requests = []

    def get(self, url, params=None, headers=None, timeout=None):
        self.requests.append((url, params))
        if self.error:
            raise self.error

        class R:
            status_code = self.status

            def json(inner):
                return self.payload

        return R()


class TestSparqlCounts:
    def test_count_query(self):
        payload = {
            "results": {"bindings": [{"count": {"type": "literal", "value": "20313"}}]}
        }
        session = FakeSparqlSession(payload)
        provider = SparqlCounts(
            "https://example.org/sparql",
            {"How many people are born in London?": "SELECT (COUNT(?p) AS ?count) WHERE { }"},
            session=session,
            min_interval=0.0,
        )
        assert provider.count("How many people are born in London?") == 20313
        url, params = session.requests[0]
        assert params["format"] == "json"

    def test_missing_template(self):
        provider = SparqlCounts("https://example.org/sparql", {}, session=FakeSparqlSession({}))
        with pytest.raises(MissingCountError):
            provider.count("How many people are there?")

    def test_transport_failure_is_retriable_class(self):
        import requests as requests_lib

        from absgate.infomeasure import CountTransportError

        session = FakeSparqlSession(error=requests_lib.ConnectionError("down"))
        provider = SparqlCounts(
            "https://example.org/sparql",
            {"How many people are there?": "SELECT ..."},
            session=session,
            min_interval=0.0,
        )
        with pytest.raises(CountTransportError):
            provider.count("How many people are there?")
        assert CountTransportError.retriable


class TestInformation:
    def test_born_in_london_value(self):
        value = information(EntityCounts(PEOPLE_TOTAL, BORN_LONDON))
        assert value == pytest.approx(0.39, abs=0.01)
        assert value == pytest.approx(
            1 - math.log(BORN_LONDON) / math.log(PEOPLE_TOTAL), abs=1e-12
        )

    def test_born_in_england_value(self):
        assert information(EntityCounts(PEOPLE_TOTAL, BORN_ENGLAND)) == pytest.approx(
            0.28, abs=0.01
        )

    def test_specificity_ordering(self):
        london = information(EntityCounts(PEOPLE_TOTAL, BORN_LONDON))
        england = information(EntityCounts(PEOPLE_TOTAL, BORN_ENGLAND))
        assert london > england

    def test_trivial_claim_is_zero(self):
        assert information(EntityCounts(1000, 1000)) == 0.0

    def test_unique_entity_is_one(self):
        assert information(EntityCounts(1000, 1)) == 1.0

    def test_zero_count_clamps_to_one(self):
        assert information(EntityCounts(1000, 0)) == 1.0

    def test_overflow_count_clamps_to_total(self):
        assert information(EntityCounts(1000, 5000)) == 0.0

    def test_degenerate_total_rejected(self):
        with pytest.raises(InfoError):
            information(EntityCounts(1, 1))

    def test_strictly_decreasing_in_claim_count(self):
        rng = random.Random(6)
        for _ in range(1000):
            total = rng.randint(10, 10_000_000)
            a = rng.randint(1, total - 1)
            b = rng.randint(a + 1, total)
            more_specific = information(EntityCounts(total, a))
            less_specific = information(EntityCounts(total, b))
            assert more_specific > less_specific
            assert 0.0 <= less_specific <= more_specific <= 1.0


class TestCoverage:
    def test_identical_sets(self):
        pairs = [(Claim("X", "a"), 0.4), (Claim("X", "b"), 0.6)]
        assert coverage(pairs, pairs) == pytest.approx(1.0)

    def test_empty_abstracted(self):
        pairs = [(Claim("X", "a"), 0.4)]
        assert coverage(pairs, []) == 0.0

    def test_synthetic_ratio(self):
        original = [(Claim("X", "a"), 0.4), (Claim("X", "b"), 0.6)]
        abstracted = [(Claim("X", "c"), 0.3)]
        assert coverage(original, abstracted) == pytest.approx(0.3 / 1.0)

    def test_deduplication_both_sides(self):
        original = [
            (Claim("X", "a"), 0.4),
            (Claim("X", "a."), 0.4),  # same claim modulo punctuation
            (Claim("X", "b"), 0.6),
        ]
        abstracted = [(Claim("X", "a"), 0.4), (Claim("x", "A"), 0.4)]
        assert coverage(original, abstracted) == pytest.approx(0.4)

    def test_zero_information_original_rejected(self):
        with pytest.raises(InfoError):
            coverage([(Claim("X", "a"), 0.0)], [])

    def test_above_one_warned_not_clamped(self, caplog):
        original = [(Claim("X", "a"), 0.5)]
        abstracted = [(Claim("X", "a"), 0.5), (Claim("X", "b"), 0.2)]
        with caplog.at_level("WARNING"):
            value = coverage(original, abstracted)
        assert value == pytest.approx(1.4)
        assert any("exceeds 1" in r.message for r in caplog.records)

    def test_additive_under_disjoint_union(self):
        rng = random.Random(9)
        original = [(Claim("E", f"fact {i}"), rng.uniform(0.1, 1.0)) for i in range(10)]
        part_a = original[:4]
        part_b = original[4:]
        total = coverage(original, part_a) + coverage(original, part_b)
        assert total == pytest.approx(coverage(original, original))
