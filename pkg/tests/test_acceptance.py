"""Acceptance suite.

One test per criterion; each prints a PASS/FAIL line so the whole gate can
be read from the test log:

    pytest tests/test_acceptance.py -v -s
"""

import hashlib
import json
import math
import random
import time
from contextlib import contextmanager
from itertools import product
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate

from absgate.analytics import RCCurve, RCPoint, aurc, auroc, improvement
from absgate.backend import MockBackend
from absgate.conformal import monte_carlo_validate
from absgate.domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Claim,
)
from absgate.factcheck import VERDICT_SCHEMA, run_fact_agent
from absgate.infomeasure import EntityCounts, information
from absgate.pipeline import select_abstraction
from absgate.runner import cmd_calibrate, cmd_evaluate, cmd_run, load_config
from absgate.special import beta_cdf, beta_quantile
from absgate.templates import TEMPLATES, render_template

import jsonschema

from test_factcheck import (
    ABSENCE_VERDICT,
    SUPPORTED_VERDICT,
    make_wiki,
    script_agent_session,
)
from test_templates import SAMPLE_VARIABLES

FIXTURES = Path(__file__).parent.parent / "fixtures"


@contextmanager
def criterion(number, description):
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {number}: FAIL - {description}")
        raise
    print(f"ACCEPTANCE {number}: PASS - {description}")


def make_curve(points):
    pts = tuple(
        RCPoint(theta=float(i), coverage=c, risk=r) for i, (c, r) in enumerate(points)
    )
    return RCCurve("m", pts)


def test_criterion_1_aurc_oracle():
    with criterion(1, "aurc matches a 1e5-step Riemann oracle on 200 random curves"):
        start = time.monotonic()
        rng = random.Random(20_240_817)
        grid = (np.arange(100_000) + 0.5) / 100_000
        for _ in range(200):
            n = rng.randint(1, 50)
            coverages = sorted(rng.uniform(0.0, 1.0) for _ in range(n))
            points = [(c, rng.uniform(0.0, 1.0)) for c in coverages]
            xs = [p[0] for p in points]
            ys = [p[1] for p in points]
            if xs[0] > 0.0:
                xs.insert(0, 0.0)
                ys.insert(0, ys[0])
            oracle = float(np.interp(grid, xs, ys, left=ys[0], right=ys[-1]).mean())
            assert aurc(make_curve(points)) == pytest.approx(oracle, abs=1e-6)
        worked = make_curve([(0.5, 0.2), (1.0, 0.4)])
        assert aurc(worked) == pytest.approx(0.25, abs=1e-15)
        elapsed = time.monotonic() - start
        assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s"


# Table rows: (redaction AURC, atom-wise AURC, printed improvement %).
TABLE_1 = [
    ("gpt-oss-120b/factscore", 61.30, 44.30, 27.73),
    ("gpt-oss-20b/factscore", 73.45, 61.59, 16.14),
    ("qwen3-235b-t/factscore", 48.30, 38.62, 20.04),
    ("qwen3-30b-t/factscore", 60.98, 50.99, 16.39),
    ("qwen3-30b-i/factscore", 57.84, 49.03, 15.23),
    ("llama-3.3-70b-i/factscore", 43.20, 40.40, 6.48),
    ("average/factscore", 57.51, 47.49, 17.43),
    ("gpt-oss-120b/longfact", 36.04, 28.47, 21.02),
    ("gpt-oss-20b/longfact", 42.60, 36.39, 14.59),
    ("qwen3-235b-t/longfact", 27.85, 22.89, 17.83),
    ("qwen3-30b-t/longfact", 32.24, 28.70, 10.97),
    ("qwen3-30b-i/longfact", 20.87, 19.74, 5.41),
    ("llama-3.3-70b-i/longfact", 23.48, 21.69, 7.64),
    ("average/longfact", 30.51, 26.31, 13.77),
]


def test_criterion_2_table_arithmetic():
    with criterion(2, "published AURC pairs reproduce every improvement % within 0.01"):
        failures = []
        for row, baseline, method, printed in TABLE_1:
            got = improvement(baseline, method)
            if abs(got - printed) > 0.01:
                failures.append(f"{row}: computed {got:.4f} vs printed {printed:.2f}")
        assert not failures, (
            "improvement recomputed from the rounded AURC columns differs from the "
            "printed column by more than 0.01 points on these rows (the printed "
            "values derive from unrounded AURCs): " + "; ".join(failures)
        )


def test_criterion_3_information_measure():
    with criterion(3, "count-based information matches worked values and properties"):
        start = time.monotonic()
        people = 12_352_844
        assert information(EntityCounts(people, 20_313)) == pytest.approx(0.39, abs=0.01)
        assert information(EntityCounts(people, 135_340)) == pytest.approx(0.28, abs=0.01)
        assert information(EntityCounts(1000, 1000)) == 0.0
        assert information(EntityCounts(1000, 1)) == 1.0
        rng = random.Random(3)
        for _ in range(1000):
            total = rng.randint(10, 10_000_000)
            a = rng.randint(1, total - 1)
            b = rng.randint(a + 1, total)
            hi = information(EntityCounts(total, a))
            lo = information(EntityCounts(total, b))
            assert 0.0 <= lo < hi <= 1.0
        elapsed = time.monotonic() - start
        assert elapsed < 1.0, f"runtime {elapsed:.2f}s exceeds 1s"


def test_criterion_4_selection_rule_exhaustive():
    with criterion(4, "selection rule exhaustive over short ladders on the 0..100 grid"):
        start = time.monotonic()
        grid = [float(v) for v in range(0, 101, 10)]
        claims = [Claim("E", f"fact {i}") for i in range(6)]
        sequence_count = 0
        for n_real in range(1, 6):  # ladders of length <= 6 including TOP
            for confs in product(grid, repeat=n_real):
                levels = tuple(
                    AbstractionLevel(i, claims[i], c) for i, c in enumerate(confs)
                ) + (AbstractionLevel(n_real, TOP, TOP_CONFIDENCE),)
                sequence = AbstractionSequence("a", levels)
                sequence_count += 1
                previous = -1
                for theta in grid:
                    chosen = select_abstraction(sequence, theta).chosen_level
                    # independent brute-force scan
                    expected = n_real
                    for j, c in enumerate(confs):
                        if c > theta:
                            expected = j
                            break
                    assert chosen == expected
                    assert chosen >= previous  # monotone in theta
                    previous = chosen
                # literal argmin contract on a sample of sequences
                if sequence_count % 17 == 0:
                    for theta in grid:
                        result = select_abstraction(sequence, theta)
                        for j in range(result.chosen_level):
                            assert sequence.confidences[j] <= theta
                        if not result.abstained:
                            assert sequence.confidences[result.chosen_level] > theta
        assert sequence_count == 11 + 11**2 + 11**3 + 11**4 + 11**5
        elapsed = time.monotonic() - start
        assert elapsed < 10.0, f"runtime {elapsed:.2f}s exceeds 10s"


def test_criterion_5_conformal_guarantee():
    with criterion(5, "Monte-Carlo threshold selection meets the risk guarantee"):
        start = time.monotonic()
        report = monte_carlo_validate(0.2, 0.1, n=100, trials=1000, m=100, seed=0)
        assert abs(report.mean_risk - 0.2) < 0.03
        assert report.frac_within_guarantee >= 0.88
        elapsed = time.monotonic() - start
        assert elapsed < 30.0, f"runtime {elapsed:.2f}s exceeds 30s"


def quad_beta_cdf(x, a, b):
    ln_norm = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)

    def density(t):
        return math.exp(ln_norm + (a - 1) * math.log(t) + (b - 1) * math.log1p(-t))

    value, _ = integrate.quad(density, 0.0, x, epsabs=1e-13, epsrel=1e-13, limit=200)
    return value


def test_criterion_6_beta_numerics():
    with criterion(6, "beta CDF/quantile identities and quadrature agreement"):
        rng = random.Random(6)
        for _ in range(1000):
            a = rng.uniform(0.5, 80)
            b = rng.uniform(0.5, 80)
            p = rng.uniform(0.001, 0.999)
            assert beta_cdf(beta_quantile(p, a, b), a, b) == pytest.approx(p, abs=1e-9)
        for x in (0.0, 0.25, 0.5, 0.3, 0.77, 1.0):
            assert beta_cdf(x, 1, 1) == pytest.approx(x, abs=1e-12)
            assert beta_cdf(x, 2, 1) == pytest.approx(x * x, abs=1e-12)
        for x in (0.6, 0.7, 0.75, 0.8, 0.85, 0.9):
            assert beta_cdf(x, 80, 20) == pytest.approx(quad_beta_cdf(x, 80, 20), abs=1e-9)


def test_criterion_7_auroc_pair_counting():
    with criterion(7, "rank-based AUROC equals O(n*m) pair counting exactly"):
        rng = random.Random(7)
        for _ in range(500):
            n = rng.randint(1, 200)
            m = rng.randint(1, 200)
            correct = [rng.choice(range(0, 101, 10)) for _ in range(n)]
            incorrect = [rng.choice(range(0, 101, 10)) for _ in range(m)]
            wins = sum(
                1.0 if c > i else 0.5 if c == i else 0.0
                for c in correct
                for i in incorrect
            )
            assert auroc(correct, incorrect) == wins / (n * m)


def test_criterion_8_prompt_goldens():
    with criterion(8, "rendered templates byte-match their stored golden copies"):
        golden_dir = Path(__file__).parent / "goldens" / "templates"
        for template_id in sorted(TEMPLATES):
            rendered = render_template(template_id, SAMPLE_VARIABLES[template_id])
            golden = (golden_dir / f"{template_id}.txt").read_text(encoding="utf-8")
            assert rendered == golden, f"template {template_id} drifted"
        assert len(TEMPLATES) >= 11


def test_criterion_9_hermetic_end_to_end(tmp_path):
    with criterion(9, "run+evaluate+calibrate replay byte-identically offline"):
        start = time.monotonic()
        config = load_config(FIXTURES / "config.json")

        def flow(run_dir):
            cmd_run(config, run_dir, offline=True)
            cmd_evaluate(run_dir, config, offline=True)
            cmd_calibrate(run_dir, config, alpha=0.2, delta=0.1, offline=True)
            return {
                str(p.relative_to(run_dir)): hashlib.sha256(p.read_bytes()).hexdigest()
                for p in sorted(run_dir.rglob("*"))
                if p.is_file()
            }

        first = flow(tmp_path / "a")
        second = flow(tmp_path / "b")
        assert first == second
        assert "metrics.csv" in first and "manifest.json" in first
        elapsed = time.monotonic() - start
        assert elapsed < 20.0, f"runtime {elapsed:.2f}s exceeds 20s"


def test_criterion_10_fact_agent_schema():
    with criterion(10, "replayed agent runs emit schema-valid verdicts"):
        sessions = [
            (
                "Alan Turing was born in London",
                [
                    json.dumps(
                        {
                            "tool": "search_wikipedia",
                            "args": {"query": "Alan Turing was born in London"},
                        }
                    ),
                    json.dumps(
                        {"tool": "open_wikipedia_page", "args": {"title": "Alan Turing"}}
                    ),
                    json.dumps(SUPPORTED_VERDICT),
                ],
                "supported",
            ),
            (
                "Zorblat the Unfindable is a dragon",
                [
                    json.dumps(
                        {
                            "tool": "search_wikipedia",
                            "args": {"query": "Zorblat the Unfindable is a dragon"},
                        }
                    ),
                    json.dumps(ABSENCE_VERDICT),
                ],
                "unsupported",
            ),
            (
                "Alan Turing was born in London",
                [json.dumps(SUPPORTED_VERDICT)],
                "supported",
            ),
        ]
        for claim, replies, expected in sessions:
            backend = MockBackend()
            script_agent_session(backend, make_wiki(), claim, replies)
            verdict = run_fact_agent(backend, make_wiki(), claim, model="test-model")
            assert verdict.label == expected
            payload = {
                "label": verdict.label.upper(),
                "rationale": verdict.rationale,
                "evidence": [
                    {"title": e.title, "url": e.url, "quote": e.quote}
                    for e in verdict.evidence
                ],
            }
            jsonschema.validate(payload, VERDICT_SCHEMA)
        # evidence-absence path ends unsupported with no evidence attached
        assert sessions[1][2] == "unsupported"
