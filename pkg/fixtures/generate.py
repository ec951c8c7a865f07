"""Builds the shipped fixture set: a two-prompt world with scripted model
replies for every pipeline stage, plus the matching label and count tables.

Run from the repository root after installing the package:

    python3 fixtures/generate.py

The world is small enough to verify by hand: ten atoms, strictly widening
abstraction ladders, and four incorrect leaf claims that become correct
one rung up.
"""

from __future__ import annotations

import json
from pathlib import Path

from absgate.backend import MockBackend
from absgate.domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Claim,
    normalize_claim,
)
from absgate.infomeasure import normalize_question
from absgate.pipeline import (
    Pipeline,
    format_number,
    select_abstraction,
    statement_list_block,
    statements_block,
)

HERE = Path(__file__).parent

MODEL = "fixture-model"
TEMPERATURES = {"default": 0.0, "generation": 0.0}
MAX_TOKENS = 2048

PEOPLE_TOTAL = 12_352_844
TOWERS_TOTAL = 80_000


class AtomSpec:
    def __init__(self, entity, fact, score, supported, ladder, category, specific_q, count):
        self.entity = entity
        self.fact = fact
        self.score = float(score)
        self.supported = supported
        # ladder: list of (fact, confidence, supported, specific_q, count)
        self.ladder = ladder
        self.category = category
        self.specific_q = specific_q
        self.count = count

    @property
    def claim(self):
        return Claim(self.entity, self.fact)

    def sequence(self, atom_id):
        levels = [AbstractionLevel(0, self.claim, self.score)]
        for i, (fact, conf, _sup, _q, _c) in enumerate(self.ladder):
            levels.append(AbstractionLevel(i + 1, Claim(self.entity, fact), float(conf)))
        levels.append(AbstractionLevel(len(levels), TOP, TOP_CONFIDENCE))
        return AbstractionSequence(atom_id, tuple(levels))


class PromptSpec:
    def __init__(self, pid, source, text, response, atoms, baselines):
        self.id = pid
        self.source = source
        self.text = text
        self.response = response
        self.atoms = atoms
        # baselines: kind -> (response text, [(entity, fact)])
        self.baselines = baselines


P1 = PromptSpec(
    "fs-grace-hopper",
    "factscore",
    "Tell me a bio of Grace Hopper.",
    "Grace Hopper was born on December 9, 1907 in New York City. She was an "
    "American computer scientist. She invented the COBOL language.",
    [
        AtomSpec(
            "Grace Hopper",
            "was born on December 9, 1907",
            60,
            False,
            [
                ("was born in the 1900s", 75, True, "How many people were born in the 1900s?", 500_000),
                ("was born in the 20th century", 90, True, "How many people were born in the 20th century?", 6_000_000),
            ],
            "people",
            "How many people were born on December 9, 1907?",
            450,
        ),
        AtomSpec(
            "Grace Hopper",
            "was born in New York City",
            85,
            True,
            [
                ("was born in the state of New York", 92, True, "How many people were born in the state of New York?", 160_000),
                ("was born in the United States", 97, True, "How many people were born in the United States?", 2_400_000),
            ],
            "people",
            "How many people were born in New York City?",
            58_000,
        ),
        AtomSpec(
            "Grace Hopper",
            "was an American",
            97,
            True,
            [],
            "people",
            "How many people are American?",
            2_500_000,
        ),
        AtomSpec(
            "Grace Hopper",
            "was a computer scientist",
            95,
            True,
            [("was a scientist", 99, True, "How many people are scientists?", 300_000)],
            "people",
            "How many people are computer scientists?",
            22_000,
        ),
        AtomSpec(
            "Grace Hopper",
            "invented the COBOL language",
            70,
            False,
            [
                ("influenced the COBOL language", 88, True, "How many people influenced the COBOL language?", 240),
                ("worked on programming languages", 95, True, "How many people worked on programming languages?", 8_000),
            ],
            "people",
            "How many people invented the COBOL language?",
            10,
        ),
    ],
    {
        "inline": (
            "Grace Hopper was an American computer scientist born in the early "
            "20th century.",
            [
                ("Grace Hopper", "was an American"),
                ("Grace Hopper", "was a computer scientist"),
                ("Grace Hopper", "was born in the early 20th century"),
            ],
        ),
        "self_revision": (
            "Grace Hopper was an American computer scientist. She was born in "
            "New York City.",
            [
                ("Grace Hopper", "was an American"),
                ("Grace Hopper", "was a computer scientist"),
                ("Grace Hopper", "was born in New York City"),
            ],
        ),
    },
)

P2 = PromptSpec(
    "lf-eiffel-tower",
    "longfact",
    "What is the Eiffel Tower?",
    "The Eiffel Tower is a wrought-iron lattice tower located in Paris. It was "
    "completed in 1887 and stands 310 metres tall. The tower attracts millions "
    "of visitors each year.",
    [
        AtomSpec(
            "The Eiffel Tower",
            "is a wrought-iron lattice tower",
            92,
            True,
            [("is a lattice tower", 97, True, "How many towers are lattice towers?", 1_100)],
            "towers",
            "How many towers are wrought-iron lattice towers?",
            120,
        ),
        AtomSpec(
            "The Eiffel Tower",
            "is located in Paris",
            97,
            True,
            [("is located in France", 99, True, "How many towers are located in France?", 2_300)],
            "towers",
            "How many towers are located in Paris?",
            60,
        ),
        AtomSpec(
            "The Eiffel Tower",
            "was completed in 1887",
            80,
            False,
            [
                ("was completed in the 1880s", 90, True, "How many towers were completed in the 1880s?", 210),
                ("was completed in the 19th century", 97, True, "How many towers were completed in the 19th century?", 1_500),
            ],
            "towers",
            "How many towers were completed in 1887?",
            35,
        ),
        AtomSpec(
            "The Eiffel Tower",
            "is 310 metres tall",
            55,
            False,
            [
                ("is over 300 metres tall", 82, True, "How many towers are over 300 metres tall?", 90),
                ("is a tall structure", 95, True, "How many towers are tall structures?", 40_000),
            ],
            "towers",
            "How many towers are 310 metres tall?",
            3,
        ),
        AtomSpec(
            "The Eiffel Tower",
            "attracts millions of visitors each year",
            75,
            True,
            [("attracts many visitors", 92, True, "How many towers attract many visitors?", 700)],
            "towers",
            "How many towers attract millions of visitors each year?",
            25,
        ),
    ],
    {
        "inline": (
            "The Eiffel Tower is a famous tower in Paris.",
            [
                ("The Eiffel Tower", "is a tower"),
                ("The Eiffel Tower", "is located in Paris"),
            ],
        ),
        "self_revision": (
            "The Eiffel Tower is a lattice tower located in Paris. It attracts "
            "many visitors.",
            [
                ("The Eiffel Tower", "is a lattice tower"),
                ("The Eiffel Tower", "is located in Paris"),
                ("The Eiffel Tower", "attracts many visitors"),
            ],
        ),
    },
)

PROMPTS = [P1, P2]

# Claims that only occur in baseline responses.
EXTRA_CLAIMS = {
    normalize_claim(("Grace Hopper", "was born in the early 20th century")): (
        Claim("Grace Hopper", "was born in the early 20th century"),
        True,
        "people",
        "How many people were born in the early 20th century?",
        5_500_000,
    ),
    normalize_claim(("The Eiffel Tower", "is a tower")): (
        Claim("The Eiffel Tower", "is a tower"),
        True,
        "towers",
        "How many towers are towers?",
        TOWERS_TOTAL,
    ),
}

CATEGORY_TOTALS = {"people": PEOPLE_TOTAL, "towers": TOWERS_TOTAL}


def scored_reply(items):
    """items: (index, bracketed statement, reasoning, confidence)"""
    return "\n".join(
        f"{i}. {stmt}\n   Reasoning: {reason}\n   Confidence: {format_number(conf)}"
        for i, stmt, reason, conf in items
    )


def atom_list_reply(claims):
    return "\n".join(f"{i + 1}. {c.bracketed()}" for i, c in enumerate(claims))


def build():
    backend = MockBackend()
    pipeline = Pipeline(
        backend, model=MODEL, temperatures=TEMPERATURES, max_tokens=MAX_TOKENS
    )

    claim_table = {}  # key -> (Claim, supported, category, specific_q, count)
    for prompt in PROMPTS:
        for atom in prompt.atoms:
            claim_table[normalize_claim(atom.claim)] = (
                atom.claim,
                atom.supported,
                atom.category,
                atom.specific_q,
                atom.count,
            )
            for fact, _conf, supported, question, count in atom.ladder:
                claim = Claim(atom.entity, fact)
                claim_table[normalize_claim(claim)] = (
                    claim,
                    supported,
                    atom.category,
                    question,
                    count,
                )
    claim_table.update(EXTRA_CLAIMS)

    for prompt in PROMPTS:
        # Stage 1: generation.
        backend.script(
            pipeline.request("raw", {"prompt": prompt.text}, stage="generation"),
            prompt.response,
        )
        atoms = [a.claim for a in prompt.atoms]

        # Stage 2: atomization of the original response.
        backend.script(
            pipeline.request("atomization", {"text": prompt.response}),
            atom_list_reply(atoms),
        )

        # Stage 3 step 1: atom confidences in one call.
        indexed = [(i + 1, claim) for i, claim in enumerate(atoms)]
        backend.script(
            pipeline.request(
                "atom_confidence", {"statements": statements_block(indexed)}, stage="score"
            ),
            scored_reply(
                [
                    (
                        i + 1,
                        claim.bracketed(),
                        f"Assessment of statement {i + 1}.",
                        spec.score,
                    )
                    for i, (claim, spec) in enumerate(zip(atoms, prompt.atoms))
                ]
            ),
        )

        # Stage 3 step 2: one ladder call per atom, plus its confidence call.
        for spec in prompt.atoms:
            lines = [
                f"1. {spec.claim.bracketed()}\n   Reasoning: The finest detail is the least certain."
            ]
            for j, (fact, _conf, _sup, _q, _c) in enumerate(spec.ladder):
                lines.append(
                    f"{j + 2}. {Claim(spec.entity, fact).bracketed()}\n"
                    f"   Reasoning: Generalization step {j + 1}."
                )
            lines.append(
                f"{len(spec.ladder) + 2}. STOP.\n   Reasoning: Anything broader would be uninformative."
            )
            backend.script(
                pipeline.request("abstraction", {"statement": spec.claim.bracketed()}),
                "\n".join(lines),
            )
            if spec.ladder:
                indexed = [(1, spec.claim)] + [
                    (j + 2, Claim(spec.entity, fact))
                    for j, (fact, _conf, _sup, _q, _c) in enumerate(spec.ladder)
                ]
                backend.script(
                    pipeline.request(
                        "abstraction_confidence",
                        {
                            "statements": statements_block(indexed),
                            "confidence": format_number(spec.score),
                        },
                        stage="score",
                    ),
                    scored_reply(
                        [(1, spec.claim.bracketed(), "Score taken as given.", spec.score)]
                        + [
                            (
                                j + 2,
                                Claim(spec.entity, fact).bracketed(),
                                "Broader, hence at least as likely.",
                                conf,
                            )
                            for j, (fact, conf, _sup, _q, _c) in enumerate(spec.ladder)
                        ]
                    ),
                )

        # Prompting baselines and their atomizations.
        for kind, (text, claims) in prompt.baselines.items():
            variables = {"question": prompt.text}
            if kind.startswith("self_revision"):
                variables["original_answer"] = prompt.response
            backend.script(
                pipeline.request(kind, variables, stage="baseline"), text
            )
            backend.script(
                pipeline.request("atomization", {"text": text}),
                atom_list_reply([Claim(e, f) for e, f in claims]),
            )

    # Threshold sweep: reconstructions and their re-atomizations.
    sequences = {}
    for prompt in PROMPTS:
        for i, spec in enumerate(prompt.atoms):
            sequences[(prompt.id, i)] = spec.sequence(f"{prompt.id}#{i + 1}")
    grid = {0.0}
    for sequence in sequences.values():
        grid.update(lv.confidence for lv in sequence.real_levels)
    for theta in sorted(grid):
        for prompt in PROMPTS:
            survivors = []
            for i in range(len(prompt.atoms)):
                selection = select_abstraction(sequences[(prompt.id, i)], theta)
                if not selection.abstained:
                    survivors.append(selection.chosen_statement)
            if not survivors:
                continue
            text = " ".join(c.sentence() for c in survivors)
            backend.script(
                pipeline.request(
                    "reconstruction", {"statement list": statement_list_block(survivors)}
                ),
                text,
            )
            backend.script(
                pipeline.request("atomization", {"text": text}),
                atom_list_reply(survivors),
            )

    # Counting questions for every distinct claim.
    for key in sorted(claim_table):
        claim, _supported, category, specific_q, _count = claim_table[key]
        backend.script(
            pipeline.request("counting_questions", {"statement": claim.sentence()}),
            f"- Broad: How many {category} are there?\n- Specific: {specific_q}",
        )

    return backend.scripts, claim_table


def write_files():
    scripts, claim_table = build()

    (HERE / "transcripts.json").write_text(
        json.dumps(scripts, ensure_ascii=False, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )

    prompt_rows = [
        {"schema_version": 1, "id": p.id, "text": p.text, "source": p.source}
        for p in PROMPTS
    ]
    (HERE / "prompts.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in prompt_rows),
        encoding="utf-8",
    )

    label_rows = []
    for key in sorted(claim_table):
        _claim, supported, _category, _q, _c = claim_table[key]
        label_rows.append(
            {
                "schema_version": 1,
                "claim": key,
                "label": "supported" if supported else "unsupported",
                "rationale": "Fixture annotation.",
                "evidence": [],
            }
        )
    (HERE / "labels.jsonl").write_text(
        "".join(json.dumps(r, ensure_ascii=False, sort_keys=True) + "\n" for r in label_rows),
        encoding="utf-8",
    )

    counts = {
        normalize_question(f"How many {cat} are there?"): total
        for cat, total in CATEGORY_TOTALS.items()
    }
    for key in sorted(claim_table):
        _claim, _sup, _category, question, count = claim_table[key]
        counts[normalize_question(question)] = count
    (HERE / "counts.tsv").write_text(
        "".join(f"{q}\t{c}\n" for q, c in sorted(counts.items())), encoding="utf-8"
    )

    config = {
        "backend": {
            "mode": "mock",
            "model": MODEL,
            "transcripts": "transcripts.json",
            "temperatures": TEMPERATURES,
            "max_tokens": MAX_TOKENS,
            "max_inflight": 4,
        },
        "providers": {
            "labels": "fixture",
            "labels_path": "labels.jsonl",
            "counts": "fixture",
            "counts_path": "counts.tsv",
        },
        "prompts": "prompts.jsonl",
        "theta_grid": "attainable",
        "alpha": 0.2,
        "delta": 0.1,
        "baselines": ["inline", "self_revision"],
        "seed": 0,
        "info_fallback": "median",
    }
    (HERE / "config.json").write_text(
        json.dumps(config, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    print(f"wrote {len(scripts)} scripted replies and {len(claim_table)} claims")


if __name__ == "__main__":
    write_files()
