"""Run orchestration: persistent run directories, stage artifacts, and the
evaluation/calibration assemblies built on top of them.

Every artifact is line-delimited JSON with an explicit schema_version, so
run directories diff cleanly and replay byte-identically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analytics, conformal, infomeasure
from .backend import CachedBackend, HttpBackend, MockBackend
from .domain import (
    TOP,
    TOP_CONFIDENCE,
    AbstractionLevel,
    AbstractionSequence,
    Atom,
    Claim,
    PromptRecord,
    ResponseText,
    normalize_claim,
)
from .factcheck import (
    FixtureWikiTransport,
    HttpWikiTransport,
    LabelStore,
    MissingLabelsError,
    WikiClient,
    run_fact_agent,
)
from .infomeasure import (
    EntityCounts,
    FixtureCounts,
    MissingCountError,
    SparqlCounts,
    generate_counting_questions,
    information,
    normalize_question,
)
from .pipeline import (
    Pipeline,
    format_number,
    select_abstraction,
    statement_list_block,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"

RESPONSES_FILE = "responses.jsonl"
BASELINES_FILE = "baselines.jsonl"
ATOMS_FILE = "atoms.jsonl"
SCORES_FILE = "scores.jsonl"
SEQUENCES_FILE = "sequences.jsonl"
LABELS_FILE = "labels.jsonl"
QUESTIONS_FILE = "questions.jsonl"
COUNTS_FILE = "counts.tsv"
METRICS_FILE = "metrics.csv"
SUMMARY_FILE = "metrics_summary.json"
CURVES_FILE = "curves.svg"
CALIBRATION_FILE = "calibration.tsv"
MANIFEST_FILE = "manifest.json"
LOCK_FILE = ".lock"


class ConfigError(ValueError):
    pass


class ArtifactError(ValueError):
    pass


class MissingCountsError(Exception):
    def __init__(self, questions):
        self.questions = sorted(questions)
        preview = ", ".join(self.questions[:5])
        more = f" (+{len(self.questions) - 5} more)" if len(self.questions) > 5 else ""
        super().__init__(
            f"counts missing for {len(self.questions)} question(s): {preview}{more}"
        )


# --- configuration -----------------------------------------------------------


@dataclass
class RunConfig:
    raw: dict
    base_dir: Path

    def __post_init__(self):
        backend = self.raw.get("backend") or {}
        if backend.get("mode") not in ("mock", "http"):
            raise ConfigError("backend.mode must be 'mock' or 'http'")
        if "model" not in backend:
            raise ConfigError("backend.model is required")
        providers = self.raw.get("providers") or {}
        if providers.get("labels", "fixture") not in ("fixture", "agent"):
            raise ConfigError("providers.labels must be 'fixture' or 'agent'")
        if providers.get("counts", "fixture") not in ("fixture", "sparql"):
            raise ConfigError("providers.counts must be 'fixture' or 'sparql'")
        for field_name in ("alpha", "delta"):
            value = self.raw.get(field_name)
            if value is not None and not 0.0 < float(value) < 1.0:
                raise ConfigError(f"{field_name} must lie in (0, 1)")
        grid = self.raw.get("theta_grid", "attainable")
        if not (grid == "attainable" or isinstance(grid, list)):
            raise ConfigError("theta_grid must be 'attainable' or a list of numbers")
        if "prompts" not in self.raw:
            raise ConfigError("prompts path is required")
        if not self.path("prompts").exists():
            raise ConfigError(f"prompts file not found: {self.path('prompts')}")
        if backend["mode"] == "mock":
            if "transcripts" not in backend:
                raise ConfigError("backend.transcripts is required in mock mode")
            if not self.resolve(backend["transcripts"]).exists():
                raise ConfigError(
                    f"transcripts file not found: {self.resolve(backend['transcripts'])}"
                )
        else:
            if "base_url" not in backend:
                raise ConfigError("backend.base_url is required in http mode")
        fallback = self.raw.get("info_fallback", "median")
        if fallback not in ("median", "zero", "one", "skip", "error"):
            raise ConfigError(f"unknown info_fallback policy {fallback!r}")
        for key in ("labels_path", "counts_path", "sparql_templates_path", "wiki_fixtures"):
            value = providers.get(key)
            if value and not self.resolve(value).exists():
                raise ConfigError(f"providers.{key} not found: {self.resolve(value)}")

    def resolve(self, path_str: str) -> Path:
        path = Path(path_str)
        return path if path.is_absolute() else (self.base_dir / path)

    def path(self, key: str) -> Path:
        return self.resolve(self.raw[key])

    @property
    def backend_cfg(self) -> dict:
        return self.raw["backend"]

    @property
    def providers(self) -> dict:
        return self.raw.get("providers") or {}

    @property
    def baselines(self) -> list[str]:
        return list(self.raw.get("baselines", []))

    @property
    def seed(self) -> int:
        return int(self.raw.get("seed", 0))

    @property
    def info_fallback(self) -> str:
        return self.raw.get("info_fallback", "median")


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return RunConfig(raw=raw, base_dir=path.parent)


def build_backend(config: RunConfig, offline: bool):
    backend_cfg = config.backend_cfg
    if backend_cfg["mode"] == "mock" or offline:
        if backend_cfg["mode"] != "mock":
            raise ConfigError("--offline requires a mock backend configuration")
        backend = MockBackend.from_file(config.resolve(backend_cfg["transcripts"]))
    else:
        backend = HttpBackend(
            base_url=backend_cfg["base_url"],
            max_inflight=int(backend_cfg.get("max_inflight", 4)),
        )
    if backend_cfg.get("cache_dir"):
        backend = CachedBackend(backend, config.resolve(backend_cfg["cache_dir"]))
    return backend


def build_pipeline(config: RunConfig, offline: bool) -> Pipeline:
    backend_cfg = config.backend_cfg
    return Pipeline(
        build_backend(config, offline),
        model=backend_cfg["model"],
        temperatures=backend_cfg.get("temperatures") or {},
        max_tokens=int(backend_cfg.get("max_tokens", 2048)),
        max_levels=int(backend_cfg.get("max_levels", 10)),
        max_workers=int(backend_cfg.get("max_inflight", 4)),
    )


def build_counts_provider(config: RunConfig):
    providers = config.providers
    if providers.get("counts", "fixture") == "fixture":
        path = providers.get("counts_path")
        if not path:
            raise ConfigError("providers.counts_path is required for fixture counts")
        return FixtureCounts.from_file(config.resolve(path))
    templates_path = providers.get("sparql_templates_path")
    templates = {}
    if templates_path:
        templates = json.loads(config.resolve(templates_path).read_text(encoding="utf-8"))
    return SparqlCounts(
        endpoint=providers.get("sparql_endpoint", "https://query.wikidata.org/sparql"),
        templates=templates,
    )


def build_wiki_client(config: RunConfig, offline: bool) -> WikiClient:
    providers = config.providers
    if offline or providers.get("wiki_fixtures"):
        fixtures = providers.get("wiki_fixtures")
        if not fixtures:
            raise ConfigError("offline fact checking needs providers.wiki_fixtures")
        transport = FixtureWikiTransport(directory=config.resolve(fixtures))
    else:
        transport = HttpWikiTransport()
    return WikiClient(transport)


# --- artifact io ----------------------------------------------------------------


def write_jsonl(path, records):
    text = "".join(
        json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n" for record in records
    )
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def read_jsonl(path, required_keys=()):
    records = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
        if "schema_version" not in record:
            raise ArtifactError(f"{path}:{line_no}: missing schema_version")
        for key in required_keys:
            if key not in record:
                raise ArtifactError(f"{path}:{line_no}: missing field {key!r}")
        records.append(record)
    return records


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_manifest(run_dir: Path, manifest: dict):
    path = run_dir / MANIFEST_FILE
    tmp = path.with_suffix(".tmp")
    tmp.write_text(
        json.dumps(manifest, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    os.replace(tmp, path)


def load_manifest(run_dir: Path) -> dict:
    path = run_dir / MANIFEST_FILE
    if not path.exists():
        raise ArtifactError(f"no manifest in {run_dir}; run the pipeline first")
    return json.loads(path.read_text(encoding="utf-8"))


class run_lock:
    """One process owns a run directory at a time."""

    def __init__(self, run_dir: Path):
        self.path = run_dir / LOCK_FILE

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ArtifactError(
                f"run directory is locked by another process ({self.path}); "
                "remove the stale lock if no run is active"
            ) from None
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass
        return False


# --- record codecs -----------------------------------------------------------------


def _atom_record(atom: Atom) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "id": atom.id,
        "response_id": atom.response_id,
        "index": atom.index,
        "entity": atom.entity,
        "fact": atom.fact,
        "raw": atom.raw,
    }


def _atom_from_record(record: dict) -> Atom:
    return Atom(
        id=record["id"],
        response_id=record["response_id"],
        index=record["index"],
        entity=record["entity"],
        fact=record["fact"],
        raw=record.get("raw", ""),
    )


def _sequence_record(sequence: AbstractionSequence) -> dict:
    levels = []
    for level in sequence.levels:
        if level.is_top:
            levels.append(
                {
                    "level": level.level,
                    "top": True,
                    "entity": None,
                    "fact": None,
                    "confidence": level.confidence,
                    "reasoning": level.reasoning,
                }
            )
        else:
            levels.append(
                {
                    "level": level.level,
                    "top": False,
                    "entity": level.statement.entity,
                    "fact": level.statement.fact,
                    "confidence": level.confidence,
                    "reasoning": level.reasoning,
                }
            )
    return {"schema_version": SCHEMA_VERSION, "atom_id": sequence.atom_id, "levels": levels}


def _sequence_from_record(record: dict) -> AbstractionSequence:
    levels = []
    for entry in record["levels"]:
        statement = TOP if entry["top"] else Claim(entry["entity"], entry["fact"])
        levels.append(
            AbstractionLevel(
                entry["level"], statement, entry["confidence"], entry.get("reasoning", "")
            )
        )
    return AbstractionSequence(record["atom_id"], tuple(levels))


def theta_file(prefix: str, theta: float) -> str:
    return f"{prefix}.{format_number(theta)}.jsonl"


# --- cmd run -------------------------------------------------------------------------


def _run_id(config: RunConfig) -> str:
    payload = json.dumps(config.raw, sort_keys=True, ensure_ascii=False).encode("utf-8")
    payload += config.path("prompts").read_bytes()
    return hashlib.sha256(payload).hexdigest()[:16]


def _stage(run_dir: Path, manifest: dict, name: str, filename: str, compute):
    """Load a completed stage by digest, or compute and persist it."""
    path = run_dir / filename
    recorded = manifest["stages"].get(name)
    if path.exists() and recorded and recorded.get("sha256") == sha256_file(path):
        return read_jsonl(path)
    records = compute()
    write_jsonl(path, records)
    manifest["stages"][name] = {
        "file": filename,
        "sha256": sha256_file(path),
        "records": len(records),
    }
    save_manifest(run_dir, manifest)
    return records


def load_prompts(path) -> list[PromptRecord]:
    records = read_jsonl(path, required_keys=("id", "text"))
    prompts = [
        PromptRecord(r["id"], r["text"], r.get("source", "custom")) for r in records
    ]
    ids = [p.id for p in prompts]
    if len(set(ids)) != len(ids):
        raise ArtifactError("prompt ids must be unique within a run")
    return prompts


def cmd_run(
    config: RunConfig,
    run_dir,
    offline: bool = False,
    theta_grid=None,
    seed: int | None = None,
) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    pipeline = build_pipeline(config, offline)
    prompts = load_prompts(config.path("prompts"))
    online = config.backend_cfg["mode"] == "http" and not offline

    with run_lock(run_dir):
        try:
            manifest = load_manifest(run_dir)
        except ArtifactError:
            manifest = {
                "schema_version": SCHEMA_VERSION,
                "run_id": _run_id(config),
                "created_at": (
                    time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
                    if online
                    else EPOCH_TIMESTAMP
                ),
                "backend_mode": "http" if online else "mock",
                "config": config.raw,
                "prompts": len(prompts),
                "stages": {},
            }
        manifest.setdefault("stages", {})
        if seed is not None:
            manifest["seed_override"] = seed

        # Stage 1: generation.
        prompt_rows = [
            {
                "schema_version": SCHEMA_VERSION,
                "id": p.id,
                "text": p.text,
                "source": p.source,
            }
            for p in prompts
        ]
        _stage(run_dir, manifest, "prompts", "prompts.jsonl", lambda: prompt_rows)

        def compute_responses():
            rows = []
            for prompt in prompts:
                response = pipeline.generate(prompt)
                rows.append(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "prompt_id": prompt.id,
                        "stage": "original",
                        "text": response.text,
                    }
                )
            return rows

        response_rows = _stage(run_dir, manifest, "responses", RESPONSES_FILE, compute_responses)
        responses = {
            r["prompt_id"]: ResponseText(r["prompt_id"], r["text"], "original")
            for r in response_rows
        }

        # Prompting baselines (single operating points).
        def compute_baselines():
            rows = []
            for prompt in prompts:
                for kind in config.baselines:
                    needs_original = kind.startswith("self_revision")
                    response = pipeline.baseline_prompted(
                        kind,
                        prompt,
                        original_response=responses[prompt.id] if needs_original else None,
                    )
                    atoms = pipeline.atomize(response, rid=f"{prompt.id}/{kind}").atoms
                    rows.append(
                        {
                            "schema_version": SCHEMA_VERSION,
                            "prompt_id": prompt.id,
                            "kind": kind,
                            "text": response.text,
                            "atoms": [_atom_record(a) for a in atoms],
                        }
                    )
            return rows

        _stage(run_dir, manifest, "baselines", BASELINES_FILE, compute_baselines)

        # Stage 2: atomization of the original responses.
        def compute_atoms():
            rows = []
            for prompt in prompts:
                output = pipeline.atomize(responses[prompt.id])
                rows.extend(_atom_record(a) for a in output.atoms)
            return rows

        atom_rows = _stage(run_dir, manifest, "atoms", ATOMS_FILE, compute_atoms)
        atoms_by_prompt: dict[str, list[Atom]] = {}
        for row in atom_rows:
            atoms_by_prompt.setdefault(row["response_id"], []).append(_atom_from_record(row))

        # Stage 3 step 1: atom confidences.
        def compute_scores():
            rows = []
            for prompt in prompts:
                scored = pipeline.score_atoms(
                    prompt, responses[prompt.id], atoms_by_prompt[prompt.id]
                )
                rows.extend(
                    {
                        "schema_version": SCHEMA_VERSION,
                        "atom_id": entry.atom_id,
                        "reasoning": entry.reasoning,
                        "confidence": entry.confidence,
                    }
                    for entry in scored.entries
                )
            return rows

        score_rows = _stage(run_dir, manifest, "scores", SCORES_FILE, compute_scores)
        score_by_atom = {r["atom_id"]: r["confidence"] for r in score_rows}

        # Stage 3 step 2: abstraction ladders for every atom, generated once
        # so the whole threshold sweep reuses them.
        def compute_sequences():
            all_atoms = [a for prompt in prompts for a in atoms_by_prompt[prompt.id]]
            workers = max(1, pipeline.max_workers)
            if workers > 1 and len(all_atoms) > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    sequences = list(
                        pool.map(
                            lambda atom: pipeline.generate_abstraction_sequence(
                                atom, score_by_atom[atom.id]
                            ),
                            all_atoms,
                        )
                    )
            else:
                sequences = [
                    pipeline.generate_abstraction_sequence(atom, score_by_atom[atom.id])
                    for atom in all_atoms
                ]
            return [_sequence_record(s) for s in sequences]

        sequence_rows = _stage(run_dir, manifest, "sequences", SEQUENCES_FILE, compute_sequences)
        sequences = {r["atom_id"]: _sequence_from_record(r) for r in sequence_rows}

        # Threshold grid.
        grid = theta_grid if theta_grid is not None else config.raw.get("theta_grid", "attainable")
        if grid == "attainable":
            values = {0.0}
            for sequence in sequences.values():
                values.update(lv.confidence for lv in sequence.real_levels)
            thetas = sorted(values)
        else:
            thetas = sorted(float(t) for t in grid)
        manifest["thetas"] = thetas
        save_manifest(run_dir, manifest)

        # Stage 3 step 3 + stage 4, once per threshold.
        for theta in thetas:
            tag = format_number(theta)

            def compute_selections(theta=theta):
                rows = []
                for prompt in prompts:
                    for atom in atoms_by_prompt[prompt.id]:
                        selection = select_abstraction(sequences[atom.id], theta)
                        top = selection.abstained
                        rows.append(
                            {
                                "schema_version": SCHEMA_VERSION,
                                "atom_id": atom.id,
                                "theta": theta,
                                "chosen_level": selection.chosen_level,
                                "top": top,
                                "entity": None if top else selection.chosen_statement.entity,
                                "fact": None if top else selection.chosen_statement.fact,
                            }
                        )
                return rows

            selection_rows = _stage(
                run_dir,
                manifest,
                f"selections@{tag}",
                theta_file("selections", theta),
                compute_selections,
            )

            def compute_reconstructed(theta=theta, selection_rows=selection_rows):
                selected = {r["atom_id"]: r for r in selection_rows}
                rows = []
                for prompt in prompts:
                    survivors = [
                        Claim(r["entity"], r["fact"])
                        for atom in atoms_by_prompt[prompt.id]
                        if not (r := selected[atom.id])["top"]
                    ]
                    if survivors:
                        reply = pipeline.backend.complete(
                            pipeline.request(
                                "reconstruction",
                                {"statement list": statement_list_block(survivors)},
                            )
                        )
                        text = reply.text
                    else:
                        text = ""
                    reconstructed = ResponseText(prompt.id, text, "reconstructed", theta)
                    retained = (
                        pipeline.atomize(reconstructed).atoms if text.strip() else ()
                    )
                    rows.append(
                        {
                            "schema_version": SCHEMA_VERSION,
                            "prompt_id": prompt.id,
                            "theta": theta,
                            "text": text,
                            "retained_atoms": [_atom_record(a) for a in retained],
                        }
                    )
                return rows

            _stage(
                run_dir,
                manifest,
                f"reconstructed@{tag}",
                theta_file("reconstructed", theta),
                compute_reconstructed,
            )

    return run_dir


# --- claim universe ---------------------------------------------------------------


@dataclass
class RunArtifacts:
    prompts: list[PromptRecord]
    atoms_by_prompt: dict[str, list[Atom]]
    score_by_atom: dict[str, float]
    score_rows: list[dict]
    sequences: dict[str, AbstractionSequence]
    thetas: list[float]
    retained: dict[tuple[str, float], list[Atom]]
    baselines: dict[tuple[str, str], list[Atom]]
    manifest: dict


def load_run(run_dir) -> RunArtifacts:
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    prompts = load_prompts(run_dir / "prompts.jsonl")
    atom_rows = read_jsonl(run_dir / ATOMS_FILE, required_keys=("id", "entity", "fact"))
    atoms_by_prompt: dict[str, list[Atom]] = {}
    for row in atom_rows:
        atoms_by_prompt.setdefault(row["response_id"], []).append(_atom_from_record(row))
    score_rows = read_jsonl(run_dir / SCORES_FILE, required_keys=("atom_id", "confidence"))
    score_by_atom = {r["atom_id"]: r["confidence"] for r in score_rows}
    sequence_rows = read_jsonl(run_dir / SEQUENCES_FILE, required_keys=("atom_id", "levels"))
    sequences = {r["atom_id"]: _sequence_from_record(r) for r in sequence_rows}
    thetas = list(manifest.get("thetas", []))
    retained: dict[tuple[str, float], list[Atom]] = {}
    for theta in thetas:
        rows = read_jsonl(
            run_dir / theta_file("reconstructed", theta), required_keys=("prompt_id",)
        )
        for row in rows:
            retained[(row["prompt_id"], theta)] = [
                _atom_from_record(a) for a in row["retained_atoms"]
            ]
    baselines: dict[tuple[str, str], list[Atom]] = {}
    baseline_path = run_dir / BASELINES_FILE
    if baseline_path.exists():
        for row in read_jsonl(baseline_path, required_keys=("prompt_id", "kind")):
            baselines[(row["prompt_id"], row["kind"])] = [
                _atom_from_record(a) for a in row["atoms"]
            ]
    return RunArtifacts(
        prompts=prompts,
        atoms_by_prompt=atoms_by_prompt,
        score_by_atom=score_by_atom,
        score_rows=score_rows,
        sequences=sequences,
        thetas=thetas,
        retained=retained,
        baselines=baselines,
        manifest=manifest,
    )


def claim_universe(artifacts: RunArtifacts, include_levels: bool = False) -> dict[str, Claim]:
    """Every distinct claim the evaluation needs, keyed by canonical string."""
    claims: dict[str, Claim] = {}

    def add(claim: Claim):
        claims.setdefault(normalize_claim(claim), claim)

    for atoms in artifacts.atoms_by_prompt.values():
        for atom in atoms:
            add(atom.claim)
    for atoms in artifacts.retained.values():
        for atom in atoms:
            add(atom.claim)
    for atoms in artifacts.baselines.values():
        for atom in atoms:
            add(atom.claim)
    if include_levels:
        for sequence in artifacts.sequences.values():
            for level in sequence.real_levels:
                add(level.statement)
    return claims


# --- labels ------------------------------------------------------------------------


def materialize_labels(
    run_dir: Path,
    config: RunConfig,
    claims: dict[str, Claim],
    offline: bool = False,
    use_agent: bool = False,
) -> LabelStore:
    """Ensure the run-local label store covers every claim, pulling from the
    configured provider for anything missing."""
    store = LabelStore(run_dir / LABELS_FILE)
    missing = [key for key in sorted(claims) if store.get(key) is None]
    if not missing:
        return store
    provider = config.providers.get("labels", "fixture")
    if provider == "fixture":
        fixture_path = config.providers.get("labels_path")
        if fixture_path:
            fixture = LabelStore(config.resolve(fixture_path))
            for key in missing:
                label = fixture.get(key)
                if label is not None:
                    store.put(key, label)
    elif provider == "agent" and use_agent:
        pipeline = build_pipeline(config, offline)
        wiki = build_wiki_client(config, offline)
        for key in missing:
            claim = claims[key]
            verdict = run_fact_agent(
                pipeline.backend,
                wiki,
                claim.sentence(),
                model=config.backend_cfg["model"],
                max_tool_calls=int(config.raw.get("agent_max_tool_calls", 12)),
            )
            store.put(key, verdict.as_correctness_label(key))
    still_missing = [key for key in sorted(claims) if store.get(key) is None]
    if still_missing:
        raise MissingLabelsError(still_missing)
    return store


# --- counting questions and counts ----------------------------------------------------


def materialize_questions(
    run_dir: Path, config: RunConfig, claims: dict[str, Claim], offline: bool
) -> dict[str, dict]:
    path = run_dir / QUESTIONS_FILE
    existing: dict[str, dict] = {}
    if path.exists():
        for row in read_jsonl(path, required_keys=("claim",)):
            existing[row["claim"]] = row
    todo = [key for key in sorted(claims) if key not in existing]
    if todo:
        pipeline = build_pipeline(config, offline)
        for key in todo:
            try:
                questions = generate_counting_questions(pipeline, claims[key])
                existing[key] = {
                    "schema_version": SCHEMA_VERSION,
                    "claim": key,
                    "broad": questions.broad,
                    "specific": questions.specific,
                    "category": questions.category,
                }
            except infomeasure.QuestionParseError as exc:
                logger.warning("counting questions failed for %r: %s", key, exc)
                existing[key] = {
                    "schema_version": SCHEMA_VERSION,
                    "claim": key,
                    "error": str(exc),
                }
        write_jsonl(path, [existing[key] for key in sorted(existing)])
    return existing


def materialize_counts(
    run_dir: Path, config: RunConfig, questions: dict[str, dict]
) -> dict[str, int]:
    path = run_dir / COUNTS_FILE
    counts: dict[str, int] = {}
    if path.exists():
        counts = dict(FixtureCounts.from_file(path).items())
    needed = set()
    for row in questions.values():
        if "error" in row:
            continue
        needed.add(normalize_question(row["broad"]))
        needed.add(normalize_question(row["specific"]))
    todo = sorted(q for q in needed if q not in counts)
    missing = []
    if todo:
        provider = build_counts_provider(config)
        for question in todo:
            try:
                counts[question] = provider.count(question)
            except MissingCountError:
                missing.append(question)
    if missing:
        raise MissingCountsError(missing)
    lines = "".join(f"{q}\t{c}\n" for q, c in sorted(counts.items()))
    (run_dir / COUNTS_FILE).write_text(lines, encoding="utf-8")
    return counts


def claim_information(
    questions: dict[str, dict], counts: dict[str, int], provider_name: str = "fixture"
) -> tuple[dict[str, float], list[str]]:
    """Per-claim information values; claims whose questions failed come back
    in the second list for the fallback policy."""
    info: dict[str, float] = {}
    failed: list[str] = []
    for key, row in sorted(questions.items()):
        if "error" in row:
            failed.append(key)
            continue
        total = counts[normalize_question(row["broad"])]
        matching = counts[normalize_question(row["specific"])]
        info[key] = information(EntityCounts(total, matching, provider_name))
    return info, failed


def _apply_fallback(
    claim_keys, info: dict[str, float], failed: set[str], policy: str
) -> dict[str, float]:
    """Resolve info for one response's claims under the fallback policy."""
    known = [info[k] for k in claim_keys if k in info]
    resolved = {}
    for key in claim_keys:
        if key in info:
            resolved[key] = info[key]
        elif key in failed:
            if policy == "median":
                resolved[key] = statistics.median(known) if known else 0.0
            elif policy == "zero":
                resolved[key] = 0.0
            elif policy == "one":
                resolved[key] = 1.0
            elif policy == "skip":
                continue
            else:
                raise infomeasure.InfoError(f"no information measure for claim {key!r}")
        else:
            raise infomeasure.InfoError(f"claim {key!r} missing from question artifacts")
    return resolved


# --- cmd evaluate ------------------------------------------------------------------


def _dedup_info(atoms, info_for) -> float:
    seen = {}
    for atom in atoms:
        key = normalize_claim(atom.claim)
        if key in info_for:
            seen[key] = info_for[key]
    return sum(seen.values())


def _count_correct(atoms, store: LabelStore) -> int:
    return sum(1 for atom in atoms if store.get(atom.claim) and store.get(atom.claim).supported)


def _check_labels(atoms, store: LabelStore, missing: set):
    for atom in atoms:
        if store.get(atom.claim) is None:
            missing.add(normalize_claim(atom.claim))


def cmd_evaluate(run_dir, config: RunConfig, offline: bool = False, macro: bool = False) -> dict:
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        return _evaluate(run_dir, config, offline=offline, macro=macro)


def _evaluate(run_dir: Path, config: RunConfig, offline: bool, macro: bool) -> dict:
    artifacts = load_run(run_dir)
    claims = claim_universe(artifacts)

    store = materialize_labels(run_dir, config, claims, offline=offline)
    questions = materialize_questions(run_dir, config, claims, offline)
    counts = materialize_counts(run_dir, config, questions)
    info, failed_list = claim_information(
        questions, counts, config.providers.get("counts", "fixture")
    )
    failed = set(failed_list)
    policy = config.info_fallback

    missing_labels: set[str] = set()
    for atoms in artifacts.atoms_by_prompt.values():
        _check_labels(atoms, store, missing_labels)
    for atoms in artifacts.retained.values():
        _check_labels(atoms, store, missing_labels)
    for atoms in artifacts.baselines.values():
        _check_labels(atoms, store, missing_labels)
    if missing_labels:
        raise MissingLabelsError(missing_labels)

    def info_sum(atoms) -> float:
        keys = {normalize_claim(a.claim) for a in atoms}
        resolved = _apply_fallback(sorted(keys), info, failed, policy)
        return sum(resolved.values())

    original_info = {
        prompt.id: info_sum(artifacts.atoms_by_prompt[prompt.id])
        for prompt in artifacts.prompts
    }

    # Atom-level abstraction sweep.
    sa_stats = []
    for theta in artifacts.thetas:
        for prompt in artifacts.prompts:
            retained = artifacts.retained.get((prompt.id, theta), [])
            sa_stats.append(
                analytics.SweepStat(
                    prompt_id=prompt.id,
                    theta=theta,
                    n_atoms=len(retained),
                    n_correct=_count_correct(retained, store),
                    info_retained=info_sum(retained) if retained else 0.0,
                    info_original=original_info[prompt.id],
                )
            )
    sa_curve = analytics.build_rc_curve(sa_stats, "atom_sa", macro=macro)

    # Deletion baseline over its own attainable grid.
    redaction_grid = sorted(
        {0.0}
        | {
            artifacts.score_by_atom[a.id]
            for atoms in artifacts.atoms_by_prompt.values()
            for a in atoms
        }
    )
    redaction_stats = []
    for theta in redaction_grid:
        for prompt in artifacts.prompts:
            atoms = artifacts.atoms_by_prompt[prompt.id]
            kept = [a for a in atoms if artifacts.score_by_atom[a.id] > theta]
            redaction_stats.append(
                analytics.SweepStat(
                    prompt_id=prompt.id,
                    theta=theta,
                    n_atoms=len(kept),
                    n_correct=_count_correct(kept, store),
                    info_retained=info_sum(kept) if kept else 0.0,
                    info_original=original_info[prompt.id],
                )
            )
    redaction_curve = analytics.build_rc_curve(redaction_stats, "redaction", macro=macro)

    aurc_values = {
        "atom_sa": analytics.aurc(sa_curve),
        "redaction": analytics.aurc(redaction_curve),
    }
    improvement_vs_redaction = analytics.improvement(
        aurc_values["redaction"], aurc_values["atom_sa"]
    )

    # Prompting baselines: one operating point each, compared at matched coverage.
    baseline_points = {}
    gaps = {}
    kinds = sorted({kind for (_, kind) in artifacts.baselines})
    for kind in kinds:
        n_atoms = 0
        n_correct = 0
        info_retained = 0.0
        info_total = 0.0
        for prompt in artifacts.prompts:
            atoms = artifacts.baselines.get((prompt.id, kind), [])
            n_atoms += len(atoms)
            n_correct += _count_correct(atoms, store)
            info_retained += info_sum(atoms) if atoms else 0.0
            info_total += original_info[prompt.id]
        if n_atoms == 0:
            continue
        point = analytics.RCPoint(
            theta=0.0,
            coverage=info_retained / info_total,
            risk=1.0 - n_correct / n_atoms,
            n_retained_atoms=n_atoms,
        )
        baseline_points[kind] = point
        try:
            gaps[kind] = analytics.matched_coverage_gap(sa_curve, point)
        except analytics.AnalyticsError as exc:
            gaps[kind] = None
            logger.warning("matched-coverage gap unavailable for %s: %s", kind, exc)

    # Ranking quality of the confidence functions present in the score rows.
    auroc_values = {}
    variants = {"verbal": "confidence", "log_likelihood": "kappa_ll", "p_true": "p_true"}
    atom_label = {}
    for atoms in artifacts.atoms_by_prompt.values():
        for atom in atoms:
            atom_label[atom.id] = store.get(atom.claim).supported
    for name, field_name in variants.items():
        correct = []
        incorrect = []
        for row in artifacts.score_rows:
            if field_name not in row or row[field_name] is None:
                continue
            (correct if atom_label[row["atom_id"]] else incorrect).append(row[field_name])
        if correct and incorrect:
            auroc_values[name] = analytics.auroc(correct, incorrect)

    # Artifacts.
    lines = ["method,theta,coverage,risk,n_retained"]
    for curve in (sa_curve, redaction_curve):
        for point in curve.points:
            lines.append(
                f"{curve.method},{format_number(point.theta)},{point.coverage!r},"
                f"{point.risk!r},{point.n_retained_atoms}"
            )
    for kind in sorted(baseline_points):
        point = baseline_points[kind]
        lines.append(f"{kind},,{point.coverage!r},{point.risk!r},{point.n_retained_atoms}")
    (run_dir / METRICS_FILE).write_text("\n".join(lines) + "\n", encoding="utf-8")

    svg = analytics.render_rc_svg(
        [sa_curve, redaction_curve],
        [(kind, baseline_points[kind]) for kind in sorted(baseline_points)],
        title="risk-coverage",
    )
    (run_dir / CURVES_FILE).write_text(svg, encoding="utf-8")

    summary = {
        "schema_version": SCHEMA_VERSION,
        "aurc": aurc_values,
        "improvement_vs_redaction_pct": {"atom_sa": improvement_vs_redaction},
        "baseline_points": {
            kind: {
                "coverage": point.coverage,
                "risk": point.risk,
                "n_atoms": point.n_retained_atoms,
            }
            for kind, point in sorted(baseline_points.items())
        },
        "matched_coverage_gap_pct": gaps,
        "auroc": auroc_values,
        "aggregation": "macro" if macro else "micro",
        "n_prompts": len(artifacts.prompts),
        "n_original_atoms": sum(len(v) for v in artifacts.atoms_by_prompt.values()),
        "info_fallback": {"policy": policy, "claims": sorted(failed)},
    }
    (run_dir / SUMMARY_FILE).write_text(
        json.dumps(summary, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )
    manifest = artifacts.manifest
    manifest["evaluation"] = {
        "metrics": METRICS_FILE,
        "summary": SUMMARY_FILE,
        "curves": CURVES_FILE,
    }
    save_manifest(run_dir, manifest)
    return summary


# --- cmd calibrate -----------------------------------------------------------------


def cmd_calibrate(
    run_dir,
    config: RunConfig,
    alpha: float,
    delta: float,
    split: float | None = None,
    seed: int | None = None,
    offline: bool = False,
) -> dict:
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        return _calibrate(run_dir, config, alpha, delta, split=split, seed=seed, offline=offline)


def _calibrate(
    run_dir: Path,
    config: RunConfig,
    alpha: float,
    delta: float,
    split: float | None,
    seed: int | None,
    offline: bool,
) -> dict:
    artifacts = load_run(run_dir)
    claims = claim_universe(artifacts, include_levels=True)
    store = materialize_labels(run_dir, config, claims, offline=offline)

    missing: set[str] = set()
    for sequence in artifacts.sequences.values():
        for level in sequence.real_levels:
            if store.get(level.statement) is None:
                missing.add(normalize_claim(level.statement))
    if missing:
        raise MissingLabelsError(missing)

    def record_for(atom: Atom) -> conformal.CalibrationRecord:
        sequence = artifacts.sequences[atom.id]
        labels = [store.get(lv.statement).label for lv in sequence.real_levels]
        theta_k = conformal.critical_threshold(
            sequence, [lab == "supported" for lab in labels]
        )
        return conformal.CalibrationRecord(atom.id, theta_k, tuple(labels))

    prompt_ids = [p.id for p in artifacts.prompts]
    if split is not None:
        if not 0.0 < split < 1.0:
            raise ConfigError("split fraction must lie in (0, 1)")
        rng = np.random.default_rng(config.seed if seed is None else seed)
        order = list(rng.permutation(sorted(prompt_ids)))
        n_calibration = max(1, round(split * len(order)))
        calibration_prompts = sorted(order[:n_calibration])
        heldout_prompts = sorted(order[n_calibration:])
    else:
        calibration_prompts = sorted(prompt_ids)
        heldout_prompts = []

    records = []
    for prompt_id in calibration_prompts:
        for atom in artifacts.atoms_by_prompt[prompt_id]:
            records.append(record_for(atom))
    result = conformal.calibrate_threshold(
        [r.theta_k for r in records], alpha, delta, max_value=TOP_CONFIDENCE
    )
    if result.degenerate:
        logger.warning(
            "alpha=%.4g below 1/(n+1)=%.4g: selecting full abstention",
            alpha,
            1.0 / (result.n + 1),
        )

    heldout = {}
    if heldout_prompts:
        exceed = 0
        total = 0
        for prompt_id in heldout_prompts:
            for atom in artifacts.atoms_by_prompt[prompt_id]:
                total += 1
                if record_for(atom).theta_k > result.theta_hat:
                    exceed += 1
        heldout = {
            "prompts": heldout_prompts,
            "n_atoms": total,
            "empirical_risk": (exceed / total) if total else None,
        }

    lines = "".join(
        f"{record.atom_id}\t{format_number(record.theta_k)}\n" for record in records
    )
    (run_dir / CALIBRATION_FILE).write_text(lines, encoding="utf-8")

    payload = {
        "alpha": alpha,
        "delta": delta,
        "n": result.n,
        "theta_hat": result.theta_hat,
        "epsilon": result.epsilon,
        "degenerate": result.degenerate,
        "calibration_prompts": calibration_prompts,
        "heldout": heldout,
        "file": CALIBRATION_FILE,
    }
    manifest = artifacts.manifest
    manifest["calibration"] = payload
    save_manifest(run_dir, manifest)
    return payload


# --- cmd simulate ------------------------------------------------------------------


def cmd_simulate(
    alphas, delta: float, n: int, trials: int, seed: int, m: int = 100
) -> str:
    lines = [
        f"threshold-selection simulation: n={n} m={m} trials={trials} "
        f"delta={format_number(delta)} seed={seed}",
        "alpha epsilon mean_risk std_risk frac_within",
    ]
    for alpha in alphas:
        report = conformal.monte_carlo_validate(
            alpha, delta, n, trials, m=m, seed=seed
        )
        eps = "-" if report.epsilon is None else f"{report.epsilon:.6f}"
        lines.append(
            f"{alpha:.3f} {eps} {report.mean_risk:.6f} {report.std_risk:.6f} "
            f"{report.frac_within_guarantee:.4f}"
        )
    return "\n".join(lines) + "\n"


# --- cmd fact-check / counts ----------------------------------------------------------


def cmd_fact_check(run_dir, config: RunConfig, offline: bool = False) -> LabelStore:
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        artifacts = load_run(run_dir)
        claims = claim_universe(artifacts, include_levels=True)
        return materialize_labels(run_dir, config, claims, offline=offline, use_agent=True)


def cmd_counts(run_dir, config: RunConfig, offline: bool = False) -> dict[str, int]:
    run_dir = Path(run_dir)
    with run_lock(run_dir):
        artifacts = load_run(run_dir)
        claims = claim_universe(artifacts)
        questions = materialize_questions(run_dir, config, claims, offline)
        return materialize_counts(run_dir, config, questions)
