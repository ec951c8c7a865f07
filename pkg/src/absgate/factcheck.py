"""Correctness evaluation of atomic claims.

Labels come either from a persistent store keyed by canonical claim
strings, or from an agent that searches and reads Wikipedia through a
small tool set and returns a schema-validated verdict. Replay transports
make agent runs hermetic.
"""

from __future__ import annotations

import hashlib
import html
import json
import logging
import re
import urllib.parse
from dataclasses import dataclass, field
from pathlib import Path
from threading import Lock

import jsonschema
import requests

from .backend import messages_request
from .domain import CorrectnessLabel, Evidence, normalize_claim
from .templates import render_template

logger = logging.getLogger(__name__)

WIKIPEDIA_API = "https://en.wikipedia.org/w/api.php"


class FactcheckError(Exception):
    pass


class WikiTransportError(FactcheckError):
    retriable = True


class PageNotFoundError(FactcheckError):
    pass


class WikiFixtureMissError(FactcheckError):
    pass


class AgentSchemaError(FactcheckError):
    pass


class MissingLabelsError(FactcheckError):
    def __init__(self, claims):
        self.claims = sorted(claims)
        preview = ", ".join(self.claims[:5])
        more = f" (+{len(self.claims) - 5} more)" if len(self.claims) > 5 else ""
        super().__init__(f"labels missing for {len(self.claims)} claim(s): {preview}{more}")


# --- wiki transports ---------------------------------------------------------


def wiki_request_digest(params: dict) -> str:
    canonical = json.dumps(
        {k: str(v) for k, v in params.items()},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class HttpWikiTransport:
    online = True

    def __init__(self, endpoint: str = WIKIPEDIA_API, session=None, timeout: float = 30.0):
        self.endpoint = endpoint
        self._session = session if session is not None else requests.Session()
        self.timeout = timeout

    def get(self, params: dict) -> dict:
        query = dict(params)
        query["format"] = "json"
        try:
            resp = self._session.get(
                self.endpoint,
                params=query,
                headers={"User-Agent": "absgate/0.1 (fact checking)"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise WikiTransportError(str(exc)) from exc
        if not 200 <= resp.status_code < 300:
            raise WikiTransportError(f"status {resp.status_code}")
        try:
            return resp.json()
        except ValueError as exc:
            raise WikiTransportError(f"non-JSON payload: {exc}") from exc


class FixtureWikiTransport:
    """Hermetic replay of recorded API exchanges; never touches the network."""

    online = False

    def __init__(self, mapping: dict | None = None, directory=None):
        self._mapping = dict(mapping or {})
        self._directory = Path(directory) if directory else None

    def add(self, params: dict, payload: dict):
        self._mapping[wiki_request_digest(params)] = payload

    def get(self, params: dict) -> dict:
        digest = wiki_request_digest(params)
        if digest in self._mapping:
            return self._mapping[digest]
        if self._directory is not None:
            path = self._directory / f"{digest}.json"
            if path.exists():
                return json.loads(path.read_text(encoding="utf-8"))
        raise WikiFixtureMissError(f"no recorded exchange for request {dict(params)!r}")


class RecordingWikiTransport:
    """Pass-through transport that persists every exchange for later replay."""

    def __init__(self, inner, directory):
        self.inner = inner
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    @property
    def online(self):
        return self.inner.online

    def get(self, params: dict) -> dict:
        payload = self.inner.get(params)
        path = self.directory / f"{wiki_request_digest(params)}.json"
        path.write_text(
            json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8"
        )
        return payload


# --- wiki client --------------------------------------------------------------


@dataclass(frozen=True)
class WikiPage:
    title: str
    url: str
    plain_text: str
    infobox: dict = field(default_factory=dict)


def page_url(title: str) -> str:
    return "https://en.wikipedia.org/wiki/" + urllib.parse.quote(title.replace(" ", "_"))


_TAG_RE = re.compile(r"<[^>]+>")


def _strip_html(snippet: str) -> str:
    return html.unescape(_TAG_RE.sub("", snippet))


class WikiClient:
    def __init__(self, transport, search_limit: int = 5):
        self.transport = transport
        self.search_limit = search_limit

    @property
    def online(self) -> bool:
        return self.transport.online

    def search(self, query: str) -> list[tuple[str, str]]:
        if not query.strip():
            raise FactcheckError("empty search query")
        data = self.transport.get(
            {
                "action": "query",
                "list": "search",
                "srsearch": query,
                "srlimit": str(self.search_limit),
                "srprop": "snippet",
            }
        )
        results = data.get("query", {}).get("search", [])
        return [(r["title"], _strip_html(r.get("snippet", ""))) for r in results]

    def page(self, title: str) -> WikiPage:
        data = self.transport.get(
            {
                "action": "query",
                "prop": "extracts",
                "explaintext": "1",
                "redirects": "1",
                "titles": title,
            }
        )
        pages = data.get("query", {}).get("pages", {})
        for page_id, page in pages.items():
            if page_id == "-1" or "missing" in page:
                raise PageNotFoundError(f"no page titled {title!r}")
            return WikiPage(
                title=page.get("title", title),
                url=page_url(page.get("title", title)),
                plain_text=page.get("extract", ""),
            )
        raise PageNotFoundError(f"no page titled {title!r}")

    def infobox(self, title: str) -> dict:
        data = self.transport.get(
            {
                "action": "query",
                "prop": "revisions",
                "rvprop": "content",
                "rvslots": "main",
                "redirects": "1",
                "titles": title,
            }
        )
        pages = data.get("query", {}).get("pages", {})
        for page_id, page in pages.items():
            if page_id == "-1" or "missing" in page:
                raise PageNotFoundError(f"no page titled {title!r}")
            revisions = page.get("revisions") or []
            if not revisions:
                return {}
            content = revisions[0].get("slots", {}).get("main", {}).get("*", "")
            if not content:
                content = revisions[0].get("*", "")
            return parse_infobox(content)
        raise PageNotFoundError(f"no page titled {title!r}")


_REF_RE = re.compile(r"<ref[^>]*/>|<ref[^>]*>.*?</ref>", re.S)
_LINK_RE = re.compile(r"\[\[(?:[^\]|]*\|)?([^\]|]*)\]\]")


def _strip_wiki_markup(value: str) -> str:
    value = _REF_RE.sub("", value)
    value = _LINK_RE.sub(r"\1", value)
    # drop nested templates entirely
    while True:
        cleaned = re.sub(r"\{\{[^{}]*\}\}", "", value)
        if cleaned == value:
            break
        value = cleaned
    value = value.replace("'''", "").replace("''", "")
    return re.sub(r"\s+", " ", value).strip()


def parse_infobox(wikitext: str) -> dict:
    """Extract top-level key=value parameters of the first infobox template."""
    match = re.search(r"\{\{\s*Infobox", wikitext, re.I)
    if not match:
        return {}
    depth = 0
    start = match.start()
    end = None
    i = start
    while i < len(wikitext) - 1:
        pair = wikitext[i : i + 2]
        if pair == "{{":
            depth += 1
            i += 2
            continue
        if pair == "}}":
            depth -= 1
            i += 2
            if depth == 0:
                end = i
                break
            continue
        i += 1
    if end is None:
        return {}
    body = wikitext[start + 2 : end - 2]
    parts = []
    depth = 0
    current = []
    j = 0
    while j < len(body):
        pair = body[j : j + 2]
        if pair in ("{{", "[["):
            depth += 1
            current.append(pair)
            j += 2
            continue
        if pair in ("}}", "]]"):
            depth -= 1
            current.append(pair)
            j += 2
            continue
        if body[j] == "|" and depth == 0:
            parts.append("".join(current))
            current = []
            j += 1
            continue
        current.append(body[j])
        j += 1
    parts.append("".join(current))
    result = {}
    for part in parts[1:]:  # parts[0] is the template name
        if "=" not in part:
            continue
        key, _, raw_value = part.partition("=")
        key = key.strip()
        value = _strip_wiki_markup(raw_value)
        if key and value:
            result[key] = value
    return result


# --- span ranking ---------------------------------------------------------------

STOPWORDS = frozenset(
    """a an and are as at be by for from had has have he her his in is it its of on
    or she that the their they this to was were which who with""".split()
)

_SPAN_SPLIT_RE = re.compile(r"(?<=[.!?])\s+|\n+")
_TOKEN_RE = re.compile(r"[a-z0-9']+")


def _tokens(text: str) -> set[str]:
    return {t for t in _TOKEN_RE.findall(text.lower()) if t not in STOPWORDS}


def rank_page_spans(page: WikiPage, query: str, top_k: int = 8):
    """Sentence spans of a page ranked by token overlap with the query.

    Score is |span tokens ∩ query tokens| / |query tokens| after stopword
    removal; ties keep document order.
    """
    spans = [s.strip() for s in _SPAN_SPLIT_RE.split(page.plain_text) if s.strip()]
    query_tokens = _tokens(query)
    if not query_tokens:
        return [(span, 0.0) for span in spans[:top_k]]
    scored = [
        (span, len(_tokens(span) & query_tokens) / len(query_tokens)) for span in spans
    ]
    scored.sort(key=lambda pair: -pair[1])
    return scored[:top_k]


# --- the fact agent ----------------------------------------------------------------

VERDICT_SCHEMA = {
    "type": "object",
    "properties": {
        "label": {"enum": ["SUPPORTED", "UNSUPPORTED"]},
        "rationale": {"type": "string", "maxLength": 280},
        "evidence": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "title": {"type": "string"},
                    "url": {"type": "string"},
                    "quote": {"type": "string", "maxLength": 600},
                },
                "required": ["title", "url", "quote"],
                "additionalProperties": False,
            },
        },
    },
    "required": ["label", "rationale", "evidence"],
    "additionalProperties": False,
}

TOOL_PROTOCOL = """\
You interact with tools by replying with a single JSON object and nothing else.
To call a tool, reply: {"tool": "<tool name>", "args": {...}}
Available tools:
- search_wikipedia: args {"query": "<string>"}
- open_wikipedia_page: args {"title": "<string>"}
- get_infobox: args {"title": "<string>"}
- rank_page_spans: args {"title": "<string>", "query": "<string>"}
Tool results arrive in the next user message.
When you are ready to decide, reply with the final JSON object matching the output schema."""

_REPAIR_INSTRUCTION = (
    "Your last reply was not a valid tool call or a valid final answer. Reply with "
    "exactly one JSON object: either a tool call or the final answer matching the "
    "output schema."
)

_FORCED_FINAL = (
    "You have used all available tool calls. Provide your final answer now as a "
    "single JSON object matching the output schema."
)


@dataclass(frozen=True)
class ToolCall:
    tool: str
    args: tuple[tuple[str, str], ...]

    @property
    def args_dict(self) -> dict:
        return dict(self.args)


@dataclass(frozen=True)
class AgentVerdict:
    label: str
    rationale: str
    evidence: tuple[Evidence, ...]
    tool_trace: tuple[ToolCall, ...] = ()

    def as_correctness_label(self, claim_key: str) -> CorrectnessLabel:
        return CorrectnessLabel(
            target=claim_key,
            label=self.label,
            rationale=self.rationale,
            evidence=self.evidence,
        )


def _extract_json(text: str):
    """First balanced JSON object embedded in free text, or None."""
    start = text.find("{")
    while start != -1:
        depth = 0
        in_string = False
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == '"':
                    in_string = False
                continue
            if ch == '"':
                in_string = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start : i + 1])
                    except json.JSONDecodeError:
                        break
        start = text.find("{", start + 1)
    return None


def _run_tool(wiki: WikiClient, pages: dict, name: str, args: dict):
    if name == "search_wikipedia":
        results = wiki.search(args["query"])
        return {"results": [{"title": t, "snippet": s} for t, s in results]}
    if name == "open_wikipedia_page":
        page = wiki.page(args["title"])
        pages[page.title] = page
        pages[args["title"]] = page
        text = page.plain_text
        truncated = len(text) > 6000
        return {
            "title": page.title,
            "url": page.url,
            "text": text[:6000],
            "truncated": truncated,
        }
    if name == "get_infobox":
        return {"infobox": wiki.infobox(args["title"])}
    if name == "rank_page_spans":
        title = args["title"]
        page = pages.get(title)
        if page is None:
            page = wiki.page(title)
            pages[title] = page
        ranked = rank_page_spans(page, args["query"])
        return {"spans": [{"text": t, "score": round(s, 4)} for t, s in ranked]}
    raise FactcheckError(f"unknown tool {name!r}")


def run_fact_agent(
    backend,
    wiki: WikiClient,
    claim: str,
    *,
    model: str,
    temperature: float = 0.0,
    max_tokens: int = 1024,
    max_tool_calls: int = 12,
) -> AgentVerdict:
    """Tool loop deciding whether one claim is supported by Wikipedia.

    The model drives search/open/infobox/rank tools via JSON replies and
    must finish with a verdict matching VERDICT_SCHEMA; one repair round is
    allowed for malformed replies, and an exhausted tool budget forces a
    final answer request. Absence of supporting evidence yields
    ``unsupported``, same as refutation.
    """
    system = render_template("fact_agent_system", {}) + "\n\n" + TOOL_PROTOCOL
    messages = [
        {"role": "system", "content": system},
        {"role": "user", "content": f"Claim: {claim}"},
    ]
    trace: list[ToolCall] = []
    pages: dict[str, WikiPage] = {}
    repairs = 0
    forced = False

    for _ in range(max_tool_calls + 4):
        reply = backend.complete(
            messages_request(
                messages, model=model, temperature=temperature, max_tokens=max_tokens
            )
        )
        payload = _extract_json(reply.text)
        is_tool = isinstance(payload, dict) and "tool" in payload
        is_final = isinstance(payload, dict) and "label" in payload
        if not (is_tool or is_final):
            if repairs >= 1:
                raise AgentSchemaError(f"unusable agent reply for claim {claim!r}")
            repairs += 1
            messages = messages + [
                {"role": "assistant", "content": reply.text},
                {"role": "user", "content": _REPAIR_INSTRUCTION},
            ]
            continue
        if is_tool:
            if forced or len(trace) >= max_tool_calls:
                forced = True
                messages = messages + [
                    {"role": "assistant", "content": reply.text},
                    {"role": "user", "content": _FORCED_FINAL},
                ]
                continue
            name = str(payload.get("tool"))
            args = {str(k): str(v) for k, v in (payload.get("args") or {}).items()}
            try:
                result = _run_tool(wiki, pages, name, args)
            except (PageNotFoundError, FactcheckError) as exc:
                if isinstance(exc, (WikiFixtureMissError, WikiTransportError)):
                    raise
                result = {"error": str(exc)}
            trace.append(ToolCall(name, tuple(sorted(args.items()))))
            messages = messages + [
                {"role": "assistant", "content": reply.text},
                {
                    "role": "user",
                    "content": f"TOOL RESULT {name}:\n"
                    + json.dumps(result, sort_keys=True, ensure_ascii=False),
                },
            ]
            continue
        try:
            jsonschema.validate(payload, VERDICT_SCHEMA)
        except jsonschema.ValidationError as exc:
            if repairs >= 1:
                raise AgentSchemaError(
                    f"verdict violates schema for claim {claim!r}: {exc.message}"
                ) from exc
            repairs += 1
            messages = messages + [
                {"role": "assistant", "content": reply.text},
                {"role": "user", "content": _REPAIR_INSTRUCTION},
            ]
            continue
        return AgentVerdict(
            label=payload["label"].lower(),
            rationale=payload["rationale"],
            evidence=tuple(
                Evidence(e["title"], e["url"], e["quote"]) for e in payload["evidence"]
            ),
            tool_trace=tuple(trace),
        )
    raise AgentSchemaError(f"agent never produced a final verdict for claim {claim!r}")


# --- risk ------------------------------------------------------------------------


@dataclass(frozen=True)
class RiskReport:
    response_id: str
    n_atoms: int
    n_correct: int
    risk: float

    def __post_init__(self):
        if self.n_atoms < 1:
            raise FactcheckError("risk is undefined for an empty atom set")
        expected = 1.0 - self.n_correct / self.n_atoms
        if abs(self.risk - expected) > 1e-12:
            raise FactcheckError("inconsistent risk report")


def risk(atoms, labels) -> RiskReport:
    """Fraction of a response's atoms labeled unsupported.

    ``labels`` maps canonical claim strings to CorrectnessLabel (or
    anything with a ``get``); every atom must be covered.
    """
    atoms = list(atoms)
    if not atoms:
        raise FactcheckError("risk is undefined for an empty atom set")
    missing = []
    n_correct = 0
    for atom in atoms:
        key = normalize_claim(atom.claim)
        label = labels.get(key)
        if label is None:
            missing.append(key)
            continue
        if label.supported if isinstance(label, CorrectnessLabel) else label == "supported":
            n_correct += 1
    if missing:
        raise MissingLabelsError(missing)
    n = len(atoms)
    return RiskReport(
        response_id=atoms[0].response_id,
        n_atoms=n,
        n_correct=n_correct,
        risk=1.0 - n_correct / n,
    )


def risk_from_flags(response_id: str, supported_flags) -> RiskReport:
    flags = list(supported_flags)
    if not flags:
        raise FactcheckError("risk is undefined for an empty atom set")
    n_correct = sum(1 for f in flags if f)
    return RiskReport(response_id, len(flags), n_correct, 1.0 - n_correct / len(flags))


# --- label store --------------------------------------------------------------------


class LabelStore:
    """Append-only store of correctness labels keyed by canonical claim.

    Single writer, any number of readers; each ``put`` is flushed to the
    backing JSONL file immediately when one is configured.
    """

    def __init__(self, path=None):
        self._path = Path(path) if path else None
        self._labels: dict[str, CorrectnessLabel] = {}
        self._lock = Lock()
        if self._path and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._labels[record["claim"]] = CorrectnessLabel(
                    target=record["claim"],
                    label=record["label"],
                    rationale=record.get("rationale", ""),
                    evidence=tuple(
                        Evidence(e["title"], e["url"], e.get("quote", ""))
                        for e in record.get("evidence", [])
                    ),
                )

    def __len__(self):
        return len(self._labels)

    def __contains__(self, claim) -> bool:
        return normalize_claim(claim) in self._labels

    def get(self, claim):
        return self._labels.get(normalize_claim(claim))

    def keys(self):
        return sorted(self._labels)

    def put(self, claim, label: CorrectnessLabel):
        key = normalize_claim(claim)
        with self._lock:
            self._labels[key] = label
            if self._path:
                record = {
                    "schema_version": 1,
                    "claim": key,
                    "label": label.label,
                    "rationale": label.rationale,
                    "evidence": [
                        {"title": e.title, "url": e.url, "quote": e.quote}
                        for e in label.evidence
                    ],
                }
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
