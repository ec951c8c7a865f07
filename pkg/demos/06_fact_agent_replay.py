"""A recorded fact-checking session, replayed hermetically.

The agent drives four read-only tools against an encyclopedia transport;
here both the model replies and the API exchanges come from in-memory
recordings, so the loop runs without any network access. The same loop
works live via the HTTP chat backend plus HttpWikiTransport.
"""

import json

from absgate import MockBackend, WikiClient, run_fact_agent
from absgate.backend import messages_request
from absgate.factcheck import TOOL_PROTOCOL, FixtureWikiTransport, _run_tool
from absgate.templates import render_template

CLAIM = "Ada Lovelace wrote the first computer program"

transport = FixtureWikiTransport()
transport.add(
    {
        "action": "query",
        "list": "search",
        "srsearch": CLAIM,
        "srlimit": "5",
        "srprop": "snippet",
    },
    {
        "query": {
            "search": [
                {"title": "Ada Lovelace", "snippet": "Ada Lovelace ... first program"}
            ]
        }
    },
)
transport.add(
    {
        "action": "query",
        "prop": "extracts",
        "explaintext": "1",
        "redirects": "1",
        "titles": "Ada Lovelace",
    },
    {
        "query": {
            "pages": {
                "171": {
                    "title": "Ada Lovelace",
                    "extract": (
                        "Ada Lovelace was an English mathematician. "
                        "She is often regarded as the first computer programmer. "
                        "Her notes on the Analytical Engine include the first algorithm "
                        "intended to be carried out by a machine."
                    ),
                }
            }
        }
    },
)
wiki = WikiClient(transport)

replies = [
    json.dumps({"tool": "search_wikipedia", "args": {"query": CLAIM}}),
    json.dumps({"tool": "open_wikipedia_page", "args": {"title": "Ada Lovelace"}}),
    json.dumps({"tool": "rank_page_spans", "args": {"title": "Ada Lovelace", "query": CLAIM}}),
    json.dumps(
        {
            "label": "SUPPORTED",
            "rationale": "The page describes her notes as containing the first algorithm for a machine.",
            "evidence": [
                {
                    "title": "Ada Lovelace",
                    "url": "https://en.wikipedia.org/wiki/Ada_Lovelace",
                    "quote": "Her notes on the Analytical Engine include the first algorithm intended to be carried out by a machine.",
                }
            ],
        }
    ),
]

# Script the conversation turn by turn, mirroring the agent's message flow.
backend = MockBackend()
system = render_template("fact_agent_system", {}) + "\n\n" + TOOL_PROTOCOL
messages = [
    {"role": "system", "content": system},
    {"role": "user", "content": f"Claim: {CLAIM}"},
]
pages = {}
for reply in replies:
    backend.script(
        messages_request(messages, model="demo-model", temperature=0.0, max_tokens=1024),
        reply,
    )
    payload = json.loads(reply)
    if "tool" not in payload:
        break
    result = _run_tool(wiki, pages, payload["tool"], payload["args"])
    messages = messages + [
        {"role": "assistant", "content": reply},
        {
            "role": "user",
            "content": f"TOOL RESULT {payload['tool']}:\n"
            + json.dumps(result, sort_keys=True, ensure_ascii=False),
        },
    ]

verdict = run_fact_agent(backend, wiki, CLAIM, model="demo-model")

print(f"claim: {CLAIM}")
print("\ntool trace:")
for call in verdict.tool_trace:
    print(f"  {call.tool}({call.args_dict})")
print(f"\nverdict: {verdict.label}")
print(f"rationale: {verdict.rationale}")
for evidence in verdict.evidence:
    print(f"evidence: {evidence.title} - {evidence.quote[:80]}...")
