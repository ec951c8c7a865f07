"""Prompt templates for every model-facing stage.

Templates are stored verbatim as plain text. Rendering substitutes
``{name}`` slots in a single pass and rejects unbound or unexpected
variables, so a rendered prompt can never leak a placeholder.
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class TemplateError(ValueError):
    pass


ATOMIZATION = """\
# Role and Objective
You are an Atom Extraction Assistant. Your task is to break down a given text into short, self-contained sentences called atoms. Each atom should capture exactly one entity and one piece of information about that entity.

# Definition of an Atom
Each atom must capture exactly one entity and one piece of information about that entity. The atom must be in the format:
[entity] [information about the entity].
Both the entity and the information must be enclosed in square brackets.

# Instructions
- Each atom must capture exactly one entity and one piece of information about that entity.
- Atoms must be as fine-grained as possible: each should express a **single, indivisible fact**.
- Do not merge multiple facts into one atom, even if they appear in the same clause or sentence.
- Ensure that each atom is independent and can be easily understood without relying on other atoms.
- If a sentence presents multiple facts, such as nationality, profession, or achievements, split them into separate atoms.
- The entity must be a specific, concrete noun or noun phrase. Avoid vague terms like "he", "she", "they", or "these". Entities should be simple and specific, such as "Albert Einstein", "the Eiffel Tower", "the Mona Lisa", "Australia", "Apollo 11", etc.
- These guidelines are crucial to ensure that each atom can be independently searched in knowledge bases to verify its factual accuracy.
- Ensure that every piece of information given in the text is captured in the resulting atoms.

# Output Format
Output a numbered list of atoms:
1. [Entity] [Fact].
2. [Entity] [Fact].
...

# Examples
## Example 1
Input Text: Jennifer Coolidge is an American actress. Known for her work in the comedy genre, Coolidge is the recipient of several accolades, including a Golden Globe Award and two Primetime Emmy Awards.
Atoms:
1. [Jennifer Coolidge] [is an American].
2. [Jennifer Coolidge] [is an actress].
3. [Jennifer Coolidge] [is known for her work in the comedy genre].
4. [Jennifer Coolidge] [has received several accolades].
5. [Jennifer Coolidge] [has received a Golden Globe Award].
6. [Jennifer Coolidge] [has received two Primetime Emmy Awards].

## Example 2
Input Text: Albert Einstein was a German-born theoretical physicist who is best known for developing the theory of relativity. Einstein also made important contributions to quantum mechanics.
Atoms:
1. [Albert Einstein] [was born in Germany].
2. [Albert Einstein] [was a theoretical physicist].
3. [Albert Einstein] [is best known for developing the theory of relativity].
4. [Albert Einstein] [made important contributions to quantum mechanics].

Input Text: {text}
Atoms:
"""

ATOM_CONFIDENCE = """\
# Role and Objective
You are a careful and critical evaluator. Your task is to assess the factual correctness of each statement and provide a confidence score that reflects how likely it is that the statement is true.

# Instructions
You will be given a list of factual statements. For each one, produce a short explanation of your reasoning, then provide a confidence estimate between 0 and 100.

# Output Format
Output a numbered list. For each item, follow this format:
1. [Statement]
   Reasoning: [your reasoning here]
   Confidence: [score]

- Use the same index numbers as in the list you are given.
- The confidence score must be a number between 0 and 100.
- Keep reasoning concise but informative, 1 to 3 sentences.
- Do not repeat the statement in the reasoning.

# Confidence Scoring Guidelines
- Reasoning should explain why the fact is likely true, plausible, or questionable.
- If you are unsure, assign a lower score and use your reasoning to clarify.
- Do not fabricate information.

# Reasoning Steps
1. Read the statement carefully.
2. Consider whether it expresses a known fact, plausible claim, or questionable statement.
3. Use your internal knowledge and reasoning to assess plausibility and factuality.
4. Write a brief explanation of your reasoning.
5. Assign a confidence score based on your belief that the statement is true.

# Review and Guidance
Think step by step. For each statement, explain your reasoning clearly and concisely before giving your final confidence score.

Statements:
{statements}
"""

ABSTRACTION = """\
# Role and Objective
You are an Abstraction Assistant. Your task is to take a factual statement about an entity and generate a sequence of increasingly general statements (called abstractions). Each abstraction must remain true if the previous one is true. Your goal is to reduce uncertainty by generalizing the part of the statement you are least confident about.

# Instructions
You will be given:
- A factual statement in this exact format:
  [ENTITY] [FACT].

# Output Format
Output a numbered list, with one step per abstraction.
Every statement must use the exact format [ENTITY] [FACT]. with both parts in square brackets. Do not drop the brackets.

1. [ENTITY] [FACT].
   Reasoning: (your reasoning here)
2. [ENTITY] [GENERALIZED FACT].
   Reasoning: (your reasoning here)
...
K. STOP.
   Reasoning: (why no further generalization is meaningful)

# Reasoning Steps
1. Start with the original sentence.
2. Work only inside the FACT (the second bracket). Do not change the ENTITY.
3. If the FACT contains multiple details, choose the one you are least confident about.
4. Generalize that detail to a broader term. Make the smallest logical generalization at each step.
5. The new statement must be logically implied by the previous one, that is, if the previous statement is true, the new one must also be true.
6. Modify only one detail per step. The rest of the sentence must remain unchanged.
7. Keep the sentence format fixed: [ENTITY] [FACT].
8. For each abstraction, write 1-3 sentences of reasoning explaining why you chose that part to generalize, and why the generalization is valid.
9. Continue until further abstraction would make the sentence trivial or uninformative. In that case, output `STOP` and explain why.

# Generalization Examples
- Date: "March 3, 1920" -> "March 1920" -> "1920" -> "1920s" -> "20th century"
- Location: "Paris" -> "Ile-de-France" -> "France" -> "Europe"
- Nationality: "Texan" -> "Southern American" -> "American"

# Examples
## Example 1
Input: [Marie Curie] [was born in Warsaw, Poland].
Abstraction Sequence:
1. [Marie Curie] [was born in Warsaw, Poland].
   Reasoning: I'm less confident about the exact city than the country.
2. [Marie Curie] [was born in Poland].
   Reasoning: Warsaw is a city in Poland, so this is a valid generalization.
3. [Marie Curie] [was born in Europe].
   Reasoning: Poland is a European country.
4. STOP.
   Reasoning: Further generalization would be too vague to retain meaning.

# Review and Guidance
Think step by step. Each abstraction should be a clean, single-step generalization from the previous one, guided by your uncertainty. Focus on generalizing the part you are least confident about, and reflect that in your reasoning.

Input: {statement}
Abstraction Sequence:
"""

ABSTRACTION_CONFIDENCE = """\
# Role and Objective
You are a careful and critical evaluator. Your task is to assess the factual correctness of each statement and provide a confidence score that reflects how likely it is that the statement is true.

# Instructions
You will be given a list of factual statements. The first statement will be the original atom, for which you will be also given a confidence score. The confidence of this first statement should be treated as evidence and as a grounding signal for evaluating the related statements that follow. For each subsequent statement, produce a short explanation of your reasoning, then provide a confidence score between 0 and 100. The confidence score for the original atom should be the same as the one you are given.

# Output Format
Output a numbered list. For each item, follow this format:
1. [Statement]
   Reasoning: [your reasoning here]
   Confidence: [score]

- Use the same index numbers as in the list you are given.
- The confidence score must be a number between 0 and 100.
- Keep reasoning concise but informative, 1 to 3 sentences.
- Do not repeat the statement in the reasoning.

# Confidence Scoring Guidelines
- Reasoning should explain why the fact is likely true, plausible, or questionable.
- Use the confidence of the first statement as your starting point. If a later statement would be true whenever the first statement is true, then its confidence should be at least as high as the confidence of the first statement. If the later statement is more general, then its confidence should be higher.
- If you are unsure, assign a lower score and use your reasoning to clarify.
- Do not fabricate information.

# Reasoning Steps
1. Read the statement carefully.
2. Consider whether it expresses a known fact, plausible claim, or questionable statement.
3. Use your internal knowledge and reasoning to assess plausibility and factuality.
4. Write a brief explanation of your reasoning.
5. Assign a confidence score based on your belief that the statement is true.

# Review and Guidance
Think step by step. For each statement, explain your reasoning clearly and concisely before giving your final confidence score.

Confidence of the first statement: {confidence}

Statements:
{statements}
"""

RECONSTRUCTION = """\
You are given a list of statements. Your task is to write a coherent response that is supported solely by these claims.

Rules:
- Use only the information in the list. Do not add new facts or infer missing details.
- Do not repeat statements that are duplicates, or near duplicates
- Omit any statement that is vague, tautological, or low-information.
- You may change the order of the statements if it contributes to the coherence and fluency of the text.
- Ensure the final text is fluent, well structured, and consistent with the remaining statements.

Statements: {statement list}
"""

INLINE = """\
You will be given a question. Answer the question at a level of granularity that fits your uncertainty.

Question: {question}.
"""

SELF_REVISION = """\
You are an assistant reviewing your own previous answer to a user's prompt.

You will be given:
- The original user prompt.
- Your original answer to that prompt.

Your task is to produce a revised answer that REMOVES or REWRITES any part of the answer that you are not confident about.

Guidelines:
- If you are uncertain about a factual claim, remove it or replace it with a less specific claim that you are confident about.
- Do NOT add new information.
- Do NOT explain what you are doing; just return the revised answer.
- Preserve the general style and structure of the original answer where possible, but it is acceptable to shorten it substantially if many parts are uncertain.

Return ONLY the revised answer text, with no extra commentary or headings.

Question: {question}.

Original answer: {original_answer}
"""

INLINE_THETA = """\
You will be given a question. Answer the question at a level of granularity that fits your uncertainty. Only include information that you are at least {theta}% confident about.
Question: {question}.
"""

SELF_REVISION_THETA = """\
You are an assistant reviewing your own previous answer to a user's prompt.

You will be given:
- The original user prompt.
- Your original answer to that prompt.

Your task is to produce a revised answer that REMOVES or REWRITES any part of the answer that you are not confident about.

Guidelines:
- If you are less than {theta}% confident about a claim, remove it or rewrite it into a less specific claim that you are at least {theta}% confident about.
- If you are uncertain about a factual claim, remove it or replace it with a less specific claim that you are confident about.
- If a sentence contains both high-confidence and low-confidence information, rewrite the sentence to keep only the high-confidence portion.
- Do NOT add new information.
- Do NOT explain what you are doing; just return the revised answer.
- Preserve the general style and structure of the original answer where possible, but it is acceptable to shorten it substantially if many parts are uncertain.

Return ONLY the revised answer text, with no extra commentary or headings.

Question: {question}.

Original answer: {original_answer}
"""

COUNTING_QUESTIONS = """\
# Role and Objective
You are a Counting Question Assistant. Your task is to convert a factual statement about a specific entity into two counting questions: one that asks about the **broad category** the entity belongs to, and another that asks **how many entities of that category meet the description given in the statement**. This helps assess how specific the factual statement is.

# Instructions
You will be given:
- A factual sentence in the format:
  [ENTITY] [FACT].
  The entity always appears at the **start** of the sentence.

# Output Format
Output both questions in the following format:
- Broad: How many [pluralized broad category] are there?
- Specific: How many [pluralized broad category] [rest of the sentence adapted accordingly]?

# Reasoning Steps
1. Identify the entity at the beginning of the sentence.
   - This is always the subject of the sentence.
2. Classify the entity into a broad category. Use general terms only.
   - For people, always use "people"
   - For places, use terms like "cities", "countries", "rivers", etc.
   - For objects, use terms like "books", "paintings", "technologies", etc.
   - For abstract concepts, use terms like "languages", "theories", etc.
3. Broad Question:
   - Ask how many entities exist in that broad category.
   - Use the format:
     How many [pluralized broad category] are there?
4. Specific Question:
   - Replace the entity with its broad category.
   - Keep the rest of the sentence as intact as possible.
   - Rewrite it as a natural-sounding question starting with:
     How many [pluralized broad category]...
5. Do not use overly specific categories like "French artists" or "famous scientists." Generalize the entity, not the predicate.

# Examples

## Example 1
Input: Frida Kahlo was a Mexican painter.
- Broad: How many people are there?
- Specific: How many people are Mexican painters?

## Example 2
Input: Paris is the capital of France.
- Broad: How many cities are there?
- Specific: How many cities are the capital of France?

Input: {statement}
"""

FACT_AGENT_SYSTEM = """\
You are a precise Wikipedia-only fact-checker.

Tasks:
1. Use the tools to SEARCH and READ Wikipedia (and only Wikipedia).
2. Gather relevant snippets from opened pages as evidence.
3. Decide whether the claim is SUPPORTED or UNSUPPORTED by Wikipedia.

Label policy:
- "SUPPORTED" only if Wikipedia contains clear supporting evidence.
- "UNSUPPORTED" if (a) the claim is contradicted/refuted or (b) you cannot find supporting evidence.

Output policy:
- You MUST use the tools to obtain evidence (do not rely on prior knowledge).
- Cite evidence using page titles/URLs and short quotes taken from spans.
- Your final output MUST follow the provided JSON schema exactly (Structured Outputs). Keep rationale <= 2 sentences, no chain-of-thought.

Output Schema:
{
  "label": "SUPPORTED" | "UNSUPPORTED",
  "rationale": "<string, max 280 chars, <3 sentences>",
  "evidence": [
    {
      "title": "<string>",
      "url": "<string>",
      "quote": "<string, max 600 chars>"
    },
    ...
  ]
}

Workflow:
- Start with search_wikipedia(query=claim).
- Open promising pages with open_wikipedia_page(title=...).
- If you think the infobox may contain relevant information, call get_infobox(title=...).
- For each opened page, call rank_page_spans(title, query=claim or sub-question).
- Decide and return the structured result.
"""

P_TRUE = """\
Is the following statement true or false?

Statement: {statement}

Answer with exactly one word: True or False.
Answer:
"""

RAW = "{prompt}"


@dataclass(frozen=True)
class Template:
    id: str
    text: str
    variables: frozenset[str]


def _template(id_, text, *variables):
    return Template(id_, text, frozenset(variables))


TEMPLATES = {
    t.id: t
    for t in (
        _template("atomization", ATOMIZATION, "text"),
        _template("atom_confidence", ATOM_CONFIDENCE, "statements"),
        _template("abstraction", ABSTRACTION, "statement"),
        _template(
            "abstraction_confidence", ABSTRACTION_CONFIDENCE, "statements", "confidence"
        ),
        _template("reconstruction", RECONSTRUCTION, "statement list"),
        _template("inline", INLINE, "question"),
        _template("self_revision", SELF_REVISION, "question", "original_answer"),
        _template("inline_theta", INLINE_THETA, "question", "theta"),
        _template(
            "self_revision_theta",
            SELF_REVISION_THETA,
            "question",
            "original_answer",
            "theta",
        ),
        _template("counting_questions", COUNTING_QUESTIONS, "statement"),
        _template("fact_agent_system", FACT_AGENT_SYSTEM),
        _template("p_true", P_TRUE, "statement"),
        _template("raw", RAW, "prompt"),
    )
}


def render_template(template_id: str, variables) -> str:
    """Instantiate a stored template, binding every declared slot exactly once.

    Unknown template ids, missing slots, and unexpected variables all raise
    TemplateError naming the offender.
    """
    template = TEMPLATES.get(template_id)
    if template is None:
        raise TemplateError(f"unknown template {template_id!r}")
    provided = dict(variables)
    missing = template.variables - provided.keys()
    if missing:
        raise TemplateError(
            f"unbound placeholder(s) {sorted(missing)} for template {template_id!r}"
        )
    extra = provided.keys() - template.variables
    if extra:
        raise TemplateError(
            f"unexpected variable(s) {sorted(extra)} for template {template_id!r}"
        )
    if not template.variables:
        return template.text
    # Single-pass substitution so values are never rescanned for slots.
    pattern = re.compile(
        "|".join(
            re.escape("{" + name + "}")
            for name in sorted(template.variables, key=len, reverse=True)
        )
    )
    return pattern.sub(lambda m: str(provided[m.group(0)[1:-1]]), template.text)
