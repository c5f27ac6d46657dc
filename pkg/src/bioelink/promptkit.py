"""Prompt rendering for the re-ranking task.

Templates are data, not code: a JSON file carries the instruction text, an
optional output-format section and optional worked examples. The instruction
text embeds a query block via the placeholders ``{mention}``, ``{candidates}``
and (optionally) ``{context}``; rendering splits the text at the first
placeholder line so that the output-format section and the worked examples sit
between the task statement and the final query block.

Teacher templates may carry the output format and examples; student templates
carry neither and render to a strictly shorter prompt over the same candidate
labels.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import KnowledgeBase, Mention
from .errors import FormatError, ValidationError
from .retriever import CandidateSet

TEMPLATE_KINDS = ("teacher", "student")


@dataclass
class FewShotExample:
    mention: str
    candidates: list[str]
    ranking: list[str]
    context: str | None = None


@dataclass
class PromptTemplate:
    kind: str
    instruction_text: str
    output_format_text: str | None = None
    examples: list[FewShotExample] = field(default_factory=list)

    def validate(self) -> None:
        if self.kind not in TEMPLATE_KINDS:
            raise ValidationError(f"template kind must be one of {TEMPLATE_KINDS}, got {self.kind!r}")
        for placeholder in ("{mention}", "{candidates}"):
            count = self.instruction_text.count(placeholder)
            if count != 1:
                raise ValidationError(f"placeholder {placeholder} must occur exactly once, found {count}")
        if self.instruction_text.count("{context}") > 1:
            raise ValidationError("placeholder {context} may occur at most once")
        if self.kind == "student":
            if self.output_format_text:
                raise ValidationError("student templates must not carry an output-format section")
            if self.examples:
                raise ValidationError("student templates must not carry examples")
        for i, ex in enumerate(self.examples):
            if sorted(ex.ranking) != sorted(ex.candidates):
                raise ValidationError(f"example {i}: ranking is not a permutation of its candidates")


@dataclass
class RenderedPrompt:
    text: str
    candidate_labels: list[str]


def load_template(path) -> PromptTemplate:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read template {path}: {exc}") from exc
    try:
        examples = [
            FewShotExample(
                mention=ex["mention"],
                candidates=list(ex["candidates"]),
                ranking=list(ex["ranking"]),
                context=ex.get("context"),
            )
            for ex in raw.get("examples", [])
        ]
        template = PromptTemplate(
            kind=raw["kind"],
            instruction_text=raw["instruction_text"],
            output_format_text=raw.get("output_format_text"),
            examples=examples,
        )
    except KeyError as exc:
        raise FormatError(f"template {path} missing key {exc}") from exc
    template.validate()
    return template


def template_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def candidate_labels(candidate_set: CandidateSet, kb: KnowledgeBase) -> list[str]:
    """Candidate display names in retrieval order. Entities sharing a name are
    disambiguated by appending " (id)" so labels are always distinct."""
    if not candidate_set.candidates:
        raise ValidationError("candidate set is empty")
    names = [kb.get(eid).name for eid in candidate_set.entity_ids]
    dupes = {n for n in names if names.count(n) > 1}
    return [
        f"{name} ({eid})" if name in dupes else name
        for name, eid in zip(names, candidate_set.entity_ids)
    ]


def numbered(labels: list[str]) -> str:
    return "\n".join(f"{i}. {label}" for i, label in enumerate(labels, start=1))


_PLACEHOLDERS = ("{mention}", "{candidates}", "{context}")


def _split_instruction(instruction_text: str) -> tuple[str, str]:
    lines = instruction_text.split("\n")
    for i, line in enumerate(lines):
        if any(p in line for p in _PLACEHOLDERS):
            return "\n".join(lines[:i]).rstrip(), "\n".join(lines[i:])
    raise ValidationError("instruction text has no placeholder line")


def _fill_query(query_tpl: str, mention_text: str, context: str | None, candidate_block: str) -> str:
    out_lines = []
    for line in query_tpl.split("\n"):
        if "{context}" in line:
            if context is None or context == "":
                continue  # drop the whole line rather than render it empty
            line = line.replace("{context}", context)
        line = line.replace("{mention}", mention_text).replace("{candidates}", candidate_block)
        out_lines.append(line)
    return "\n".join(out_lines)


def _render(template: PromptTemplate, mention: Mention, candidate_set: CandidateSet, kb: KnowledgeBase, with_extras: bool) -> RenderedPrompt:
    template.validate()
    labels = candidate_labels(candidate_set, kb)
    head, query_tpl = _split_instruction(template.instruction_text)

    sections = [head] if head else []
    if with_extras and template.output_format_text:
        sections.append(template.output_format_text.rstrip())
    if with_extras:
        for ex in template.examples:
            block = _fill_query(query_tpl, ex.mention, ex.context, numbered(ex.candidates))
            sections.append(block.rstrip() + "\n" + numbered(ex.ranking))
    sections.append(_fill_query(query_tpl, mention.surface, mention.context, numbered(labels)))
    return RenderedPrompt(text="\n\n".join(sections), candidate_labels=labels)


def render_teacher(template: PromptTemplate, mention: Mention, candidate_set: CandidateSet, kb: KnowledgeBase) -> RenderedPrompt:
    if template.kind != "teacher":
        raise ValidationError(f"expected a teacher template, got kind {template.kind!r}")
    return _render(template, mention, candidate_set, kb, with_extras=True)


def render_student(template: PromptTemplate, mention: Mention, candidate_set: CandidateSet, kb: KnowledgeBase) -> RenderedPrompt:
    if template.kind != "student":
        raise ValidationError(f"expected a student template, got kind {template.kind!r}")
    return _render(template, mention, candidate_set, kb, with_extras=False)


_NUMBERED_LINE = re.compile(r"^\s*\d+[.)]\s+(.*\S)\s*$")


def extract_numbered_block(text: str) -> list[str]:
    """The last contiguous run of numbered lines in ``text`` — in a rendered
    prompt this is the query's candidate list. Used by mock backends and the
    dataset validator."""
    best: list[str] = []
    current: list[str] = []
    for line in text.splitlines():
        m = _NUMBERED_LINE.match(line)
        if m:
            current.append(m.group(1))
        else:
            if current:
                best = current
            current = []
    if current:
        best = current
    return best


def sample_examples_from_training(
    mentions: list[Mention],
    kb: KnowledgeBase,
    store,
    n: int,
    k: int,
    seed: int = 0,
    metric: str = "dot",
) -> list[FewShotExample]:
    """Build worked examples from labeled training mentions instead of the
    hand-written ones shipped with the templates: gold first, the other
    retrieved candidates in retrieval order."""
    from .embedstore import lookup
    from .retriever import CandidateRetriever

    eligible = [m for m in mentions if m.gold_id is not None and m.gold_id in kb and m.uid in store]
    if len(eligible) < n:
        raise ValidationError(f"need {n} labeled training mentions with vectors, have {len(eligible)}")
    rng = random.Random(seed)
    chosen = rng.sample(eligible, n)
    retr = CandidateRetriever(store, kb, metric=metric)
    examples = []
    for m in chosen:
        cs = retr.top_k(lookup(store, m.uid), k, mention_uid=m.uid)
        labels = candidate_labels(cs, kb)
        by_id = dict(zip(cs.entity_ids, labels))
        if m.gold_id in by_id:
            ranking = [by_id[m.gold_id]] + [lab for eid, lab in zip(cs.entity_ids, labels) if eid != m.gold_id]
        else:
            ranking = list(labels)
        examples.append(FewShotExample(mention=m.surface, context=m.context, candidates=labels, ranking=ranking))
    return examples
