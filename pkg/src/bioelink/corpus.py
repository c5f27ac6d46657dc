"""Knowledge-base and mention ingestion.

File formats (UTF-8, LF, tab-separated, no header):
  knowledge base   id<TAB>name
  mentions         gold_id<TAB>mention<TAB>context      (third column optional)
  ask-a-patient    gold_id<TAB>gold_name<TAB>mention    (no context in this corpus)

Ask A Patient fold files follow the upstream naming scheme
``{fold}.train.txt`` / ``{fold}.validation.txt`` / ``{fold}.test.txt``.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError, UnknownIdError, ValidationError

SPLITS = ("train", "val", "test")

KB_FORMATS = ("normalized-tsv",)
MENTION_FORMATS = ("normalized-tsv", "ask-a-patient")

AAP_SPLIT_SUFFIX = {"train": "train", "val": "validation", "test": "test"}


@dataclass(frozen=True)
class Entity:
    id: str
    name: str


@dataclass
class Mention:
    uid: str
    surface: str
    context: str | None
    gold_id: str | None
    split: str


class KnowledgeBase:
    """Ordered entity inventory with an id -> position index.

    Iteration order is file order and is the tie-break order used by the
    retriever, so it must stay stable.
    """

    def __init__(self, entities: list[Entity]):
        if not entities:
            raise FormatError("empty knowledge base")
        index: dict[str, int] = {}
        for pos, ent in enumerate(entities):
            if not ent.id:
                raise ValidationError(f"entity at position {pos} has an empty id")
            if not ent.name.strip():
                raise ValidationError(f"entity {ent.id!r} has an empty name")
            if ent.id in index:
                raise ValidationError(f"duplicate entity id {ent.id!r}")
            index[ent.id] = pos
        self.entities = entities
        self.index = index

    def __len__(self) -> int:
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities)

    def __contains__(self, entity_id: str) -> bool:
        return entity_id in self.index

    def get(self, entity_id: str) -> Entity:
        try:
            return self.entities[self.index[entity_id]]
        except KeyError:
            raise UnknownIdError(f"unknown entity id {entity_id!r}") from None

    def position(self, entity_id: str) -> int:
        try:
            return self.index[entity_id]
        except KeyError:
            raise UnknownIdError(f"unknown entity id {entity_id!r}") from None


def _read_lines(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    return text.split("\n")[:-1] if text.endswith("\n") else text.split("\n") if text else []


def load_kb(path, format: str = "normalized-tsv") -> KnowledgeBase:
    if format not in KB_FORMATS:
        raise ValidationError(f"unknown knowledge-base format {format!r}")
    entities: list[Entity] = []
    seen: dict[str, int] = {}
    for line_no, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        if len(cols) != 2:
            raise FormatError(f"{path}:{line_no}: expected 2 tab-separated columns, got {len(cols)}")
        ent_id, name = cols
        if ent_id in seen:
            raise FormatError(f"{path}:{line_no}: duplicate entity id {ent_id!r} (first seen at line {seen[ent_id]})")
        if not ent_id:
            raise FormatError(f"{path}:{line_no}: empty entity id")
        if not name.strip():
            raise FormatError(f"{path}:{line_no}: empty entity name")
        seen[ent_id] = line_no
        entities.append(Entity(id=ent_id, name=name))
    if not entities:
        raise FormatError(f"{path}: empty knowledge base")
    return KnowledgeBase(entities)


def save_kb(kb: KnowledgeBase, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for ent in kb:
            f.write(f"{ent.id}\t{ent.name}\n")


def load_mentions(path, format: str = "normalized-tsv", split: str = "test") -> list[Mention]:
    if format not in MENTION_FORMATS:
        raise ValidationError(f"unknown mention format {format!r}")
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    mentions: list[Mention] = []
    for line_no, line in enumerate(_read_lines(path), start=1):
        cols = line.split("\t")
        uid = f"{split}:{line_no}"
        if format == "ask-a-patient":
            if len(cols) != 3:
                raise FormatError(f"{path}:{line_no}: expected 3 columns (gold_id, gold_name, mention), got {len(cols)}")
            gold_id, _gold_name, surface = cols
            context = None
        else:
            if len(cols) not in (2, 3):
                raise FormatError(f"{path}:{line_no}: expected 2 or 3 columns (gold_id, mention, context?), got {len(cols)}")
            gold_id, surface = cols[0], cols[1]
            context = cols[2] if len(cols) == 3 and cols[2] else None
        if not surface:
            raise FormatError(f"{path}:{line_no}: empty mention text")
        mentions.append(Mention(uid=uid, surface=surface, context=context, gold_id=gold_id or None, split=split))
    return mentions


def aap_fold_path(directory, fold: int, split: str):
    """Path of an Ask A Patient fold file, e.g. ``0.train.txt``."""
    if split not in SPLITS:
        raise ValidationError(f"split must be one of {SPLITS}, got {split!r}")
    return Path(directory) / f"{fold}.{AAP_SPLIT_SUFFIX[split]}.txt"


def window_context(context: str, mention_surface: str, max_chars: int) -> str:
    """Clip ``context`` to at most ``max_chars`` characters around the first
    occurrence of ``mention_surface``.

    The window is centered on the mention as the budget allows; when the slack
    is odd the extra character goes to the right. If the mention does not occur
    in the context, the window is taken from the front.
    """
    if max_chars < 0:
        max_chars = 0
    if len(context) <= max_chars:
        return context
    idx = context.find(mention_surface)
    if idx < 0 or len(mention_surface) > max_chars:
        return context[:max_chars]
    slack = max_chars - len(mention_surface)
    left_want = slack // 2
    left_avail = idx
    right_avail = len(context) - (idx + len(mention_surface))
    left = min(left_want, left_avail)
    right = min(slack - left_want, right_avail)
    # hand budget unused on one side to the other
    leftover = slack - left - right
    grow = min(leftover, left_avail - left)
    left += grow
    right += min(leftover - grow, right_avail - right)
    return context[idx - left : idx + len(mention_surface) + right]


@dataclass
class IngestReport:
    """Outcome of pairing a mention file with a knowledge base.

    Mentions whose gold id does not resolve are retained (the pipeline can
    still run inference on them) but listed here so nothing is silently
    dropped. The context budget note records that the window is measured in
    characters.
    """

    kb_path: str
    kb_size: int
    mention_path: str
    split: str
    total: int
    accepted: int
    without_gold: int
    unresolved: list[dict] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "kb": {"path": self.kb_path, "entities": self.kb_size},
            "mentions": {
                "path": self.mention_path,
                "split": self.split,
                "total": self.total,
                "accepted": self.accepted,
                "without_gold": self.without_gold,
                "unresolved_gold": self.unresolved,
            },
            "notes": self.notes,
        }


CONTEXT_NOTE = "context windows are measured in characters (not encoder tokens)"


def build_ingest_report(kb: KnowledgeBase, mentions: list[Mention], *, kb_path="", mention_path="", split="") -> IngestReport:
    unresolved = [
        {"uid": m.uid, "gold_id": m.gold_id, "line": int(m.uid.rsplit(":", 1)[1])}
        for m in mentions
        if m.gold_id is not None and m.gold_id not in kb
    ]
    without_gold = sum(1 for m in mentions if m.gold_id is None)
    return IngestReport(
        kb_path=str(kb_path),
        kb_size=len(kb),
        mention_path=str(mention_path),
        split=split,
        total=len(mentions),
        accepted=len(mentions) - len(unresolved),
        without_gold=without_gold,
        unresolved=unresolved,
        notes=[CONTEXT_NOTE],
    )


def write_ingest_report(report: IngestReport, path, stream=None) -> None:
    """Write the JSON summary to ``path`` and a line-oriented digest to ``stream``
    (standard error by default)."""
    stream = stream if stream is not None else sys.stderr
    print(f"ingest: {report.kb_size} entities from {report.kb_path}", file=stream)
    print(f"ingest: {report.total} mentions from {report.mention_path} (split={report.split})", file=stream)
    print(f"ingest: accepted={report.accepted} without_gold={report.without_gold} unresolved_gold={len(report.unresolved)}", file=stream)
    for item in report.unresolved:
        print(f"ingest: line {item['line']}: gold id {item['gold_id']!r} not in knowledge base ({item['uid']})", file=stream)
    for note in report.notes:
        print(f"ingest: note: {note}", file=stream)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, ensure_ascii=False, indent=2)
        f.write("\n")
