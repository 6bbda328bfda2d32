"""Parse model replies into entity lists and yes/no verdicts.

Both parsers are total: any string yields a result, and lines that cannot be
turned into a mention are reported in ``rejects`` instead of raising.

Accepted pair forms, one or more per line::

    (Location, Yate)
    1. (Location, "University of Exeter")
    - Type: Location, Entity: Yate
    (Person, Alice), (Location, Yate)
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .core import EmptySurface, EntityMention, RejectedLine, TypeSchema, make_mention

UNKNOWN_TYPE = "unknown-type"
EMPTY_SURFACE = "empty-surface"

_BULLET = re.compile(r"^\s*(?:[-*•>]+|\d+\s*[.):]|\(\d+\)(?=\s)|[a-zA-Z][.)](?=\s))\s*")
_WHOLE_PAIR = re.compile(r"^\(\s*([^(),]+?)\s*,\s*(.*?)\s*\)\s*[.,;]?$")
_INLINE_PAIR = re.compile(r"\(\s*([^(),]+?)\s*,\s*([^()]*?)\s*\)")
_MULTI = re.compile(r"\)\s*[,;]?\s*\(")
_KEYED_PAIR = re.compile(
    r"^\W*(?:entity\s+)?type\s*[:=]\s*(.+?)\s*[,;|]\s*"
    r"(?:entity(?:\s+text)?|text|span|mention|name)\s*[:=]\s*(.*?)\s*$",
    re.IGNORECASE,
)
_KEYED_PAIR_REVERSED = re.compile(
    r"^\W*(?:entity(?:\s+text)?|text|span|mention|name)\s*[:=]\s*(.+?)\s*[,;|]\s*"
    r"(?:entity\s+)?type\s*[:=]\s*(.*?)\s*[.]?$",
    re.IGNORECASE,
)
_QUOTES = {'"': '"', "'": "'", "“": "”", "‘": "’", "`": "`"}

_YES = re.compile(r"\byes\b", re.IGNORECASE)
_NO = re.compile(r"\bno\b", re.IGNORECASE)
_SENTENCE_END = re.compile(r"[.!?\n]")


@dataclass(frozen=True)
class ParsedEntityList:
    mentions: tuple[EntityMention, ...] = ()
    rejects: tuple[RejectedLine, ...] = ()
    ignored: tuple[str, ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class Verdict:
    value: str  # "yes" | "no" | "ambiguous"
    raw: str


def strip_quotes(s: str) -> str:
    s = s.strip()
    while len(s) >= 2 and s[0] in _QUOTES and s[-1] == _QUOTES[s[0]]:
        s = s[1:-1].strip()
    return s


def map_type(raw: str, schema: TypeSchema) -> str | None:
    """exact name -> case-insensitive name -> dataset tag."""
    raw = strip_quotes(raw)
    if raw in schema:
        return raw
    folded = raw.casefold()
    for name in schema.names:
        if name.casefold() == folded:
            return name
    tagged = schema.type_for_tag(raw)
    if tagged is not None:
        return tagged
    hits = {
        t.canonical_name
        for t in schema.types
        for tag in t.dataset_tags
        if tag.casefold() == folded
    }
    return hits.pop() if len(hits) == 1 else None


def _pairs_in_line(line: str) -> list[tuple[str, str]]:
    body = _BULLET.sub("", line, count=1).strip()
    m = _WHOLE_PAIR.match(body)
    if m:
        if _MULTI.search(m.group(2)):
            inline = _INLINE_PAIR.findall(body)
            if len(inline) >= 2:
                return inline
        return [(m.group(1), m.group(2))]
    inline = _INLINE_PAIR.findall(body)
    if inline:
        return inline
    m = _KEYED_PAIR.match(body)
    if m:
        return [(m.group(1), m.group(2))]
    m = _KEYED_PAIR_REVERSED.match(body)
    if m:
        return [(m.group(2), m.group(1))]
    return []


def parse_entity_list(reply: str, schema: TypeSchema) -> ParsedEntityList:
    mentions: list[EntityMention] = []
    rejects: list[RejectedLine] = []
    ignored: list[str] = []
    for line in reply.splitlines():
        if not line.strip():
            continue
        pairs = _pairs_in_line(line)
        if not pairs:
            ignored.append(line)
            continue
        for raw_type, raw_surface in pairs:
            type_name = map_type(raw_type, schema)
            if type_name is None:
                rejects.append(RejectedLine(line, UNKNOWN_TYPE))
                continue
            try:
                mentions.append(make_mention(type_name, strip_quotes(raw_surface)))
            except EmptySurface:
                rejects.append(RejectedLine(line, EMPTY_SURFACE))
    return ParsedEntityList(tuple(mentions), tuple(rejects), tuple(ignored))


def parse_verdict(reply: str) -> Verdict:
    text = reply.strip()
    first = _SENTENCE_END.split(text, maxsplit=1)[0] if text else ""
    yes, no = bool(_YES.search(first)), bool(_NO.search(first))
    if yes and not no:
        return Verdict("yes", reply)
    if no and not yes:
        return Verdict("no", reply)
    return Verdict("ambiguous", reply)
