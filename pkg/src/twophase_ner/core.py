"""Domain types shared by every stage of the recognizer.

Entities are location-free ``(type, surface)`` pairs. Everything here is an
immutable value and performs no I/O.
"""

from __future__ import annotations

import fnmatch
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

_WS = re.compile(r"\s+")
_BIO_PREFIX = re.compile(r"^[BIESLU]-")

ROLES = ("system", "user", "assistant")


class NERError(Exception):
    """Base class for errors raised by this package."""


class EmptySurface(NERError, ValueError):
    pass


class SchemaError(NERError, ValueError):
    pass


@dataclass(frozen=True)
class EntityType:
    canonical_name: str
    description: str
    dataset_tags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "dataset_tags", tuple(self.dataset_tags))
        if not self.canonical_name.strip():
            raise SchemaError("entity type name must be non-empty")
        if "," in self.canonical_name or "(" in self.canonical_name or ")" in self.canonical_name:
            raise SchemaError(f"type name {self.canonical_name!r} may not contain ',', '(' or ')'")
        words = set(self.canonical_name.split())
        for tag in self.dataset_tags:
            if _BIO_PREFIX.sub("", tag) in words:
                raise SchemaError(
                    f"type {self.canonical_name!r} uses dataset tag {tag!r} as a word; "
                    "canonical names must be full names"
                )

    def matches_tag(self, tag: str) -> bool:
        return any(
            tag == t or (_is_pattern(t) and fnmatch.fnmatchcase(tag, t))
            for t in self.dataset_tags
        )


def _is_pattern(tag: str) -> bool:
    return any(c in tag for c in "*?[")


@dataclass(frozen=True)
class TypeSchema:
    types: tuple[EntityType, ...]
    domain_label: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "types", tuple(self.types))
        if not self.types:
            raise SchemaError("a schema needs at least one entity type")
        names = [t.canonical_name for t in self.types]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate canonical names in {names}")
        seen: dict[str, str] = {}
        for t in self.types:
            for tag in t.dataset_tags:
                if tag in seen:
                    raise SchemaError(
                        f"dataset tag {tag!r} maps to both {seen[tag]!r} and {t.canonical_name!r}"
                    )
                seen[tag] = t.canonical_name

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(t.canonical_name for t in self.types)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def get(self, name: str) -> EntityType | None:
        for t in self.types:
            if t.canonical_name == name:
                return t
        return None

    def type_for_tag(self, tag: str) -> str | None:
        """Map a corpus tag to a canonical name.

        Literal tags win over glob patterns; a BIO prefix is stripped if the
        full tag is not itself listed.
        """
        for candidate in (tag, _BIO_PREFIX.sub("", tag)):
            for t in self.types:
                if candidate in t.dataset_tags:
                    return t.canonical_name
            for t in self.types:
                if t.matches_tag(candidate):
                    return t.canonical_name
        return None

    def restrict(self, names: Iterable[str]) -> TypeSchema:
        keep = set(names)
        return TypeSchema(tuple(t for t in self.types if t.canonical_name in keep), self.domain_label)


@dataclass(frozen=True, order=True)
class EntityMention:
    type_name: str
    surface: str

    def __post_init__(self) -> None:
        if not self.surface.strip():
            raise EmptySurface(f"empty surface for type {self.type_name!r}")

    def __str__(self) -> str:
        return f"({self.type_name}, {self.surface})"


class MentionKey(NamedTuple):
    type_name: str
    surface: str


def collapse_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def normalize_mention(m: EntityMention) -> EntityMention:
    surface = collapse_whitespace(m.surface)
    if not surface:
        raise EmptySurface(f"surface {m.surface!r} is empty after normalization")
    if surface == m.surface:
        return m
    return EntityMention(m.type_name, surface)


def make_mention(type_name: str, surface: str) -> EntityMention:
    """Build an already-normalized mention from raw strings."""
    surface = collapse_whitespace(surface)
    if not surface:
        raise EmptySurface(f"empty surface for type {type_name!r}")
    return EntityMention(type_name, surface)


def mention_key(m: EntityMention) -> MentionKey:
    return MentionKey(m.type_name, m.surface)


def dedupe(mentions: Iterable[EntityMention]) -> tuple[EntityMention, ...]:
    """Normalize and drop repeated keys, keeping first-seen order."""
    seen: set[MentionKey] = set()
    out = []
    for m in mentions:
        m = normalize_mention(m)
        k = mention_key(m)
        if k not in seen:
            seen.add(k)
            out.append(m)
    return tuple(out)


def _check_surfaces_in(text: str, mentions: Iterable[EntityMention], what: str) -> None:
    for m in mentions:
        if m.surface not in text:
            raise ValueError(f"{what}: gold surface {m.surface!r} does not occur in {text!r}")


@dataclass(frozen=True)
class Sentence:
    id: str
    text: str
    gold: tuple[EntityMention, ...] = ()

    def __post_init__(self) -> None:
        if not self.text.strip():
            raise ValueError(f"sentence {self.id!r} has empty text")
        object.__setattr__(self, "gold", dedupe(self.gold))
        _check_surfaces_in(self.text, self.gold, f"sentence {self.id!r}")


@dataclass(frozen=True)
class SupportExample:
    text: str
    mentions: tuple[EntityMention, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "mentions", dedupe(self.mentions))
        _check_surfaces_in(self.text, self.mentions, "support example")


@dataclass(frozen=True)
class VerificationAudit:
    """Outcome of one correctness-check turn.

    ``verdict`` is ``yes``/``no``/``ambiguous`` or ``skipped`` when
    verification is disabled. ``in_text`` records whether the surface occurs
    verbatim in the sentence; it is informational and never filters.
    """

    mention: EntityMention
    verdict: str
    kept: bool
    reply: str = ""
    in_text: bool = True


@dataclass(frozen=True)
class Turn:
    role: str
    content: str


@dataclass(frozen=True)
class DialogueTranscript:
    phase_index: int
    turns: tuple[Turn, ...] = ()
    template_version: str = ""
    model: str = ""

    def validate(self) -> None:
        turns = list(self.turns)
        i = 0
        if turns and turns[0].role == "system":
            i = 1
        expected = "user"
        for t in turns[i:]:
            if t.role not in ROLES or t.role == "system":
                raise ValueError(f"unexpected {t.role!r} turn after the opening")
            if t.role != expected:
                raise ValueError(f"expected a {expected} turn, got {t.role}")
            expected = "assistant" if expected == "user" else "user"

    @property
    def exchanges(self) -> int:
        return sum(1 for t in self.turns if t.role == "assistant")


@dataclass(frozen=True)
class RejectedLine:
    line: str
    reason: str


@dataclass(frozen=True)
class PhaseResult:
    phase_index: int
    candidates: tuple[EntityMention, ...]
    verified: tuple[EntityMention, ...]
    audits: tuple[VerificationAudit, ...]
    overflow: tuple[EntityMention, ...] = ()
    rejects: tuple[RejectedLine, ...] = field(default=())

    def __post_init__(self) -> None:
        cand = {mention_key(m) for m in self.candidates}
        if not {mention_key(m) for m in self.verified} <= cand:
            raise ValueError("verified entities must be a subset of candidates")
        audited = [mention_key(a.mention) for a in self.audits]
        if sorted(audited) != sorted(mention_key(m) for m in self.candidates):
            raise ValueError("every candidate needs exactly one audit record")

    @property
    def backend_calls(self) -> int:
        """Turns spent in this phase: the first turn plus one per audited check."""
        return 1 + sum(1 for a in self.audits if a.verdict != "skipped")
