"""Prompt rendering for recognition, verification and re-recognition turns.

Wording lives in a template file (see ``data/templates/default.txt``); this
module only validates placeholders and substitutes values.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .core import EntityMention, NERError, Sentence, SupportExample, TypeSchema

PLACEHOLDERS = frozenset(
    {
        "type_descriptions",
        "text",
        "support_examples",
        "entity_surface",
        "entity_type",
        "prior_entities",
        "output_format",
    }
)

# key -> (required placeholders, allowed placeholders)
_RULES: dict[str, tuple[frozenset[str], frozenset[str]]] = {
    "recognition_zero": (frozenset({"type_descriptions", "text", "output_format"}), PLACEHOLDERS),
    "recognition_few": (
        frozenset({"type_descriptions", "support_examples", "text", "output_format"}),
        PLACEHOLDERS,
    ),
    "verification": (frozenset({"entity_surface", "entity_type", "text"}), PLACEHOLDERS),
    "re_recognition": (
        frozenset({"type_descriptions", "support_examples", "text", "prior_entities", "output_format"}),
        PLACEHOLDERS,
    ),
    "output_format": (frozenset(), frozenset()),
    "support_example": (frozenset({"text", "entities"}), frozenset({"text", "entities"})),
    "no_prior_entities": (frozenset(), frozenset()),
}

_HEADER = re.compile(r"^\[([a-z_]+)\]\s*$")


class TemplateError(NERError, ValueError):
    pass


class MissingPlaceholder(TemplateError):
    pass


def placeholders_in(template: str) -> set[str]:
    names = set()
    for _, field_name, _, _ in string.Formatter().parse(template):
        if field_name is not None:
            names.add(field_name)
    return names


@dataclass(frozen=True)
class PromptTemplateSet:
    recognition_zero: str
    recognition_few: str
    verification: str
    re_recognition: str
    output_format_instructions: str
    support_example: str = "Example text: {text}\nExample entities:\n{entities}"
    no_prior_entities: str = "None have been recognized so far."
    version: str = "unversioned"

    def __post_init__(self) -> None:
        for key, (required, allowed) in _RULES.items():
            tmpl = self._get(key)
            try:
                found = placeholders_in(tmpl)
            except ValueError as exc:
                raise TemplateError(f"template {key!r} is not a valid format string: {exc}") from exc
            missing = required - found
            if missing:
                raise MissingPlaceholder(f"template {key!r} lacks {sorted(missing)}")
            unknown = found - allowed
            if unknown:
                raise TemplateError(f"template {key!r} uses undeclared placeholders {sorted(unknown)}")
        if "support_examples" in placeholders_in(self.recognition_zero):
            raise TemplateError("recognition_zero must not embed support examples")

    def _get(self, key: str) -> str:
        return self.output_format_instructions if key == "output_format" else getattr(self, key)

    @classmethod
    def from_mapping(cls, sections: dict[str, str]) -> PromptTemplateSet:
        required = ("recognition_zero", "recognition_few", "verification", "re_recognition", "output_format")
        missing = [k for k in required if k not in sections]
        if missing:
            raise TemplateError(f"template file lacks sections {missing}")
        unknown = set(sections) - set(_RULES) - {"version"}
        if unknown:
            raise TemplateError(f"unknown template sections {sorted(unknown)}")
        kwargs = {k: sections[k] for k in ("support_example", "no_prior_entities", "version") if k in sections}
        return cls(
            recognition_zero=sections["recognition_zero"],
            recognition_few=sections["recognition_few"],
            verification=sections["verification"],
            re_recognition=sections["re_recognition"],
            output_format_instructions=sections["output_format"],
            **kwargs,
        )


def parse_template_text(text: str) -> dict[str, str]:
    sections: dict[str, list[str]] = {}
    current: list[str] | None = None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = _HEADER.match(line)
        if m:
            key = m.group(1)
            if key in sections:
                raise TemplateError(f"line {lineno}: duplicate section [{key}]")
            current = sections[key] = []
        elif current is not None:
            current.append(line)
        elif line.strip() and not line.lstrip().startswith("#"):
            raise TemplateError(f"line {lineno}: text before the first section")
    out = {k: "\n".join(v).strip("\n").rstrip() for k, v in sections.items()}
    if "version" in out:
        out["version"] = out["version"].strip()
    return out


def load_templates(path: str | Path | None = None) -> PromptTemplateSet:
    """Load a template file; ``None`` loads the packaged defaults."""
    if path is None:
        text = resources.files("twophase_ner").joinpath("data/templates/default.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return PromptTemplateSet.from_mapping(parse_template_text(text))


def render_mention(m: EntityMention) -> str:
    return f"({m.type_name}, {m.surface})"


def render_mentions(mentions: Sequence[EntityMention]) -> str:
    """Canonical answer format: one pair per line, ``None`` when empty."""
    if not mentions:
        return "None"
    return "\n".join(render_mention(m) for m in mentions)


def render_type_descriptions(schema: TypeSchema) -> str:
    return "\n".join(f"{t.canonical_name}: {t.description}" for t in schema.types)


def render_support_examples(support: Sequence[SupportExample] | None, templates: PromptTemplateSet) -> str:
    if not support:
        return ""
    return "".join(
        templates.support_example.format(text=ex.text, entities=render_mentions(ex.mentions)) + "\n\n"
        for ex in support
    )


def _check_sentence(sentence: Sentence) -> None:
    if not sentence.text.strip():
        raise ValueError(f"sentence {sentence.id!r} has empty text")


def build_recognition_prompt(
    schema: TypeSchema,
    sentence: Sentence,
    support: Sequence[SupportExample] | None,
    templates: PromptTemplateSet,
) -> str:
    _check_sentence(sentence)
    values = {
        "type_descriptions": render_type_descriptions(schema),
        "text": sentence.text,
        "output_format": templates.output_format_instructions.format(),
    }
    if support is None:
        return templates.recognition_zero.format(**values)
    if not support:
        raise ValueError("few-shot mode needs at least one support example")
    return templates.recognition_few.format(
        support_examples=render_support_examples(support, templates), **values
    )


def build_verification_prompt(mention: EntityMention, sentence: Sentence, templates: PromptTemplateSet) -> str:
    _check_sentence(sentence)
    return templates.verification.format(
        entity_surface=mention.surface,
        entity_type=mention.type_name,
        text=sentence.text,
    )


def render_prior_entities(prior: Sequence[EntityMention], templates: PromptTemplateSet) -> str:
    if not prior:
        return templates.no_prior_entities.format()
    return "\n".join(render_mention(m) for m in prior)


def build_re_recognition_prompt(
    schema: TypeSchema,
    sentence: Sentence,
    prior: Sequence[EntityMention],
    support: Sequence[SupportExample] | None,
    templates: PromptTemplateSet,
) -> str:
    _check_sentence(sentence)
    if support is not None and not support:
        raise ValueError("few-shot mode needs at least one support example")
    return templates.re_recognition.format(
        type_descriptions=render_type_descriptions(schema),
        support_examples=render_support_examples(support, templates),
        text=sentence.text,
        prior_entities=render_prior_entities(prior, templates),
        output_format=templates.output_format_instructions.format(),
    )
