"""Corpus loaders, schema files and few-shot support sampling.

Sentence text is rebuilt by joining tokens with single spaces, and gold
surfaces are joined the same way, so every gold surface is a substring of its
sentence by construction.
"""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .core import EntityMention, EntityType, NERError, Sentence, SupportExample, TypeSchema, make_mention

log = logging.getLogger(__name__)

BUILTIN_SCHEMAS = ("conll2003", "fewnerd")
DOCSTART = "-DOCSTART-"
_PREFIXED = re.compile(r"^([BIESLU])-(.+)$")


class DatasetError(NERError):
    pass


class MalformedLine(DatasetError):
    def __init__(self, line_no: int, line: str) -> None:
        super().__init__(f"line {line_no}: expected 'token<SEP>...<SEP>tag', got {line!r}")
        self.line_no = line_no


class UnknownTag(DatasetError):
    def __init__(self, tag: str, line_no: int) -> None:
        super().__init__(f"line {line_no}: tag {tag!r} is not mapped by the schema")
        self.tag = tag
        self.line_no = line_no


class InsufficientData(DatasetError):
    def __init__(self, type_name: str, need: int, have: int) -> None:
        super().__init__(f"type {type_name!r} needs {need} support mentions, corpus has {have}")
        self.type_name = type_name


@dataclass(frozen=True)
class Corpus:
    name: str
    sentences: tuple[Sentence, ...]
    schema: TypeSchema

    def __post_init__(self) -> None:
        ids = [s.id for s in self.sentences]
        if len(set(ids)) != len(ids):
            raise DatasetError(f"corpus {self.name!r} has duplicate sentence ids")
        for s in self.sentences:
            for m in s.gold:
                if m.type_name not in self.schema:
                    raise DatasetError(f"sentence {s.id}: type {m.type_name!r} not in schema")

    def __len__(self) -> int:
        return len(self.sentences)

    def by_id(self) -> dict[str, Sentence]:
        return {s.id: s for s in self.sentences}


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    seed: int = 0
    types: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.n_way < 1 or self.k_shot < 1:
            raise ValueError("n_way and k_shot must both be >= 1")
        if self.types is not None and len(self.types) != self.n_way:
            raise ValueError("explicit episode types must number n_way")


@dataclass(frozen=True)
class Episode:
    support: tuple[SupportExample, ...]
    query: tuple[Sentence, ...]
    types: tuple[str, ...] = ()


# -- schemas -----------------------------------------------------------------

def schema_from_dict(data: Any) -> TypeSchema:
    if isinstance(data, list):
        entries, label = data, ""
    else:
        entries, label = data["types"], data.get("domain_label", "")
    types = []
    for e in entries:
        try:
            types.append(EntityType(e["canonical_name"], e.get("description", ""), tuple(e.get("dataset_tags", ()))))
        except (KeyError, TypeError) as exc:
            raise DatasetError(f"bad schema entry {e!r}") from exc
    return TypeSchema(tuple(types), label)


def schema_to_dict(schema: TypeSchema) -> dict[str, Any]:
    return {
        "domain_label": schema.domain_label,
        "types": [
            {"canonical_name": t.canonical_name, "description": t.description, "dataset_tags": list(t.dataset_tags)}
            for t in schema.types
        ],
    }


def load_schema(path_or_name: str | Path) -> TypeSchema:
    """Load a schema JSON file, or a builtin by name (``conll2003``, ``fewnerd``)."""
    if str(path_or_name) in BUILTIN_SCHEMAS:
        text = resources.files("twophase_ner").joinpath(f"data/schemas/{path_or_name}.json").read_text("utf-8")
    else:
        text = Path(path_or_name).read_text(encoding="utf-8")
    return schema_from_dict(json.loads(text))


# -- loaders -----------------------------------------------------------------

def _blocks(lines: Iterable[str]) -> Iterator[list[tuple[int, list[str]]]]:
    block: list[tuple[int, list[str]]] = []
    for line_no, raw in enumerate(lines, 1):
        line = raw.rstrip("\r\n")
        if not line.strip():
            if block:
                yield block
            block = []
            continue
        fields = line.split()
        if fields[0] == DOCSTART:
            if block:
                yield block
            block = []
            continue
        if len(fields) < 2:
            raise MalformedLine(line_no, line)
        block.append((line_no, fields))
    if block:
        yield block


def _resolve(schema: TypeSchema, tag: str, line_no: int, unknown: str) -> str | None:
    name = schema.type_for_tag(tag)
    if name is None:
        if unknown == "error":
            raise UnknownTag(tag, line_no)
        log.warning("line %d: unknown tag %r treated as O", line_no, tag)
    return name


def decode_bio(tokens: Sequence[str], tags: Sequence[str], schema: TypeSchema,
               line_nos: Sequence[int] | None = None, unknown: str = "error") -> list[EntityMention]:
    """Decode BIO/IOB1/BIOES tags into mentions (prefix-less tags act as I-)."""
    line_nos = line_nos or [0] * len(tokens)
    mentions: list[EntityMention] = []
    run: list[str] = []
    run_type: str | None = None

    def close() -> None:
        nonlocal run, run_type
        if run_type is not None and run:
            mentions.append(make_mention(run_type, " ".join(run)))
        run, run_type = [], None

    for tok, tag, line_no in zip(tokens, tags, line_nos):
        if tag == "O":
            close()
            continue
        m = _PREFIXED.match(tag)
        prefix = m.group(1) if m else "I"
        name = _resolve(schema, tag, line_no, unknown)
        if name is None:
            close()
            continue
        if prefix in "BSU" or run_type != name:
            close()
            run_type = name
        run.append(tok)
        if prefix in "ESL":
            close()
    close()
    return mentions


def _load(path: Path, schema: TypeSchema, name: str | None, unknown: str, decode) -> Corpus:
    name = name or path.stem
    sentences = []
    with path.open(encoding="utf-8") as f:
        for i, block in enumerate(_blocks(f)):
            tokens = [fields[0] for _, fields in block]
            tags = [fields[-1] for _, fields in block]
            gold = decode(tokens, tags, schema, [n for n, _ in block], unknown)
            sentences.append(Sentence(f"{name}-{i:06d}", " ".join(tokens), tuple(gold)))
    return Corpus(name, tuple(sentences), schema)


def load_bio(path: str | Path, schema: TypeSchema, *, name: str | None = None, unknown_tags: str = "error") -> Corpus:
    """Load a CoNLL-style file: ``token ... tag`` per line, blank line between sentences."""
    return _load(Path(path), schema, name, unknown_tags, decode_bio)


def decode_label_runs(tokens: Sequence[str], labels: Sequence[str], schema: TypeSchema,
                      line_nos: Sequence[int] | None = None, unknown: str = "error") -> list[EntityMention]:
    """Few-NERD decoding: a run of identical non-O labels is one mention."""
    line_nos = line_nos or [0] * len(tokens)
    mentions: list[EntityMention] = []
    i = 0
    while i < len(tokens):
        label = labels[i]
        j = i + 1
        while j < len(tokens) and labels[j] == label:
            j += 1
        if label != "O":
            name = _resolve(schema, label, line_nos[i], unknown)
            if name is not None:
                mentions.append(make_mention(name, " ".join(tokens[i:j])))
        i = j
    return mentions


def load_fewnerd(path: str | Path, schema: TypeSchema, *, name: str | None = None,
                 unknown_tags: str = "error") -> Corpus:
    return _load(Path(path), schema, name, unknown_tags, decode_label_runs)


def load_text(path: str | Path, schema: TypeSchema, *, name: str | None = None) -> Corpus:
    """Unlabeled input: one sentence per non-blank line."""
    path = Path(path)
    name = name or path.stem
    lines = [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines()]
    sentences = tuple(Sentence(f"{name}-{i:06d}", ln) for i, ln in enumerate(ln for ln in lines if ln))
    return Corpus(name, sentences, schema)


LOADERS = {"bio": load_bio, "fewnerd": load_fewnerd}


def load_corpus(path: str | Path, fmt: str, schema: TypeSchema, unknown_tags: str = "error") -> Corpus:
    if fmt == "text":
        return load_text(path, schema)
    try:
        loader = LOADERS[fmt]
    except KeyError:
        raise DatasetError(f"unknown corpus format {fmt!r}; expected bio, fewnerd or text") from None
    return loader(path, schema, unknown_tags=unknown_tags)


# -- few-shot support ----------------------------------------------------------

def _type_counts(s: Sentence, types: Iterable[str]) -> dict[str, int]:
    wanted = set(types)
    counts: dict[str, int] = {}
    for m in s.gold:
        if m.type_name in wanted:
            counts[m.type_name] = counts.get(m.type_name, 0) + 1
    return counts


def to_support(s: Sentence, types: Iterable[str] | None = None) -> SupportExample:
    keep = None if types is None else set(types)
    return SupportExample(s.text, tuple(m for m in s.gold if keep is None or m.type_name in keep))


def choose_types(corpus: Corpus, spec: EpisodeSpec) -> tuple[str, ...]:
    if spec.types is not None:
        return tuple(spec.types)
    totals = {name: 0 for name in corpus.schema.names}
    for s in corpus.sentences:
        for t, c in _type_counts(s, totals).items():
            totals[t] += c
    eligible = [t for t in corpus.schema.names if totals[t] >= spec.k_shot]
    if len(eligible) < spec.n_way:
        short = next(t for t in corpus.schema.names if t not in eligible)
        raise InsufficientData(short, spec.k_shot, totals[short])
    if len(eligible) == spec.n_way:
        return tuple(eligible)
    picked = set(random.Random(spec.seed).sample(eligible, spec.n_way))
    return tuple(t for t in corpus.schema.names if t in picked)


def sample_support(corpus: Corpus, spec: EpisodeSpec) -> list[SupportExample]:
    """Greedy minimal support set with >= k_shot mentions of each episode type.

    Repeatedly takes the sentence covering the most remaining deficit, ties
    broken by sentence id; support mentions are restricted to episode types.
    """
    return [to_support(s, choose_types(corpus, spec)) for s in sample_support_sentences(corpus, spec)]


def sample_support_sentences(corpus: Corpus, spec: EpisodeSpec) -> list[Sentence]:
    types = choose_types(corpus, spec)
    counts = {s.id: _type_counts(s, types) for s in corpus.sentences}
    for t in types:
        have = sum(c.get(t, 0) for c in counts.values())
        if have < spec.k_shot:
            raise InsufficientData(t, spec.k_shot, have)
    deficit = {t: spec.k_shot for t in types}
    pool = sorted((s for s in corpus.sentences if counts[s.id]), key=lambda s: s.id)
    chosen: list[Sentence] = []
    while any(deficit.values()):
        best, best_gain = None, 0
        for s in pool:
            gain = sum(min(deficit[t], c) for t, c in counts[s.id].items())
            if gain > best_gain:
                best, best_gain = s, gain
        assert best is not None  # guaranteed by the availability check above
        chosen.append(best)
        pool.remove(best)
        for t, c in counts[best.id].items():
            deficit[t] = max(0, deficit[t] - c)
    return chosen


def _inline_sentence(words: Sequence[str], labels: Sequence[str], schema: TypeSchema, sid: str) -> Sentence:
    gold = decode_label_runs(list(words), list(labels), schema, unknown="skip")
    return Sentence(sid, " ".join(words), tuple(gold))


def load_episodes(path: str | Path, corpus: Corpus, support_corpus: Corpus | None = None) -> list[Episode]:
    """Read episode files.

    Two layouts are accepted: a JSON object/list of ``{"support": [ids],
    "query": [ids]}`` referring to sentence ids, or Few-NERD's released JSONL
    with inline ``{"word": [[...]], "label": [[...]]}`` blocks.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8").strip()
    try:
        data = json.loads(text)
        records = data["episodes"] if isinstance(data, dict) else data
    except json.JSONDecodeError:
        records = [json.loads(line) for line in text.splitlines() if line.strip()]
    queries = corpus.by_id()
    supports = (support_corpus or corpus).by_id()
    episodes = []
    for n, rec in enumerate(records):
        types = tuple(rec.get("types", ()))
        if isinstance(rec["support"], dict):
            sup_sents = [
                _inline_sentence(w, lab, corpus.schema, f"ep{n:04d}-s{i:03d}")
                for i, (w, lab) in enumerate(zip(rec["support"]["word"], rec["support"]["label"]))
            ]
            query = tuple(
                _inline_sentence(w, lab, corpus.schema, f"ep{n:04d}-q{i:03d}")
                for i, (w, lab) in enumerate(zip(rec["query"]["word"], rec["query"]["label"]))
            )
        else:
            try:
                sup_sents = [supports[i] for i in rec["support"]]
                query = tuple(queries[i] for i in rec["query"])
            except KeyError as exc:
                raise DatasetError(f"episode {n}: unknown sentence id {exc.args[0]!r}") from None
        mapped = tuple(corpus.schema.type_for_tag(t) or t for t in types)
        support = tuple(to_support(s, mapped or None) for s in sup_sents)
        episodes.append(Episode(support, query, mapped))
    return episodes


# -- writers (used for fixtures and round-trip checks) -------------------------

def write_bio(rows: Sequence[Sequence[tuple[str, str]]], path: str | Path, sep: str = " ") -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for sentence in rows:
            for tok, tag in sentence:
                f.write(f"{tok}{sep}{tag}\n")
            f.write("\n")
