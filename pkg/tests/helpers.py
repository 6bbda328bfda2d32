"""Shared test data: the Rowling scenario and a synthetic scripted corpus."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from twophase_ner.core import EntityMention, Sentence
from twophase_ner.datasets import write_bio
from twophase_ner.prompting import render_mentions

M = EntityMention

ROWLING_TEXT = "Rowling was born in Yate , near Bristol , and studied French at the University of Exeter ."
ROWLING_PHASE1 = "(Person, Rowling)\n(Location, Yate)\n(Location, University of Exeter)"
ROWLING_PHASE1_CHECKS = [
    "Yes, Rowling is a Person entity.",
    "Yes, Yate is a town, so it is a Location.",
    "No. 'University of Exeter' is an Organization, not a Location.",
]
ROWLING_PHASE2 = "(Location, Yate)\n(Location, Bristol)\n(Organization, University of Exeter)\n(Miscellaneous, French)"
ROWLING_PHASE2_CHECKS = ["Yes.", "Yes, Bristol is a city.", "Yes, it is a university.", "Yes, French is a language."]
ROWLING_REPLIES = [ROWLING_PHASE1, *ROWLING_PHASE1_CHECKS, ROWLING_PHASE2, *ROWLING_PHASE2_CHECKS]
ROWLING_GOLD = (
    M("Person", "Rowling"),
    M("Location", "Yate"),
    M("Location", "Bristol"),
    M("Miscellaneous", "French"),
    M("Organization", "University of Exeter"),
)
ROWLING_MERGED = (
    M("Person", "Rowling"),
    M("Location", "Yate"),
    M("Location", "Bristol"),
    M("Organization", "University of Exeter"),
    M("Miscellaneous", "French"),
)

ROWLING_BIO = [
    ("Rowling", "B-PER"), ("was", "O"), ("born", "O"), ("in", "O"), ("Yate", "B-LOC"), (",", "O"),
    ("near", "O"), ("Bristol", "B-LOC"), (",", "O"), ("and", "O"), ("studied", "O"), ("French", "B-MISC"),
    ("at", "O"), ("the", "O"), ("University", "B-ORG"), ("of", "I-ORG"), ("Exeter", "I-ORG"), (".", "O"),
]


def rowling_sentence() -> Sentence:
    return Sentence("rowling", ROWLING_TEXT, ROWLING_GOLD)


POOLS = {
    "Person": ["Alice Smith", "Bob", "Carlos Diaz", "Dana", "Emeka Obi", "Fatima Zahra", "Gao Lin", "Hanna"],
    "Location": ["Yate", "Bristol", "New York", "Lagos", "Kyoto", "Lake Geneva", "Cape Town", "Oslo"],
    "Organization": ["University of Exeter", "Acme Corp", "United Nations", "Red Cross", "Interpol", "BBC"],
    "Miscellaneous": ["French", "Olympics", "Nobel Prize", "Cold War", "Baroque"],
}
_TAG = {"Person": "PER", "Location": "LOC", "Organization": "ORG", "Miscellaneous": "MISC"}
_FILLER = ["met", "near", "with", "and", "visited", "about", "after", "then"]
_WRONG = {"Person": "Location", "Location": "Organization", "Organization": "Location", "Miscellaneous": "Person"}


@dataclass
class ScriptedCorpus:
    sentences: list[Sentence]
    rows: list[list[tuple[str, str]]]
    rules: dict[str, list[str]]
    # per sentence id: verified lists the script produces in phases 1 and 2
    phase1_verified: dict[str, list[EntityMention]] = field(default_factory=dict)
    phase2_new: dict[str, list[EntityMention]] = field(default_factory=dict)
    phase_candidates: dict[str, list[int]] = field(default_factory=dict)

    def write(self, directory: Path) -> tuple[Path, Path]:
        corpus = directory / "corpus.conll"
        write_bio(self.rows, corpus)
        script = directory / "script.json"
        script.write_text(json.dumps({"rules": self.rules}, indent=1), encoding="utf-8")
        return corpus, script


def scripted_corpus(n: int = 50, seed: int = 7, rounds_scripted: int = 3) -> ScriptedCorpus:
    """Sentences with 2-4 gold entities and a script per sentence.

    Phase 1 finds the first half of the gold entities plus one wrong-typed
    distractor that verification rejects. Phase 2 re-emits one phase-1 entity
    and finds the rest. Later phases answer None.
    """
    rng = random.Random(seed)
    out = ScriptedCorpus([], [], {})
    for i in range(n):
        k = rng.randint(2, 4)
        types = [rng.choice(list(POOLS)) for _ in range(k)]
        used: set[str] = set()
        ents: list[EntityMention] = []
        for t in types:
            choices = [s for s in POOLS[t] if s not in used]
            surface = rng.choice(choices)
            used.add(surface)
            ents.append(M(t, surface))
        row: list[tuple[str, str]] = [(f"case{i}", "O")]
        for e in ents:
            row.append((rng.choice(_FILLER), "O"))
            for j, tok in enumerate(e.surface.split()):
                row.append((tok, ("B-" if j == 0 else "I-") + _TAG[e.type_name]))
        row.append((".", "O"))
        text = " ".join(tok for tok, _ in row)
        sid = f"corpus-{i:06d}"
        out.sentences.append(Sentence(sid, text, tuple(ents)))
        out.rows.append(row)

        half = max(1, len(ents) // 2)
        first, rest = ents[:half], ents[half:]
        distractor = M(_WRONG[ents[-1].type_name], ents[-1].surface)
        p1 = [*first, distractor]
        p2 = [first[0], *rest]
        replies = [render_mentions(p1)]
        replies += ["Yes, correct." for _ in first] + ["No, that type is wrong."]
        replies.append("Here are the remaining entities:\n" + render_mentions(p2))
        replies += ["Yes." for _ in p2]
        replies += ["None"] * max(0, rounds_scripted - 2)
        out.rules[text] = replies
        out.phase1_verified[sid] = list(first)
        out.phase2_new[sid] = list(rest)
        out.phase_candidates[sid] = [len(p1), len(p2)] + [0] * max(0, rounds_scripted - 2)
    return out
