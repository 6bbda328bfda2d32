"""Span-less micro precision/recall/F1.

Predictions and gold are compared as sets of ``(type, surface)`` keys, so an
entity that occurs twice in a sentence counts once. Scores are therefore not
comparable with offset-based scorers such as conlleval.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Sequence

from .core import EntityMention, mention_key, normalize_mention


class Counts(NamedTuple):
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class Metrics:
    true_positives: int
    false_positives: int
    false_negatives: int
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int) -> Metrics:
        # 0/0 is 1 only when nothing at all was predicted or missed.
        if tp + fp:
            p = tp / (tp + fp)
        else:
            p = 1.0 if fn == 0 else 0.0
        if tp + fn:
            r = tp / (tp + fn)
        else:
            r = 1.0 if fp == 0 else 0.0
        f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        return cls(tp, fp, fn, p, r, f1)

    def to_dict(self) -> dict:
        return asdict(self)


def _keys(mentions: Iterable[EntityMention]) -> set:
    return {mention_key(normalize_mention(m)) for m in mentions}


def score_sentence(pred: Iterable[EntityMention], gold: Iterable[EntityMention]) -> Counts:
    p, g = _keys(pred), _keys(gold)
    return Counts(len(p & g), len(p - g), len(g - p))


def aggregate(per_sentence: Iterable[Sequence[int]]) -> Metrics:
    tp = fp = fn = 0
    for a, b, c in per_sentence:
        tp, fp, fn = tp + a, fp + b, fn + c
    return Metrics.from_counts(tp, fp, fn)


def per_type_metrics(
    pairs: Sequence[tuple[Iterable[EntityMention], Iterable[EntityMention]]],
    type_names: Sequence[str] = (),
) -> dict[str, Metrics]:
    """Metrics restricted to each type; ``type_names`` fixes the output order."""
    pairs = [(list(p), list(g)) for p, g in pairs]
    names = list(dict.fromkeys(type_names))
    for p, g in pairs:
        for m in (*p, *g):
            if m.type_name not in names:
                names.append(m.type_name)
    out = {}
    for name in names:
        counts = [
            score_sentence([m for m in p if m.type_name == name], [m for m in g if m.type_name == name])
            for p, g in pairs
        ]
        out[name] = aggregate(counts)
    return out
