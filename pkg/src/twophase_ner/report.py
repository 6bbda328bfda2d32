"""Run reports: assembly, JSON round-trip, Markdown rendering."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .core import (
    DialogueTranscript,
    EntityMention,
    PhaseResult,
    RejectedLine,
    Turn,
    TypeSchema,
    VerificationAudit,
)
from .pipeline import Conflict, SentenceOutcome
from .scoring import Metrics, aggregate, per_type_metrics, score_sentence


@dataclass(frozen=True)
class PhaseStats:
    phase_index: int
    sentences: int = 0
    backend_calls: int = 0
    candidates: int = 0
    verified: int = 0
    added: int = 0


@dataclass(frozen=True)
class RunReport:
    label: str
    config: dict[str, Any]
    template_version: str
    model: str
    outcomes: tuple[SentenceOutcome, ...]
    metrics: Metrics
    per_type: dict[str, Metrics]
    phase_stats: tuple[PhaseStats, ...]
    cache: dict[str, int]
    aborted: tuple[str, ...] = ()
    duration_seconds: float | None = field(default=None, compare=False)

    @property
    def ok(self) -> bool:
        return not self.aborted

    def without_timing(self) -> RunReport:
        return replace(self, duration_seconds=None)


def compute_phase_stats(outcomes: Sequence[SentenceOutcome]) -> tuple[PhaseStats, ...]:
    stats: dict[int, dict[str, int]] = {}
    for o in outcomes:
        for pr in o.phase_results:
            s = stats.setdefault(pr.phase_index, dict.fromkeys(("sentences", "backend_calls", "candidates", "verified", "added"), 0))
            s["sentences"] += 1
            s["backend_calls"] += pr.backend_calls
            s["candidates"] += len(pr.candidates)
            s["verified"] += len(pr.verified)
        for origin in o.origins:
            stats[origin]["added"] += 1
    return tuple(PhaseStats(i, **stats[i]) for i in sorted(stats))


def score_outcomes(outcomes: Sequence[SentenceOutcome], schema: TypeSchema | None = None) -> tuple[Metrics, dict[str, Metrics]]:
    overall = aggregate(score_sentence(o.merged, o.gold) for o in outcomes)
    names = schema.names if schema is not None else ()
    return overall, per_type_metrics([(o.merged, o.gold) for o in outcomes], names)


def build_report(
    label: str,
    config: Mapping[str, Any],
    template_version: str,
    model: str,
    outcomes: Sequence[SentenceOutcome],
    schema: TypeSchema,
    cache: Mapping[str, int],
    duration_seconds: float | None = None,
) -> RunReport:
    outcomes = tuple(sorted(outcomes, key=lambda o: o.sentence_id))
    overall, per_type = score_outcomes(outcomes, schema)
    return RunReport(
        label=label,
        config=dict(config),
        template_version=template_version,
        model=model,
        outcomes=outcomes,
        metrics=overall,
        per_type=per_type,
        phase_stats=compute_phase_stats(outcomes),
        cache=dict(cache),
        aborted=tuple(o.sentence_id for o in outcomes if o.aborted),
        duration_seconds=duration_seconds,
    )


# -- serialization -------------------------------------------------------------

def mention_to_dict(m: EntityMention) -> dict[str, str]:
    return {"type": m.type_name, "surface": m.surface}


def mention_from_dict(d: Mapping[str, str]) -> EntityMention:
    return EntityMention(d["type"], d["surface"])


def _mentions(ms: Sequence[EntityMention]) -> list[dict[str, str]]:
    return [mention_to_dict(m) for m in ms]


def _mentions_back(ds: Sequence[Mapping[str, str]]) -> tuple[EntityMention, ...]:
    return tuple(mention_from_dict(d) for d in ds)


def transcript_to_dict(t: DialogueTranscript) -> dict[str, Any]:
    return {
        "phase_index": t.phase_index,
        "template_version": t.template_version,
        "model": t.model,
        "turns": [{"role": x.role, "content": x.content} for x in t.turns],
    }


def transcript_from_dict(d: Mapping[str, Any]) -> DialogueTranscript:
    return DialogueTranscript(
        d["phase_index"],
        tuple(Turn(x["role"], x["content"]) for x in d["turns"]),
        d.get("template_version", ""),
        d.get("model", ""),
    )


def _phase_to_dict(pr: PhaseResult) -> dict[str, Any]:
    return {
        "phase_index": pr.phase_index,
        "candidates": _mentions(pr.candidates),
        "verified": _mentions(pr.verified),
        "audits": [
            {"mention": mention_to_dict(a.mention), "verdict": a.verdict, "kept": a.kept,
             "reply": a.reply, "in_text": a.in_text}
            for a in pr.audits
        ],
        "overflow": _mentions(pr.overflow),
        "rejects": [{"line": r.line, "reason": r.reason} for r in pr.rejects],
    }


def _phase_from_dict(d: Mapping[str, Any]) -> PhaseResult:
    return PhaseResult(
        phase_index=d["phase_index"],
        candidates=_mentions_back(d["candidates"]),
        verified=_mentions_back(d["verified"]),
        audits=tuple(
            VerificationAudit(mention_from_dict(a["mention"]), a["verdict"], a["kept"], a["reply"], a["in_text"])
            for a in d["audits"]
        ),
        overflow=_mentions_back(d["overflow"]),
        rejects=tuple(RejectedLine(r["line"], r["reason"]) for r in d["rejects"]),
    )


def outcome_to_dict(o: SentenceOutcome, include_transcripts: bool = True) -> dict[str, Any]:
    d = {
        "sentence_id": o.sentence_id,
        "text": o.text,
        "gold": _mentions(o.gold),
        "merged": _mentions(o.merged),
        "origins": list(o.origins),
        "conflicts": [
            {"mention": mention_to_dict(c.mention), "reason": c.reason, "phase_index": c.phase_index,
             "kept": mention_to_dict(c.kept) if c.kept else None}
            for c in o.conflicts
        ],
        "phase_results": [_phase_to_dict(p) for p in o.phase_results],
        "error": o.error,
    }
    if include_transcripts:
        d["transcripts"] = [transcript_to_dict(t) for t in o.transcripts]
    return d


def outcome_from_dict(d: Mapping[str, Any]) -> SentenceOutcome:
    return SentenceOutcome(
        sentence_id=d["sentence_id"],
        text=d["text"],
        gold=_mentions_back(d["gold"]),
        phase_results=tuple(_phase_from_dict(p) for p in d["phase_results"]),
        merged=_mentions_back(d["merged"]),
        origins=tuple(d["origins"]),
        conflicts=tuple(
            Conflict(mention_from_dict(c["mention"]), c["reason"], c["phase_index"],
                     mention_from_dict(c["kept"]) if c["kept"] else None)
            for c in d["conflicts"]
        ),
        transcripts=tuple(transcript_from_dict(t) for t in d.get("transcripts", ())),
        error=d["error"],
    )


def _metrics_from_dict(d: Mapping[str, Any]) -> Metrics:
    return Metrics(**d)


def report_to_dict(r: RunReport, include_timing: bool = True, include_transcripts: bool = True) -> dict[str, Any]:
    d = {
        "label": r.label,
        "model": r.model,
        "template_version": r.template_version,
        "config": r.config,
        "metrics": r.metrics.to_dict(),
        "per_type": {k: v.to_dict() for k, v in r.per_type.items()},
        "phase_stats": [vars(p).copy() for p in r.phase_stats],
        "cache": r.cache,
        "aborted": list(r.aborted),
        "outcomes": [outcome_to_dict(o, include_transcripts) for o in r.outcomes],
    }
    if include_timing:
        d["duration_seconds"] = r.duration_seconds
    return d


def report_from_dict(d: Mapping[str, Any]) -> RunReport:
    return RunReport(
        label=d["label"],
        config=dict(d["config"]),
        template_version=d["template_version"],
        model=d["model"],
        outcomes=tuple(outcome_from_dict(o) for o in d["outcomes"]),
        metrics=_metrics_from_dict(d["metrics"]),
        per_type={k: _metrics_from_dict(v) for k, v in d["per_type"].items()},
        phase_stats=tuple(PhaseStats(**p) for p in d["phase_stats"]),
        cache=dict(d["cache"]),
        aborted=tuple(d["aborted"]),
        duration_seconds=d.get("duration_seconds"),
    )


def report_json(r: RunReport, include_timing: bool = True, include_transcripts: bool = True) -> str:
    return json.dumps(report_to_dict(r, include_timing, include_transcripts), indent=2, ensure_ascii=False) + "\n"


def recompute_metrics(r: RunReport) -> tuple[Metrics, dict[str, Metrics]]:
    """Re-score the embedded outcomes; used to check report self-consistency."""
    overall = aggregate(score_sentence(o.merged, o.gold) for o in r.outcomes)
    per_type = per_type_metrics([(o.merged, o.gold) for o in r.outcomes], list(r.per_type))
    return overall, per_type


# -- markdown ------------------------------------------------------------------

def fmt(x: float) -> str:
    return f"{x:.3f}"


def _metrics_row(name: str, m: Metrics) -> str:
    return (f"| {name} | {m.true_positives} | {m.false_positives} | {m.false_negatives} | "
            f"{fmt(m.precision)} | {fmt(m.recall)} | {fmt(m.f1)} |")


def render_markdown(r: RunReport) -> str:
    lines = [f"# Run report: {r.label}", ""]
    lines += ["## Configuration", "", "| Setting | Value |", "|---|---|"]
    lines.append(f"| model | {r.model} |")
    lines.append(f"| template version | {r.template_version} |")
    for k, v in r.config.items():
        if k == "model":
            continue
        lines.append(f"| {k} | {v} |")
    lines += ["", "## Metrics", "", f"Sentences: {len(r.outcomes)}", "",
              "| Type | TP | FP | FN | Precision | Recall | F1 |", "|---|---|---|---|---|---|---|"]
    lines.append(_metrics_row("overall", r.metrics))
    for name, m in r.per_type.items():
        lines.append(_metrics_row(name, m))
    lines += ["", "## Per-phase yield", "",
              "| Phase | Sentences | Backend calls | Candidates | Verified | Added to merged |",
              "|---|---|---|---|---|---|"]
    for p in r.phase_stats:
        lines.append(f"| {p.phase_index} | {p.sentences} | {p.backend_calls} | {p.candidates} | {p.verified} | {p.added} |")
    lines += ["", "## Cache", "",
              f"hits {r.cache.get('hits', 0)}, misses {r.cache.get('misses', 0)}, "
              f"backend calls {r.cache.get('backend_calls', 0)}"]
    if r.duration_seconds is not None:
        lines += ["", f"Wall-clock duration: {r.duration_seconds:.2f} s"]
    if r.aborted:
        lines += ["", "## Aborted sentences", ""]
        for o in r.outcomes:
            if o.aborted:
                lines.append(f"- {o.sentence_id}: {o.error}")
    return "\n".join(lines) + "\n"


def render(r: RunReport) -> tuple[str, str]:
    return report_json(r), render_markdown(r)
