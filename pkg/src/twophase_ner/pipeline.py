"""Two-phase recognition: Recognition, Re-Recognition rounds, merging.

Each phase is one fresh chat session. Its first turn asks for entities; each
candidate is then checked with a yes/no turn in the same session. Later phases
are told which entities were already found and asked only for missing ones.
Phase lists are merged in phase order with overlaps removed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

from .core import (
    DialogueTranscript,
    EntityMention,
    NERError,
    PhaseResult,
    Sentence,
    SupportExample,
    TypeSchema,
    VerificationAudit,
    mention_key,
    normalize_mention,
)
from .llm_client import BackendError, ChatClient
from .prompting import (
    PromptTemplateSet,
    build_re_recognition_prompt,
    build_recognition_prompt,
    build_verification_prompt,
)
from .response_parser import parse_entity_list, parse_verdict

log = logging.getLogger(__name__)

TYPE_CONFLICT = "type-conflict"
CAP = "cap"


class PipelineError(NERError):
    def __init__(self, sentence_id: str, phase_index: int, cause: BaseException) -> None:
        super().__init__(f"sentence {sentence_id}, phase {phase_index}: {type(cause).__name__}: {cause}")
        self.sentence_id = sentence_id
        self.phase_index = phase_index
        self.cause = cause


@dataclass(frozen=True)
class PipelineConfig:
    re_recognition_rounds: int = 1
    verification_enabled: bool = True
    ambiguous_verdict_policy: str = "keep"
    shot_mode: str = "zero"
    max_candidates_per_turn: int = 50
    system_preamble: str | None = None

    def __post_init__(self) -> None:
        if self.re_recognition_rounds < 0:
            raise ValueError("re_recognition_rounds must be >= 0")
        if self.ambiguous_verdict_policy not in ("keep", "drop"):
            raise ValueError("ambiguous_verdict_policy must be 'keep' or 'drop'")
        if self.shot_mode not in ("zero", "few"):
            raise ValueError("shot_mode must be 'zero' or 'few'")
        if self.max_candidates_per_turn < 0:
            raise ValueError("max_candidates_per_turn must be >= 0")


@dataclass(frozen=True)
class Conflict:
    mention: EntityMention
    reason: str
    phase_index: int
    kept: EntityMention | None = None


class MergeResult(NamedTuple):
    merged: tuple[EntityMention, ...]
    conflicts: tuple[Conflict, ...]
    origins: tuple[int, ...]  # phase index that contributed each merged mention


@dataclass(frozen=True)
class SentenceOutcome:
    sentence_id: str
    text: str
    gold: tuple[EntityMention, ...] = ()
    phase_results: tuple[PhaseResult, ...] = ()
    merged: tuple[EntityMention, ...] = ()
    origins: tuple[int, ...] = ()
    conflicts: tuple[Conflict, ...] = ()
    transcripts: tuple[DialogueTranscript, ...] = ()
    error: str | None = None

    @property
    def aborted(self) -> bool:
        return self.error is not None


def merge(phase_results: Sequence[PhaseResult]) -> MergeResult:
    """Union phase lists in order.

    Equal keys are dropped silently. A later mention whose surface is already
    held under another type loses to the earlier one and is reported.
    """
    if not phase_results:
        raise ValueError("merge needs at least one phase result")
    merged: list[EntityMention] = []
    origins: list[int] = []
    conflicts: list[Conflict] = []
    keys = set()
    by_surface: dict[str, EntityMention] = {}
    for pr in phase_results:
        for m in pr.verified:
            m = normalize_mention(m)
            k = mention_key(m)
            if k in keys:
                continue
            held = by_surface.get(m.surface)
            if held is not None:
                conflicts.append(Conflict(m, TYPE_CONFLICT, pr.phase_index, held))
                continue
            keys.add(k)
            by_surface[m.surface] = m
            merged.append(m)
            origins.append(pr.phase_index)
    return MergeResult(tuple(merged), tuple(conflicts), tuple(origins))


class TwoPhaseRecognizer:
    def __init__(
        self,
        client: ChatClient,
        schema: TypeSchema,
        templates: PromptTemplateSet,
        config: PipelineConfig | None = None,
    ) -> None:
        self.client = client
        self.schema = schema
        self.templates = templates
        self.config = config or PipelineConfig()

    def _support_for(self, support: Sequence[SupportExample] | None) -> Sequence[SupportExample] | None:
        if self.config.shot_mode == "few":
            if not support:
                raise ValueError("few-shot mode needs support examples")
            return support
        return None

    def run_phase(
        self,
        sentence: Sentence,
        prior: Sequence[EntityMention],
        phase_index: int,
        support: Sequence[SupportExample] | None = None,
    ) -> tuple[PhaseResult, DialogueTranscript]:
        if phase_index < 1:
            raise ValueError("phase_index is 1-based")
        if phase_index == 1 and prior:
            raise ValueError("the recognition phase takes no prior entities")
        support = self._support_for(support)
        cfg = self.config
        session = self.client.open_session(
            cfg.system_preamble, phase_index=phase_index, template_version=self.templates.version
        )
        try:
            if phase_index == 1:
                prompt = build_recognition_prompt(self.schema, sentence, support, self.templates)
            else:
                prompt = build_re_recognition_prompt(self.schema, sentence, prior, support, self.templates)
            parsed = parse_entity_list(session.send(prompt), self.schema)

            distinct = list(dict.fromkeys(parsed.mentions))
            candidates = distinct[: cfg.max_candidates_per_turn]
            overflow = distinct[cfg.max_candidates_per_turn:]

            audits = []
            for m in candidates:
                in_text = m.surface in sentence.text
                if not cfg.verification_enabled:
                    audits.append(VerificationAudit(m, "skipped", True, "", in_text))
                    continue
                reply = session.send(build_verification_prompt(m, sentence, self.templates))
                verdict = parse_verdict(reply).value
                kept = verdict == "yes" or (verdict == "ambiguous" and cfg.ambiguous_verdict_policy == "keep")
                audits.append(VerificationAudit(m, verdict, kept, reply, in_text))
        except BackendError as exc:
            raise PipelineError(sentence.id, phase_index, exc) from exc

        result = PhaseResult(
            phase_index=phase_index,
            candidates=tuple(candidates),
            verified=tuple(a.mention for a in audits if a.kept),
            audits=tuple(audits),
            overflow=tuple(overflow),
            rejects=parsed.rejects,
        )
        return result, session.transcript

    def run_sentence(self, sentence: Sentence, support: Sequence[SupportExample] | None = None) -> SentenceOutcome:
        results: list[PhaseResult] = []
        transcripts: list[DialogueTranscript] = []
        prior: tuple[EntityMention, ...] = ()
        for phase_index in range(1, self.config.re_recognition_rounds + 2):
            if results:
                prior = merge(results).merged
            pr, tr = self.run_phase(sentence, prior, phase_index, support)
            results.append(pr)
            transcripts.append(tr)
        mr = merge(results)
        cap_conflicts = tuple(Conflict(m, CAP, pr.phase_index) for pr in results for m in pr.overflow)
        return SentenceOutcome(
            sentence_id=sentence.id,
            text=sentence.text,
            gold=sentence.gold,
            phase_results=tuple(results),
            merged=mr.merged,
            origins=mr.origins,
            conflicts=mr.conflicts + cap_conflicts,
            transcripts=tuple(transcripts),
        )

    def safe_run_sentence(self, sentence: Sentence, support: Sequence[SupportExample] | None = None) -> SentenceOutcome:
        """Like run_sentence, but a fatal backend error becomes an aborted outcome."""
        try:
            return self.run_sentence(sentence, support)
        except PipelineError as exc:
            log.error("aborting %s", exc)
            return SentenceOutcome(sentence.id, sentence.text, sentence.gold, error=str(exc))


@dataclass(frozen=True)
class WorkItem:
    """One query sentence with the support set it is prompted with."""

    id: str
    sentence: Sentence
    support: tuple[SupportExample, ...] | None = field(default=None)


def run_items(
    recognizer: TwoPhaseRecognizer,
    items: Sequence[WorkItem],
    workers: int = 1,
    on_done: Callable[[SentenceOutcome], None] | None = None,
) -> list[SentenceOutcome]:
    """Run every item, in parallel up to ``workers``; output sorted by item id."""

    def one(item: WorkItem) -> SentenceOutcome:
        sentence = item.sentence if item.id == item.sentence.id else Sentence(item.id, item.sentence.text, item.sentence.gold)
        outcome = recognizer.safe_run_sentence(sentence, item.support)
        if on_done is not None:
            on_done(outcome)
        return outcome

    if workers <= 1:
        outcomes = [one(it) for it in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, items))
    return sorted(outcomes, key=lambda o: o.sentence_id)
