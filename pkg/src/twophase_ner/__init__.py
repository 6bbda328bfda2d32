"""Two-phase zero/few-shot named entity recognition with chat LLMs."""

from .core import (
    DialogueTranscript,
    EntityMention,
    EntityType,
    PhaseResult,
    Sentence,
    SupportExample,
    TypeSchema,
    mention_key,
    normalize_mention,
)
from .datasets import load_corpus, load_schema
from .llm_client import ChatClient, OpenAICompatibleBackend, ScriptedBackend
from .pipeline import PipelineConfig, SentenceOutcome, TwoPhaseRecognizer, merge
from .prompting import PromptTemplateSet, load_templates
from .scoring import Metrics, aggregate, score_sentence

__version__ = "0.1.0"

__all__ = [
    "ChatClient",
    "DialogueTranscript",
    "EntityMention",
    "EntityType",
    "Metrics",
    "OpenAICompatibleBackend",
    "PhaseResult",
    "PipelineConfig",
    "PromptTemplateSet",
    "ScriptedBackend",
    "Sentence",
    "SentenceOutcome",
    "SupportExample",
    "TwoPhaseRecognizer",
    "TypeSchema",
    "aggregate",
    "load_corpus",
    "load_schema",
    "load_templates",
    "merge",
    "mention_key",
    "normalize_mention",
    "score_sentence",
]
