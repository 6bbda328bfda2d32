"""Command line entry point: ``twophase-ner run | annotate | score``.

Settings come from (lowest to highest precedence) built-in defaults,
``TWOPHASE_NER_*`` environment variables, a flat ``key = value`` config file
given with ``--config``, and command line flags.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import re
import sys
import time
import typing
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .core import NERError, Sentence
from .datasets import (
    BUILTIN_SCHEMAS,
    Corpus,
    EpisodeSpec,
    load_corpus,
    load_episodes,
    load_schema,
    sample_support_sentences,
    to_support,
    choose_types,
)
from .llm_client import Backend, BackendSettings, build_client
from .pipeline import PipelineConfig, SentenceOutcome, TwoPhaseRecognizer, WorkItem, run_items
from .prompting import load_templates
from .report import (
    RunReport,
    build_report,
    mention_from_dict,
    mention_to_dict,
    render_markdown,
    report_json,
    score_outcomes,
    transcript_to_dict,
)

log = logging.getLogger("twophase_ner")


class ConfigError(NERError):
    pass


@dataclass
class RunConfig:
    corpus: str | None = None
    corpus_format: str = "bio"
    schema: str = "conll2003"
    templates: str | None = None
    # backend
    backend: str = "live"
    script: str | None = None
    base_url: str = "http://localhost:8000"
    model: str = "vicuna"
    api_key: str | None = None
    timeout: float = 60.0
    retries: int = 3
    temperature: float = 0.0
    max_tokens: int = 512
    cache_dir: str | None = None
    no_cache: bool = False
    # pipeline
    rounds: int = 1
    verification: bool = True
    ambiguous_policy: str = "keep"
    shot_mode: str = "zero"
    max_candidates: int = 50
    # few-shot
    n_way: int | None = None
    k_shot: int | None = None
    seed: int = 0
    episodes: str | None = None
    support_corpus: str | None = None
    # run
    workers: int = 1
    output_dir: str = "runs/latest"
    label: str = "run"
    transcripts: bool = True
    unknown_tags: str = "error"
    limit: int | None = None

    def validate(self, need_corpus: bool = True) -> None:
        if need_corpus:
            if not self.corpus:
                raise ConfigError("no corpus given")
            _must_exist(self.corpus, "corpus")
        if self.schema not in BUILTIN_SCHEMAS:
            _must_exist(self.schema, "schema")
        if self.templates:
            _must_exist(self.templates, "templates")
        if self.corpus_format not in ("bio", "fewnerd", "text"):
            raise ConfigError(f"corpus_format must be bio, fewnerd or text, not {self.corpus_format!r}")
        if self.backend not in ("live", "scripted"):
            raise ConfigError(f"backend must be live or scripted, not {self.backend!r}")
        if self.backend == "scripted":
            if not self.script:
                raise ConfigError("the scripted backend needs a script file")
            _must_exist(self.script, "script")
        if self.shot_mode == "zero" and (self.n_way or self.k_shot or self.episodes or self.support_corpus):
            raise ConfigError("zero-shot mode does not take an episode spec")
        if self.shot_mode == "few":
            if self.episodes:
                _must_exist(self.episodes, "episodes")
            elif not (self.n_way and self.k_shot):
                raise ConfigError("few-shot mode needs n_way and k_shot, or an episodes file")
            if self.support_corpus:
                _must_exist(self.support_corpus, "support corpus")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        try:
            self.pipeline_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            re_recognition_rounds=self.rounds,
            verification_enabled=self.verification,
            ambiguous_verdict_policy=self.ambiguous_policy,
            shot_mode=self.shot_mode,
            max_candidates_per_turn=self.max_candidates,
        )

    def backend_settings(self) -> BackendSettings:
        return BackendSettings(
            kind=self.backend, base_url=self.base_url, model=self.model, api_key=self.api_key,
            timeout=self.timeout, retries=self.retries, temperature=self.temperature,
            max_tokens=self.max_tokens, cache_dir=self.cache_dir, no_cache=self.no_cache, script=self.script,
        )

    def echo(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("api_key")
        return d


def _must_exist(path: str, what: str) -> None:
    if not Path(path).is_file():
        raise ConfigError(f"{what} file not found: {path}")


# -- config loading ------------------------------------------------------------

_HINTS = typing.get_type_hints(RunConfig)
_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    if not isinstance(value, str):
        return value
    hint = str(_HINTS[name])
    if value.strip().lower() in ("", "none", "null") and "None" in hint:
        return None
    try:
        if "bool" in hint:
            v = value.strip().lower()
            if v in ("1", "true", "yes", "on"):
                return True
            if v in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if "int" in hint:
            return int(value)
        if "float" in hint:
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {value!r}") from None
    return value


def read_config_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), inline_comment_prefixes=None)
    try:
        parser.read_string("[run]\n" + p.read_text(encoding="utf-8"), source=str(p))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    out = {}
    base = p.parent
    for key, value in parser["run"].items():
        name = key.replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(f"{path}: unknown setting {key!r}")
        value = _coerce(name, value)
        # relative paths in a config file resolve against the file's directory
        if name in _PATH_FIELDS and value and not (name == "schema" and value in BUILTIN_SCHEMAS):
            value = os.path.normpath(base / value) if not os.path.isabs(value) else value
        out[name] = value
    return out


_PATH_FIELDS = {"corpus", "schema", "templates", "script", "cache_dir", "episodes", "support_corpus", "output_dir"}


def resolve_config(
    config_file: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    values: dict[str, Any] = {}
    values.update(BackendSettings.from_env(environ))
    if config_file:
        values.update(read_config_file(config_file))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = _coerce(k, v)
    return RunConfig(**values)


# -- run -------------------------------------------------------------------------

def _load_inputs(config: RunConfig):
    try:
        schema = load_schema(config.schema)
        templates = load_templates(config.templates)
        corpus = load_corpus(config.corpus, config.corpus_format, schema, config.unknown_tags)
    except (OSError, NERError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot load run inputs: {exc}") from exc
    return schema, templates, corpus


def plan_items(config: RunConfig, corpus: Corpus) -> list[WorkItem]:
    queries: Sequence[Sentence] = corpus.sentences
    if config.shot_mode == "zero":
        items = [WorkItem(s.id, s) for s in queries]
    elif config.episodes:
        support_corpus = None
        if config.support_corpus:
            support_corpus = load_corpus(config.support_corpus, config.corpus_format, corpus.schema, config.unknown_tags)
        items = []
        for n, ep in enumerate(load_episodes(config.episodes, corpus, support_corpus)):
            for s in ep.query:
                items.append(WorkItem(f"ep{n:04d}:{s.id}", s, ep.support))
    else:
        pool = corpus
        if config.support_corpus:
            pool = load_corpus(config.support_corpus, config.corpus_format, corpus.schema, config.unknown_tags)
        spec = EpisodeSpec(config.n_way, config.k_shot, config.seed)
        chosen = sample_support_sentences(pool, spec)
        types = choose_types(pool, spec)
        support = tuple(to_support(s, types) for s in chosen)
        if pool is corpus:
            taken = {s.id for s in chosen}
            queries = [s for s in queries if s.id not in taken]
        items = [WorkItem(s.id, s, support) for s in queries]
    if config.limit is not None:
        items = items[: config.limit]
    return items


def _safe_name(sentence_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", sentence_id)


def write_outputs(report: RunReport, items: Sequence[WorkItem], out_dir: Path, transcripts: bool) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report_json(report, include_timing=False, include_transcripts=transcripts), encoding="utf-8")
    (out_dir / "report.md").write_text(render_markdown(report), encoding="utf-8")
    (out_dir / "timing.json").write_text(json.dumps({"duration_seconds": report.duration_seconds}) + "\n", encoding="utf-8")
    source = {it.id: it.sentence.id for it in items}
    with (out_dir / "predictions.jsonl").open("w", encoding="utf-8") as f:
        for o in report.outcomes:
            row = {
                "id": o.sentence_id,
                "sentence_id": source.get(o.sentence_id, o.sentence_id),
                "text": o.text,
                "entities": [mention_to_dict(m) for m in o.merged],
            }
            if o.error:
                row["error"] = o.error
            f.write(json.dumps(row, ensure_ascii=False) + "\n")
    if transcripts:
        tdir = out_dir / "transcripts"
        tdir.mkdir(exist_ok=True)
        for o in report.outcomes:
            doc = {"sentence_id": o.sentence_id, "text": o.text,
                   "phases": [transcript_to_dict(t) for t in o.transcripts]}
            (tdir / f"{_safe_name(o.sentence_id)}.json").write_text(
                json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def run(config: RunConfig, backend: Backend | None = None) -> RunReport:
    """Evaluate the recognizer over a labeled corpus and write report files."""
    config.validate()
    schema, templates, corpus = _load_inputs(config)
    try:
        items = plan_items(config, corpus)
    except (OSError, NERError, ValueError) as exc:
        raise ConfigError(f"cannot build the query set: {exc}") from exc

    client = build_client(config.backend_settings(), backend)
    recognizer = TwoPhaseRecognizer(client, schema, templates, config.pipeline_config())
    done = 0

    def progress(o: SentenceOutcome) -> None:
        nonlocal done
        done += 1
        log.debug("%d/%d %s", done, len(items), o.sentence_id)

    before = client.snapshot_stats()
    start = time.perf_counter()
    outcomes = run_items(recognizer, items, config.workers, progress)
    duration = time.perf_counter() - start
    after = client.snapshot_stats()
    cache = {
        "hits": after.hits - before.hits,
        "misses": after.misses - before.misses,
        "backend_calls": after.backend_calls - before.backend_calls,
    }
    if not config.transcripts:
        outcomes = [dataclasses.replace(o, transcripts=()) for o in outcomes]
    report = build_report(config.label, config.echo(), templates.version, client.model,
                          outcomes, schema, cache, duration)
    write_outputs(report, items, Path(config.output_dir), config.transcripts)
    return report


def annotate(config: RunConfig, input_path: str, backend: Backend | None = None) -> list[dict[str, Any]]:
    """Recognize entities in an unlabeled text file (one sentence per line)."""
    config = dataclasses.replace(config, corpus=input_path, corpus_format="text")
    config.validate()
    schema, templates, corpus = _load_inputs(config)
    items = plan_items(config, corpus)
    client = build_client(config.backend_settings(), backend)
    recognizer = TwoPhaseRecognizer(client, schema, templates, config.pipeline_config())
    outcomes = run_items(recognizer, items, config.workers)
    return [
        {"id": o.sentence_id, "text": o.text, "entities": [mention_to_dict(m) for m in o.merged],
         **({"error": o.error} if o.error else {})}
        for o in outcomes
    ]


def score_predictions(predictions_path: str | Path, corpus: Corpus) -> dict[str, Any]:
    """Re-score a predictions.jsonl file against a gold corpus."""
    gold = corpus.by_id()
    outcomes = []
    seen = set()
    with Path(predictions_path).open(encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            sid = row.get("sentence_id", row["id"])
            if sid not in gold:
                raise ConfigError(f"{predictions_path}:{line_no}: sentence {sid!r} is not in the gold corpus")
            seen.add(sid)
            pred = tuple(mention_from_dict(e) for e in row.get("entities", ()))
            s = gold[sid]
            outcomes.append(SentenceOutcome(row["id"], s.text, s.gold, merged=pred))
    missing = [s for s in corpus.sentences if s.id not in seen]
    outcomes += [SentenceOutcome(s.id, s.text, s.gold) for s in missing]
    overall, per_type = score_outcomes(outcomes, corpus.schema)
    return {
        "sentences": len(outcomes),
        "missing_predictions": len(missing),
        "metrics": overall.to_dict(),
        "per_type": {k: v.to_dict() for k, v in per_type.items()},
    }


# -- argparse --------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--schema", help="schema JSON file or builtin name (conll2003, fewnerd)")
    p.add_argument("--templates", help="prompt template file (default: packaged templates)")
    g = p.add_argument_group("backend")
    g.add_argument("--backend", choices=["live", "scripted"])
    g.add_argument("--script", help="reply script for the scripted backend (JSON)")
    g.add_argument("--base-url", dest="base_url")
    g.add_argument("--model")
    g.add_argument("--api-key", dest="api_key")
    g.add_argument("--timeout", type=float)
    g.add_argument("--retries", type=int)
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-tokens", dest="max_tokens", type=int)
    g.add_argument("--cache-dir", dest="cache_dir")
    g.add_argument("--no-cache", dest="no_cache", action="store_const", const=True,
                   help="skip cache reads (fresh sampling); new replies are still written")
    g = p.add_argument_group("pipeline")
    g.add_argument("--rounds", type=int, help="number of re-recognition rounds (default 1)")
    g.add_argument("--verification", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--ambiguous-policy", dest="ambiguous_policy", choices=["keep", "drop"])
    g.add_argument("--shot-mode", dest="shot_mode", choices=["zero", "few"])
    g.add_argument("--max-candidates", dest="max_candidates", type=int)
    g.add_argument("--n-way", dest="n_way", type=int)
    g.add_argument("--k-shot", dest="k_shot", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--episodes")
    g.add_argument("--support-corpus", dest="support_corpus")
    p.add_argument("--workers", type=int)
    p.add_argument("--limit", type=int, help="only process the first N sentences")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twophase-ner", description="Two-phase LLM named entity recognition.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="evaluate over a labeled corpus")
    p.add_argument("--corpus")
    p.add_argument("--format", dest="corpus_format", choices=["bio", "fewnerd"])
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--label")
    p.add_argument("--transcripts", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--unknown-tags", dest="unknown_tags", choices=["error", "skip"])
    _add_common(p)

    p = sub.add_parser("annotate", help="recognize entities in unlabeled text (one sentence per line)")
    p.add_argument("input")
    p.add_argument("-o", "--output", help="write entity JSON here instead of stdout")
    _add_common(p)

    p = sub.add_parser("score", help="re-score a predictions.jsonl file against gold")
    p.add_argument("--predictions", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--format", dest="corpus_format", choices=["bio", "fewnerd"], default="bio")
    p.add_argument("--schema", default="conll2003")
    p.add_argument("--unknown-tags", dest="unknown_tags", choices=["error", "skip"], default="error")
    p.add_argument("-o", "--output")
    return parser


_NOT_CONFIG = {"command", "config", "verbose", "input", "output", "predictions"}


def main(argv: Sequence[str] | None = None, backend: Backend | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "score":
            schema = load_schema(args.schema)
            corpus = load_corpus(args.corpus, args.corpus_format, schema, args.unknown_tags)
            result = score_predictions(args.predictions, corpus)
            _emit(json.dumps(result, indent=2), args.output)
            return 0

        overrides = {k: v for k, v in vars(args).items() if k not in _NOT_CONFIG}
        config = resolve_config(args.config, overrides)
        if args.command == "run":
            report = run(config, backend)
            m = report.metrics
            print(f"{len(report.outcomes)} sentences  P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}  "
                  f"-> {config.output_dir}")
            if report.aborted:
                print(f"{len(report.aborted)} sentence(s) aborted: {', '.join(report.aborted)}", file=sys.stderr)
                return 1
            return 0

        rows = annotate(config, args.input, backend)
        _emit(json.dumps(rows, indent=2, ensure_ascii=False), args.output)
        return 1 if any("error" in r for r in rows) else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NERError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


if __name__ == "__main__":
    raise SystemExit(main())
