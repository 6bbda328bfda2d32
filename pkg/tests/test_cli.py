import json
import shutil
from pathlib import Path

import pytest

from twophase_ner.cli import ConfigError, RunConfig, main, read_config_file, resolve_config, run
from twophase_ner.datasets import write_bio

from helpers import ROWLING_BIO, ROWLING_REPLIES, ROWLING_TEXT, scripted_corpus

DEMO = Path(__file__).resolve().parent.parent / "demo"


@pytest.fixture
def scripted(tmp_path):
    sc = scripted_corpus(n=8)
    corpus, script = sc.write(tmp_path)
    return sc, corpus, script


def _args(corpus, script, out, *extra):
    return ["run", "--corpus", str(corpus), "--backend", "scripted", "--script", str(script),
            "--output-dir", str(out), *extra]


def test_run_writes_outputs(scripted, tmp_path, capsys):
    sc, corpus, script = scripted
    out = tmp_path / "out"
    assert main(_args(corpus, script, out)) == 0
    assert "P=1.000 R=1.000 F1=1.000" in capsys.readouterr().out
    assert {p.name for p in out.iterdir()} == {"report.json", "report.md", "timing.json", "predictions.jsonl", "transcripts"}
    rows = [json.loads(line) for line in (out / "predictions.jsonl").read_text().splitlines()]
    assert len(rows) == 8
    assert len(list((out / "transcripts").glob("*.json"))) == 8
    report = json.loads((out / "report.json").read_text())
    assert "duration_seconds" not in report
    assert "api_key" not in report["config"]


def test_invalid_schema_path_fails_before_any_output(scripted, tmp_path, capsys):
    _, corpus, script = scripted
    out = tmp_path / "never"
    assert main(_args(corpus, script, out, "--schema", str(tmp_path / "missing.json"))) == 2
    assert "schema file not found" in capsys.readouterr().err
    assert not out.exists()
    with pytest.raises(ConfigError):
        run(RunConfig(corpus=str(corpus), schema="nope.json", backend="scripted", script=str(script),
                      output_dir=str(out)))
    assert not out.exists()


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"backend": "scripted"}, "needs a script"),
        ({"shot_mode": "few"}, "n_way and k_shot"),
        ({"n_way": 2}, "zero-shot mode"),
        ({"rounds": -1}, "rounds"),
    ],
)
def test_config_validation(scripted, overrides, message):
    _, corpus, _ = scripted
    with pytest.raises(ConfigError, match=message):
        RunConfig(corpus=str(corpus), **overrides).validate()


def test_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nmodel = from-file\nrounds = 2\ncorpus = data/c.conll\nschema = conll2003\n")
    env = {"TWOPHASE_NER_MODEL": "from-env", "TWOPHASE_NER_RETRIES": "9"}
    c = resolve_config(cfg, {"rounds": 0, "workers": None}, env)
    assert c.model == "from-file"  # file beats env
    assert c.retries == 9  # env beats default
    assert c.rounds == 0  # CLI beats file
    assert c.workers == 1  # unset CLI flag leaves the default
    assert c.corpus == str(tmp_path / "data" / "c.conll")
    assert c.schema == "conll2003"


def test_config_file_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    with pytest.raises(ConfigError, match="unknown setting"):
        read_config_file(bad)
    bad.write_text("rounds = many\n")
    with pytest.raises(ConfigError, match="bad value"):
        read_config_file(bad)
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.cfg")


def test_rounds_zero_versus_one(scripted, tmp_path):
    sc, corpus, script = scripted
    reports = {}
    for rounds in (0, 1):
        out = tmp_path / f"r{rounds}"
        assert main(_args(corpus, script, out, "--rounds", str(rounds))) == 0
        reports[rounds] = json.loads((out / "report.json").read_text())
    assert [p["phase_index"] for p in reports[0]["phase_stats"]] == [1]
    phase2 = reports[1]["phase_stats"][1]
    assert phase2["added"] == sum(len(v) for v in sc.phase2_new.values()) > 0
    assert reports[1]["metrics"]["recall"] > reports[0]["metrics"]["recall"]


def test_aborted_run_exits_one(tmp_path, capsys):
    corpus = tmp_path / "c.conll"
    write_bio([ROWLING_BIO], corpus)
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"rules": {ROWLING_TEXT: ROWLING_REPLIES[:3]}}))
    assert main(_args(corpus, script, tmp_path / "out")) == 1
    assert "aborted" in capsys.readouterr().err
    row = json.loads((tmp_path / "out" / "predictions.jsonl").read_text())
    assert row["entities"] == [] and "phase 1: ScriptExhausted" in row["error"]


def test_annotate(tmp_path, capsys):
    text = tmp_path / "in.txt"
    text.write_text(ROWLING_TEXT + "\n")
    script = tmp_path / "s.json"
    script.write_text(json.dumps({"rules": {ROWLING_TEXT: ROWLING_REPLIES}}))
    assert main(["annotate", str(text), "--backend", "scripted", "--script", str(script)]) == 0
    (row,) = json.loads(capsys.readouterr().out)
    assert row["entities"][0] == {"type": "Person", "surface": "Rowling"}
    assert len(row["entities"]) == 5


def test_score_subcommand(tmp_path, capsys):
    corpus = tmp_path / "c.conll"
    write_bio([ROWLING_BIO], corpus)
    preds = tmp_path / "p.jsonl"
    preds.write_text(json.dumps({"id": "c-000000", "entities": [
        {"type": "Person", "surface": "Rowling"}, {"type": "Location", "surface": "University of Exeter"}]}) + "\n")
    assert main(["score", "--predictions", str(preds), "--corpus", str(corpus)]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["metrics"]["true_positives"] == 1
    assert result["metrics"]["false_positives"] == 1
    assert result["metrics"]["false_negatives"] == 4
    assert result["missing_predictions"] == 0


def test_score_rejects_unknown_sentence(tmp_path, capsys):
    corpus = tmp_path / "c.conll"
    write_bio([ROWLING_BIO], corpus)
    preds = tmp_path / "p.jsonl"
    preds.write_text(json.dumps({"id": "other", "entities": []}) + "\n")
    assert main(["score", "--predictions", str(preds), "--corpus", str(corpus)]) == 2


def test_shipped_demo_config(tmp_path, capsys):
    demo = tmp_path / "demo"
    shutil.copytree(DEMO, demo)
    out = tmp_path / "demo-out"
    assert main(["run", "--config", str(demo / "rowling.cfg"), "--output-dir", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["metrics"]["f1"] == 1.0
    assert [p["backend_calls"] for p in report["phase_stats"]] == [4, 5]


def test_cache_dir_makes_reruns_free(scripted, tmp_path):
    _, corpus, script = scripted
    cache = tmp_path / "cache"
    for name in ("a", "b"):
        assert main(_args(corpus, script, tmp_path / name, "--cache-dir", str(cache))) == 0
    first = json.loads((tmp_path / "a" / "report.json").read_text())["cache"]
    second = json.loads((tmp_path / "b" / "report.json").read_text())["cache"]
    assert second["backend_calls"] == 0
    assert second["hits"] == first["backend_calls"]
