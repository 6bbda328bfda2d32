import pytest
from hypothesis import given
from hypothesis import strategies as st

from twophase_ner.core import (
    DialogueTranscript,
    EmptySurface,
    EntityMention,
    EntityType,
    PhaseResult,
    SchemaError,
    Sentence,
    SupportExample,
    Turn,
    TypeSchema,
    VerificationAudit,
    dedupe,
    mention_key,
    normalize_mention,
)

M = EntityMention


@pytest.mark.parametrize(
    "raw, expected",
    [
        (M("Location", "  Yate "), M("Location", "Yate")),
        (M("Location", "Yate"), M("Location", "Yate")),
        (M("Organization", "University  of\tExeter"), M("Organization", "University of Exeter")),
    ],
)
def test_normalize_mention(raw, expected):
    assert normalize_mention(raw) == expected


def test_whitespace_only_surface_is_rejected():
    with pytest.raises(EmptySurface):
        normalize_mention(M("Location", " \t\n "))


@given(st.text(min_size=1).filter(lambda s: s.strip()), st.sampled_from(["Location", "Person"]))
def test_normalize_is_idempotent(surface, type_name):
    once = normalize_mention(M(type_name, surface))
    assert normalize_mention(once) == once
    assert once.surface == once.surface.strip()
    assert "  " not in once.surface


def test_mention_key_comparison_table():
    # hand-built truth table
    table = [
        (M("Location", "Yate"), M("Location", "Yate"), True),
        (M("Location", "Yate"), M("Organization", "Yate"), False),
        (M("Location", "yate"), M("Location", "Yate"), False),
        (M("location", "Yate"), M("Location", "Yate"), False),
    ]
    for a, b, same in table:
        assert (mention_key(a) == mention_key(b)) is same


@given(st.lists(st.tuples(st.sampled_from(["A", "B"]), st.sampled_from(["x", "y", "X", "x y"])), max_size=12))
def test_dedupe_leaves_unique_keys(pairs):
    out = dedupe(M(t, s) for t, s in pairs)
    keys = [mention_key(m) for m in out]
    assert len(keys) == len(set(keys))
    assert set(keys) == {(t, s) for t, s in pairs}


def test_schema_invariants():
    with pytest.raises(SchemaError):
        TypeSchema(())
    with pytest.raises(SchemaError):
        TypeSchema((EntityType("Location", "a"), EntityType("Location", "b")))
    with pytest.raises(SchemaError):
        TypeSchema((EntityType("Location", "a", ("LOC",)), EntityType("Place", "b", ("LOC",))))


def test_full_name_rule():
    with pytest.raises(SchemaError):
        EntityType("LOC", "abbreviated", ("LOC",))
    with pytest.raises(SchemaError):
        EntityType("ORG Unit", "abbreviated", ("B-ORG",))
    EntityType("Location", "full name", ("LOC", "B-LOC"))


def test_type_for_tag(conll_schema, fewnerd_schema):
    assert conll_schema.type_for_tag("LOC") == "Location"
    assert conll_schema.type_for_tag("B-ORG") == "Organization"
    assert conll_schema.type_for_tag("I-PER") == "Person"
    assert conll_schema.type_for_tag("WIDGET") is None
    assert fewnerd_schema.type_for_tag("person-actor") == "Person"
    assert fewnerd_schema.type_for_tag("location") == "Location"
    assert fewnerd_schema.type_for_tag("art-music") == "Art"


def test_sentence_gold_must_be_substrings():
    Sentence("s", "Yate is nice", (M("Location", "Yate"),))
    with pytest.raises(ValueError):
        Sentence("s", "Yate is nice", (M("Location", "Bristol"),))
    with pytest.raises(ValueError):
        Sentence("s", "   ")
    with pytest.raises(ValueError):
        SupportExample("Yate is nice", (M("Location", "Exeter"),))


def test_sentence_gold_is_deduplicated():
    s = Sentence("s", "Yate and Yate", (M("Location", "Yate"), M("Location", " Yate")))
    assert s.gold == (M("Location", "Yate"),)


def test_transcript_alternation():
    ok = DialogueTranscript(1, (Turn("system", "be brief"), Turn("user", "a"), Turn("assistant", "b")))
    ok.validate()
    assert ok.exchanges == 1
    with pytest.raises(ValueError):
        DialogueTranscript(1, (Turn("assistant", "b"),)).validate()
    with pytest.raises(ValueError):
        DialogueTranscript(1, (Turn("user", "a"), Turn("user", "b"))).validate()


def test_phase_result_invariants():
    a, b = M("Location", "Yate"), M("Person", "Bob")
    audits = (VerificationAudit(a, "yes", True), VerificationAudit(b, "no", False))
    PhaseResult(1, (a, b), (a,), audits)
    with pytest.raises(ValueError):
        PhaseResult(1, (a,), (a, b), audits[:1])
    with pytest.raises(ValueError):
        PhaseResult(1, (a, b), (a,), audits[:1])
