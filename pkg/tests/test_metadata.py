import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from pianocurate import metadata as md
from pianocurate import prompts
from pianocurate.errors import MalformedResponse
from pianocurate.metadata import MetadataRecord


def rules(raw, strict=False):
    return sorted((v.field, v.rule) for v in md.validate(raw, strict).violations)


class TestPrompt:
    def test_template_and_tags(self):
        text = md.build_prompt("Chopin Nocturne Op. 9", "Played live")
        assert text.startswith(prompts.metadata_prompt())
        assert "<title>Chopin Nocturne Op. 9</title>" in text
        assert "<description>Played live</description>" in text

    def test_empty_description_keeps_block(self):
        assert "<description></description>" in md.build_prompt("Bill Evans solo", "")

    def test_title_escaped(self):
        text = md.build_prompt("a < b </title>", "")
        assert "</title>" in text and "&lt;/title&gt;" in text and "a &lt; b" in text

    def test_empty_title(self):
        with pytest.raises(ValueError):
            md.build_prompt("")


class TestParse:
    def test_example_one(self):
        text = ('reasoning first\n{"composer": "chopin", "opus": 9, "piece_number": 2, "genre": "classical", '
                '"form": "nocturne", "performer": "rousseau", "key_signature": "eb", "difficulty": "advanced", '
                '"music_period": "romantic"}')
        rec = md.extract(text).record
        assert rec == MetadataRecord("chopin", 9, 2, "classical", "nocturne", "rousseau", "eb", "advanced", "romantic")

    def test_digit_string_opus(self):
        raw = md.parse_metadata_response('{"composer": "beethoven", "opus": "110"}')
        assert raw.values["opus"] == 110 and raw.coerced == ("opus",)
        result = md.validate(raw)
        assert result.record.opus == 110 and result.ok
        assert any(n.startswith("opus:") for n in result.notes)

    def test_prose_only(self):
        with pytest.raises(MalformedResponse):
            md.parse_metadata_response("I cannot tell who wrote this.")

    def test_last_object_wins(self):
        raw = md.parse_metadata_response('draft {"composer": "liszt"} final {"composer": "chopin"}')
        assert raw.values == {"composer": "chopin"}

    def test_unknown_keys_dropped(self):
        raw = md.parse_metadata_response('{"composer": "bach", "year": 1720}')
        assert raw.values == {"composer": "bach"} and raw.unknown_keys == ("year",)

    def test_braces_inside_strings(self):
        raw = md.parse_metadata_response('{"performer": "a}b", "composer": "x"}')
        assert raw.values["composer"] == "x"


class TestValidate:
    def test_key_signature_examples(self):
        for key in ("c", "f#m", "bb"):
            assert md.validate({"key_signature": key}).ok

    def test_rule_1_placeholders(self):
        assert rules({"composer": "Unknown", "performer": "", "opus": None}) == [
            ("composer", 1), ("opus", 1), ("performer", 1)
        ]

    def test_rule_3_integers(self):
        assert rules({"opus": 0}) == [("opus", 3)]
        assert rules({"opus": "9a"}) == [("opus", 3)]
        assert rules({"opus": 9.5}) == [("opus", 3)]
        assert rules({"opus": True}) == [("opus", 3)]

    def test_rule_7_single_lowercase_word(self):
        assert rules({"composer": "Chopin"}) == [("composer", 7)]
        assert rules({"composer": "de falla"}) == [("composer", 7)]
        assert rules({"composer": 42}) == [("composer", 7)]
        assert md.validate({"composer": "rimsky-korsakov"}).ok

    def test_rule_7_transliteration(self):
        result = md.validate({"composer": "dvořák"})
        assert result.record.composer == "dvorak" and result.notes
        assert rules({"composer": "肖邦"}) == [("composer", 7)]

    def test_rule_9_key_grammar(self):
        for bad in ("Eb", "e-flat", "h", "cmaj", "c#mm"):
            assert rules({"key_signature": bad}) == [("key_signature", 9)], bad

    def test_closed_enums(self):
        assert rules({"genre": "salsa"}) == [("genre", None)]
        assert rules({"difficulty": "Intermediate"}) == [("difficulty", 7)]
        assert md.validate({"music_period": "impressionist"}).ok

    def test_piece_number_needs_opus(self):
        result = md.validate({"composer": "chopin", "piece_number": 2})
        assert rules({"composer": "chopin", "piece_number": 2}) == [("piece_number", 11)]
        assert result.record == MetadataRecord(composer="chopin")

    def test_lenient_keeps_good_fields(self):
        result = md.validate({"composer": "chopin", "genre": "salsa"})
        assert result.record == MetadataRecord(composer="chopin") and not result.ok

    def test_strict_rejects_record(self):
        result = md.validate({"composer": "chopin", "genre": "salsa"}, strict=True)
        assert result.record is None and len(result.violations) == 1


class TestKeys:
    def test_triple(self):
        assert md.composition_key(MetadataRecord("chopin", 9, 2)).as_tuple() == ("chopin", 9, 2)

    def test_no_opus(self):
        assert md.composition_key(MetadataRecord("bach")) is None

    def test_no_piece(self):
        assert md.composition_key(MetadataRecord("beethoven", 110)).as_tuple() == ("beethoven", 110, None)


def test_presence():
    recs = [MetadataRecord("chopin", 9), MetadataRecord("bach"), MetadataRecord(genre="jazz"), MetadataRecord()]
    got = md.presence(recs)
    assert got["composer"] == 50.0 and got["opus"] == 25.0 and got["genre"] == 25.0 and got["form"] == 0.0


words = st.from_regex(r"[a-z0-9]+(-[a-z0-9]+)?", fullmatch=True).filter(lambda w: w not in md._PLACEHOLDERS)
records = st.builds(
    MetadataRecord,
    composer=st.none() | words,
    opus=st.none() | st.integers(1, 10_000),
    piece_number=st.none(),
    genre=st.none() | st.sampled_from(sorted(md.GENRES)),
    form=st.none() | words,
    performer=st.none() | words,
    key_signature=st.none() | st.from_regex(md.KEY_SIGNATURE_RE, fullmatch=True),
    difficulty=st.none() | st.sampled_from(sorted(md.DIFFICULTIES)),
    music_period=st.none() | st.sampled_from(sorted(md.PERIODS)),
).flatmap(lambda r: st.just(r) if r.opus is None else st.builds(
    lambda p: MetadataRecord(**{**r.to_dict(), "piece_number": p}), st.none() | st.integers(1, 50)))


@given(records)
def test_roundtrip(rec):
    result = md.extract("some reasoning\n" + rec.serialize())
    assert result.ok and result.record == rec
    assert MetadataRecord.from_dict(json.loads(rec.serialize())) == rec
