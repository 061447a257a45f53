import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from harcap.dataset import (
    CaptionRecord,
    Manifest,
    VideoRecord,
    keyword_hits,
    lexicon_from_mapping,
    load_captions,
    load_lexicon,
    load_manifest,
    normalize_tokens,
    save_captions,
    save_lexicon,
    save_manifest,
)
from harcap.errors import DuplicateId, DuplicateKeyword, EmptyEntry, MissingLexiconEntry, ParseError

HEADER = "video_id,label,subject_id,camera_id,frames_uri\n"


class TestNormalizeTokens:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("The person is cleaning dishes.", ["the", "person", "is", "clean", "dish"]),
            ("", []),
            ("WIPES", ["wipe"]),
            ("wiping", ["wip"]),
            ("boxes glasses dresses", ["box", "glass", "dress"]),
            ("is was us", ["is", "was", "us"]),
            ("reading--a_book!", ["read", "a", "book"]),
        ],
    )
    def test_examples(self, text, expected):
        assert normalize_tokens(text) == expected

    @given(st.text())
    def test_idempotent_on_outputs(self, text):
        for tok in normalize_tokens(text):
            assert normalize_tokens(tok) == [tok]

    @given(st.text())
    def test_no_empty_tokens(self, text):
        assert all(normalize_tokens(text))


class TestKeywordHits:
    def test_kitchen_caption(self, cook_keywords):
        hits = keyword_hits("The person is cleaning the kitchen counter", cook_keywords)
        assert hits == ["clean", "counter", "kitchen"]

    def test_no_overlap(self):
        assert keyword_hits("The person sleeps", ["wipe", "dish"]) == []

    def test_ing_suffix(self):
        assert keyword_hits("wiping", ["wipe"]) == ["wipe"]

    @pytest.mark.parametrize("caption", ["wiped", "wipes", "Wipe.", "WIPING the table"])
    def test_inflections_of_wipe(self, caption):
        assert keyword_hits(caption, ["wipe"]) == ["wipe"]

    def test_token_not_substring(self):
        # "scrub" must not fire inside a longer word
        assert keyword_hits("a scrubby-looking rag", ["scrub"]) == []
        assert keyword_hits("dishwasher", ["dish"]) == []

    def test_repeated_keyword_reported_once(self, cook_keywords):
        assert keyword_hits("wipe wipe", cook_keywords) == ["wipe"]

    def test_hyphenated_keyword_matches_as_phrase(self):
        assert keyword_hits("putting on a t-shirt", ["t-shirt"]) == ["t-shirt"]
        assert keyword_hits("a shirt", ["t-shirt"]) == []

    @given(st.text(max_size=60), st.text(max_size=60), st.lists(st.sampled_from(
        ["wipe", "dish", "clean", "cook", "read", "book", "cup", "phone"]), max_size=6))
    def test_monotone_subset_unique(self, caption, suffix, keywords):
        before = keyword_hits(caption, keywords)
        after = keyword_hits(caption + " " + suffix, keywords)
        assert set(before) <= set(after)
        assert set(after) <= set(keywords)
        assert len(after) == len(set(after))
        # lexicon order
        assert after == sorted(after, key=keywords.index)


class TestManifest:
    def test_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(HEADER + "v1,A,1,1,f/1\nv2,B,2,2,f/2\nv3,A,3,1,f/3\n")
        m = load_manifest(p)
        assert len(m) == 3
        assert m.taxonomy == {"A", "B"}
        assert [r.video_id for r in m] == ["v1", "v2", "v3"]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        m = load_manifest(p)
        assert len(m) == 0 and m.taxonomy == frozenset()

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text(HEADER + "v1,A,1,1,f/1\nv1,B,2,2,f/2\n")
        with pytest.raises(DuplicateId):
            load_manifest(p)

    @pytest.mark.parametrize("row", ["v1,A,1,1", "v1,A,x,1,f", "v1,,1,1,f", "v1,A,-1,1,f", "v1,A,1,1,f,extra"])
    def test_malformed_rows(self, tmp_path, row):
        p = tmp_path / "m.csv"
        p.write_text(HEADER + row + "\n")
        with pytest.raises(ParseError):
            load_manifest(p)

    def test_missing_header_column(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("video_id,label\nv1,A\n")
        with pytest.raises(ParseError):
            load_manifest(p)

    def test_jsonl_and_round_trip(self, tmp_path):
        records = [VideoRecord("b", "X", 4, 2, "f/b"), VideoRecord("a", "Y", 3, 1, "f/a")]
        m = Manifest.from_records(records)
        for name in ("m.csv", "m.jsonl"):
            save_manifest(m, tmp_path / name)
            assert load_manifest(tmp_path / name) == m

    def test_jsonl_bad_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"video_id": "v1"\n')
        with pytest.raises(ParseError):
            load_manifest(p)


class TestLexicon:
    def test_cook_cleanup_has_18_keywords(self, tmp_path, cook_keywords):
        p = tmp_path / "lex.json"
        p.write_text(json.dumps({"Cook_Cleanup": cook_keywords}))
        lex = load_lexicon(p)
        assert len(lex["Cook_Cleanup"]) == 18
        assert lex["Cook_Cleanup"][0] == "cook" and lex["Cook_Cleanup"][-1] == "neat"

    def test_empty_entry(self):
        with pytest.raises(EmptyEntry):
            lexicon_from_mapping({"A": []})

    def test_case_collision(self):
        with pytest.raises(DuplicateKeyword):
            lexicon_from_mapping({"A": ["Wipe", "wipe"]})

    def test_lowercases(self):
        assert lexicon_from_mapping({"A": ["Wipe", "DISH"]})["A"] == ("wipe", "dish")

    @pytest.mark.parametrize("bad", [["two words"], [""], "wipe", [1]])
    def test_bad_keywords(self, bad):
        with pytest.raises(ParseError):
            lexicon_from_mapping({"A": bad})

    def test_not_a_mapping(self, tmp_path):
        p = tmp_path / "lex.json"
        p.write_text("[1, 2]")
        with pytest.raises(ParseError):
            load_lexicon(p)

    def test_missing_label(self, lexicon):
        with pytest.raises(MissingLexiconEntry):
            lexicon["Nope"]

    def test_round_trip(self, tmp_path, lexicon):
        save_lexicon(lexicon, tmp_path / "l.json")
        assert load_lexicon(tmp_path / "l.json") == lexicon


class TestCaptions:
    def test_round_trip(self, tmp_path):
        recs = [
            CaptionRecord("v1", "A", "The person wipes.", ("wipe",), 2, "verified"),
            CaptionRecord("v2", "B", "Someone stands.", (), 5, "exhausted"),
        ]
        save_captions(recs, tmp_path / "c.jsonl")
        assert load_captions(tmp_path / "c.jsonl") == recs

    def test_empty(self, tmp_path):
        save_captions([], tmp_path / "c.jsonl")
        assert (tmp_path / "c.jsonl").read_text() == ""
        assert load_captions(tmp_path / "c.jsonl") == []

    def test_verified_without_hits_rejected(self, tmp_path):
        p = tmp_path / "c.jsonl"
        p.write_text(json.dumps({"video_id": "v", "label": "A", "caption": "x", "matched_keywords": [],
                                 "attempts": 1, "status": "verified"}) + "\n")
        with pytest.raises(ParseError):
            load_captions(p)

    @pytest.mark.parametrize("attempts, status", [(0, "exhausted"), (1, "done")])
    def test_invalid_records(self, attempts, status):
        with pytest.raises(ParseError):
            CaptionRecord("v", "A", "x", (), attempts, status)
