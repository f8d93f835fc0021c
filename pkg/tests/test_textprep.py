import pytest
from hypothesis import given, strategies as st
from nltk.stem.snowball import EnglishStemmer

from relevance_forge.textprep import (
    PrepConfig,
    StopwordSet,
    SynonymDict,
    basic_tokenize,
    expand_synonyms,
    preprocess,
    remove_stopwords,
    stem,
)

USMC = SynonymDict.from_pairs([("usmc", "united states marine corps")])

# Words whose stems are fixed points of the stemmer.
LEXICON = [
    "guitars", "guitar", "running", "strings", "replace", "parts", "metal", "lines", "tone",
    "generously", "caresses", "flies", "dies", "mules", "denied", "died", "owned",
    "humbled", "sized", "meeting", "stating", "siezing", "itemization", "sensational",
    "traditional", "reference", "colonizer", "plotted", "cameras", "laptops", "sneakers",
    "headphones", "backpacks", "accessories", "wireless", "portable", "lightweight",
]


class TestBasicTokenize:
    @pytest.mark.parametrize(
        "text, expected",
        [
            ("", []),
            ("5Pcs B-2 Tone replace parts", ["5pcs", "b", "2", "tone", "replace", "parts"]),
            ("Guitar!!!  strings", ["guitar", "strings"]),
            ("café_crème naïve", ["café", "crème", "naïve"]),
            ("  \t\n ", []),
        ],
    )
    def test_examples(self, text, expected):
        assert basic_tokenize(text) == expected

    @given(st.text())
    def test_tokens_are_lowercase_alnum(self, text):
        for tok in basic_tokenize(text):
            assert tok
            assert tok == tok.lower()
            assert all(c.isalnum() for c in tok)

    @given(st.text())
    def test_idempotent_under_rejoin(self, text):
        toks = basic_tokenize(text)
        assert basic_tokenize(" ".join(toks)) == toks


class TestStopwords:
    def test_examples(self):
        assert remove_stopwords(["the", "guitar"], StopwordSet(frozenset({"the"}))) == ["guitar"]
        assert remove_stopwords(["guitar"], StopwordSet()) == ["guitar"]
        stops = StopwordSet(frozenset({"a", "of", "and"}))
        assert remove_stopwords(["a", "of", "and"], stops) == []

    def test_default_list(self):
        stops = StopwordSet.default()
        assert len(stops) == 179
        assert "the" in stops and "guitar" not in stops

    def test_rejects_bad_entries(self):
        with pytest.raises(ValueError):
            StopwordSet(frozenset({"The"}))
        with pytest.raises(ValueError):
            StopwordSet(frozenset({"a b"}))

    def test_load_skips_comments(self, tmp_path):
        path = tmp_path / "stops.txt"
        path.write_text("# comment\nthe\n\nA\n", encoding="utf-8")
        assert StopwordSet.load(path).words == frozenset({"the", "a"})

    @given(st.lists(st.sampled_from(["the", "a", "guitar", "red", "of", "strap"])),
           st.sets(st.sampled_from(["the", "a", "of", "red"])))
    def test_subsequence_and_idempotent(self, tokens, words):
        stops = StopwordSet(frozenset(words))
        once = remove_stopwords(tokens, stops)
        assert remove_stopwords(once, stops) == once
        it = iter(tokens)
        assert all(t in it for t in once)


class TestStem:
    def test_against_independent_porter2(self):
        oracle = EnglishStemmer()
        # "agreed" -> "agre" -> "agr": Porter2 is not idempotent in general
        for word in LEXICON + ["agreed", "agree", "skies", "dying", "news", "succeed"]:
            assert stem(word) == oracle.stem(word), word

    def test_examples(self):
        assert stem("guitars") == "guitar"
        assert stem("running") == "run"
        assert stem("42") == "42"

    def test_mixed_and_non_ascii_pass_through(self):
        assert stem("5pcs") == "5pcs"
        assert stem("cafés") == "cafés"

    @pytest.mark.parametrize("word", LEXICON)
    def test_idempotent_on_lexicon(self, word):
        assert stem(stem(word)) == stem(word)


class TestSynonyms:
    def test_examples(self):
        assert expand_synonyms(["usmc"], USMC) == ["usmc", "united", "states", "marine", "corps"]
        assert expand_synonyms(["guitar"], SynonymDict()) == ["guitar"]
        assert expand_synonyms(["usmc", "usmc"], USMC) == ["usmc", "usmc", "united", "states", "marine", "corps"]

    def test_one_level_only(self):
        d = SynonymDict.from_pairs([("a1", "b1"), ("b1", "c1")])
        assert expand_synonyms(["a1"], d) == ["a1", "b1"]

    def test_rejects_self_expansion(self):
        with pytest.raises(ValueError):
            SynonymDict.from_pairs([("usmc", "usmc")])

    def test_load_tsv(self, tmp_path):
        path = tmp_path / "syn.tsv"
        path.write_text("usmc\tunited states marine corps\nusmc\tmarines\n", encoding="utf-8")
        d = SynonymDict.load(path)
        assert d.get("usmc") == (("united", "states", "marine", "corps"), ("marines",))

    @given(st.lists(st.sampled_from(["usmc", "hat", "tv", "red"])))
    def test_length_and_identity(self, tokens):
        assert len(expand_synonyms(tokens, USMC)) >= len(tokens)
        assert expand_synonyms(tokens, SynonymDict()) == tokens


class TestPreprocess:
    def test_examples(self):
        stops = StopwordSet(frozenset({"the"}))
        assert preprocess("The Guitars", PrepConfig(), stops, SynonymDict()) == ["guitar"]
        assert preprocess("", PrepConfig(), stops, USMC) == []
        cfg = PrepConfig(apply_stemming=False, apply_stopwords=False, apply_synonyms=True)
        assert preprocess("usmc hat", cfg, StopwordSet(), USMC) == ["usmc", "hat", "united", "states", "marine", "corps"]

    def test_stems_expansion_terms(self):
        d = SynonymDict.from_pairs([("tv", "televisions")])
        assert preprocess("tv", PrepConfig(), StopwordSet(), d) == ["tv", "televis"]

    @given(st.text())
    def test_output_terms_clean(self, text):
        for term in preprocess(text, PrepConfig(), StopwordSet.default(), USMC):
            assert term and all(c.isalnum() for c in term)
