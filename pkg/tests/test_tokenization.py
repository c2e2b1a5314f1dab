import unicodedata

import numpy as np
import pytest

from smclm.tokenization import (
    BOS_ID,
    EOS_ID,
    PAD_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    Vocabulary,
    build_vocabulary,
    load_vocabulary,
    normalize,
    save_vocabulary,
    words,
)


class TestNormalize:
    def test_reference_sentence(self):
        assert normalize("What's your New Year 2017 resolution?") == "whats your new year 2017 resolution"

    def test_punctuation_deleted_not_spaced(self):
        assert normalize("Hello, World!") == "hello world"
        assert normalize("a-b") == "ab"

    def test_whitespace_collapsed_and_stripped(self):
        assert normalize("  a\t\tb \n c  ") == "a b c"

    def test_unicode_punctuation_categories(self):
        # em dash (Pd), curly quotes (Pi/Pf), section-less brackets (Ps/Pe)
        assert normalize("“foo” — (bar)") == "foo bar"

    def test_idempotent_and_shape_on_random_text(self):
        rng = np.random.default_rng(42)
        pool = list("abcXYZ089 \t.,!?'—“¿") + ["é", "中"]
        for _ in range(200):
            s = "".join(rng.choice(pool) for _ in range(int(rng.integers(0, 30))))
            out = normalize(s)
            assert normalize(out) == out
            assert out == out.strip()
            assert "  " not in out
            assert out == out.lower()
            assert not any(unicodedata.category(ch).startswith("P") for ch in out)

    def test_words_splits_normalized(self):
        assert words("The cat, the hat.") == ["the", "cat", "the", "hat"]


class TestVocabulary:
    def test_specials_fixed_at_first_ids(self):
        v = build_vocabulary(["a b c"])
        assert v.tokens[:4] == SPECIAL_TOKENS
        assert (BOS_ID, EOS_ID, UNK_ID, PAD_ID) == (0, 1, 2, 3)

    def test_frequency_then_lexicographic_order(self):
        v = build_vocabulary(["b b c a a a", "c b"])
        # a:3, b:3, c:2 -> a before b (tie), then c
        assert v.tokens[4:] == ("a", "b", "c")

    def test_min_freq_filters(self):
        v = build_vocabulary(["a a", "b"], min_freq=2)
        assert len(v) == 5
        assert v.tokens[4:] == ("a",)

    def test_empty_corpus_raises(self):
        with pytest.raises(ValueError):
            build_vocabulary([])

    def test_nothing_reaches_min_freq_raises(self):
        with pytest.raises(ValueError):
            build_vocabulary(["a b"], min_freq=3)

    def test_unknown_maps_to_unk(self):
        v = build_vocabulary(["a b"])
        assert v.tokenize("a z b") == [v.token_id("a"), UNK_ID, v.token_id("b")]

    def test_markers_wrap_sequence(self):
        v = build_vocabulary(["a b"])
        ids = v.tokenize("a b", add_markers=True)
        assert ids[0] == BOS_ID and ids[-1] == EOS_ID
        assert len(ids) == 4

    def test_round_trip_equals_normalized_form(self):
        corpus = ["The cat sat on the mat!", "What's your New Year 2017 resolution?"]
        v = build_vocabulary(corpus)
        for s in corpus:
            assert v.detokenize(v.tokenize(s, add_markers=True)) == normalize(s)
            assert v.detokenize(v.tokenize(s)) == normalize(s)

    def test_detokenize_out_of_range_raises(self):
        v = build_vocabulary(["a"])
        with pytest.raises(ValueError):
            v.detokenize([99])

    def test_requires_specials_and_one_word(self):
        with pytest.raises(ValueError):
            Vocabulary(SPECIAL_TOKENS)
        with pytest.raises(ValueError):
            Vocabulary(("x",) + SPECIAL_TOKENS[1:] + ("a",))
        with pytest.raises(ValueError):
            Vocabulary(SPECIAL_TOKENS + ("a", "a"))


class TestVocabularyFile:
    def test_round_trip_preserves_ids(self, tmp_path):
        v = build_vocabulary(["b b a", "c"])
        path = tmp_path / "vocab.txt"
        save_vocabulary(v, str(path))
        loaded = load_vocabulary(str(path))
        assert loaded.tokens == v.tokens
        # line number is the id
        lines = path.read_text(encoding="utf-8").splitlines()
        for i, tok in enumerate(lines):
            assert loaded.token_id(tok) == i or tok == "<unk>"

    def test_too_small_file_raises(self, tmp_path):
        path = tmp_path / "vocab.txt"
        path.write_text("<bos>\n<eos>\n<unk>\n<pad>\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_vocabulary(str(path))
