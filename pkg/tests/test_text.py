import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from addressee.text import OOV, PAD, Vocabulary, build_vocab, load_pretrained, tokenize


class TestTokenize:
    def test_basic(self):
        assert tokenize("Look at that bird!") == ["look", "at", "that", "bird"]

    def test_empty(self):
        assert tokenize("") == []

    def test_apostrophes_kept_inside(self):
        assert tokenize("It's great, isn't it?") == ["it's", "great", "isn't", "it"]

    def test_edge_quotes_stripped(self):
        assert tokenize("'hello' \"there\" ...") == ["hello", "there"]

    @given(st.text())
    def test_idempotent(self, s):
        once = tokenize(s)
        assert tokenize(" ".join(once)) == once


class TestVocab:
    def test_min_count(self):
        v = build_vocab([["a", "a", "b"], ["a"]], min_count=2)
        assert "a" in v and "b" not in v

    def test_reserved_and_size(self):
        v = build_vocab([["x", "y"], ["y", "z"]], min_count=1)
        assert len(v) == 3 + 2
        assert v.itos[OOV] == "<oov>" and v.itos[PAD] == "<pad>"

    def test_order_freq_then_alpha(self):
        v = build_vocab([["b", "c", "a", "c"]])
        assert v.itos[2:] == ["c", "a", "b"]

    def test_deterministic(self):
        corpus = [["the", "dog"], ["a", "cat"], ["the", "cat"]]
        assert build_vocab(corpus).itos == build_vocab(list(reversed(corpus))).itos

    def test_round_trip(self):
        v = build_vocab([["one", "two", "three"]])
        for i in range(2, len(v)):
            assert v.index(v.itos[i]) == i

    def test_unknown_and_empty(self):
        v = build_vocab([["hi"]])
        assert v.encode(["nope"]) == [OOV]
        assert v.encode([]) == [OOV]
        assert v.encode(["<pad>"]) == [OOV]

    def test_max_len(self):
        v = build_vocab([["a", "b", "c"]])
        assert v.encode(["a", "b", "c"], max_len=2) == [v.index("a"), v.index("b")]
        assert v.encode(["a"], max_len=5) == [v.index("a")]
        with pytest.raises(ValueError):
            v.encode(["a"], max_len=0)

    def test_bad_min_count(self):
        with pytest.raises(ValueError):
            build_vocab([], min_count=0)

    def test_reserved_prefix_required(self):
        with pytest.raises(ValueError):
            Vocabulary(["a", "b"])


class TestLoadPretrained:
    def test_rows_copied(self, tmp_path):
        f = tmp_path / "vec.txt"
        f.write_text("cat 0.1 0.2 0.3\ndog -1.5 2 0\n")
        v = build_vocab([["cat", "dog"]])
        out = load_pretrained(f, v, 3)
        assert out.matrix[v.index("cat")].tolist() == [0.1, 0.2, 0.3]
        assert out.matrix[v.index("dog")].tolist() == [-1.5, 2.0, 0.0]
        assert out.found == 2 and out.skipped == 0
        assert np.all(out.matrix[OOV] == 0)

    def test_absent_token_random_in_range(self, tmp_path):
        f = tmp_path / "vec.txt"
        f.write_text("cat 0.1 0.2 0.3\n")
        v = build_vocab([["cat", "fish"]])
        a = load_pretrained(f, v, 3, seed=4).matrix
        b = load_pretrained(f, v, 3, seed=4).matrix
        row = a[v.index("fish")]
        assert np.all(np.abs(row) <= 0.05) and np.any(row != 0)
        np.testing.assert_array_equal(a, b)

    def test_malformed_lines_skipped(self, tmp_path):
        f = tmp_path / "vec.txt"
        f.write_text("cat 0.1 0.2 0.3\nbad 1 2\nworse x y z\n\ndog 1 1 1\n")
        v = build_vocab([["cat", "dog", "bad"]])
        out = load_pretrained(f, v, 3)
        assert out.skipped == 3
        assert out.found == 2
        assert not np.any(np.isnan(out.matrix))
        assert out.matrix.shape == (len(v), 3)

    def test_word2vec_header_skipped(self, tmp_path):
        f = tmp_path / "vec.txt"
        f.write_text("2 3\ncat 0.1 0.2 0.3\n")
        out = load_pretrained(f, build_vocab([["cat"]]), 3)
        assert out.found == 1 and out.skipped == 1

    def test_dimension_mismatch(self, tmp_path):
        f = tmp_path / "vec.txt"
        f.write_text("cat 0.1 0.2\n")
        with pytest.raises(ValueError, match="dimension"):
            load_pretrained(f, build_vocab([["cat"]]), 3)

    def test_unreadable(self, tmp_path):
        with pytest.raises(OSError):
            load_pretrained(tmp_path / "missing.txt", build_vocab([]), 3)
