import pytest
from hypothesis import given
from hypothesis import strategies as st

from afpnet.lexer import (PAD_ID, UNK_ID, LexError, Vocabulary, build_vocab, encode, is_punctuation,
                          tokenize)
from conftest import contract, corpus_of


def test_simple_declaration():
    assert tokenize("uint a = 1;").tokens == ("uint", "a", "=", "<NUM>", ";")


def test_maximal_munch_and_strings():
    src = 'if (x >= 2) { y += "s"; }'
    assert list(tokenize(src).tokens) == [
        "if", "(", "x", ">=", "<NUM>", ")", "{", "y", "+=", "<STR>", ";", "}"]


def test_member_access_is_three_tokens():
    assert tokenize("block.timestamp").tokens == ("block", ".", "timestamp")


def test_comments_removed_and_case_kept():
    seq = tokenize("// hi\nUint /* x */ uint")
    assert seq.tokens == ("Uint", "uint")


def test_numeric_forms():
    assert tokenize("0xFF 1e18 1_000 3.5").tokens == ("<NUM>",) * 4


def test_spans_point_back_into_source():
    src = "msg.sender.call.value(amt)();"
    seq = tokenize(src)
    for tok, (a, b) in zip(seq.tokens, seq.spans):
        if tok not in ("<NUM>", "<STR>"):
            assert src[a:b] == tok


def test_empty_after_normalization():
    with pytest.raises(LexError, match="empty after normalization"):
        tokenize("  // nothing\n /* here */ ")


@given(st.text(max_size=80))
def test_no_empty_or_whitespace_tokens(text):
    try:
        seq = tokenize(text)
    except LexError:
        return
    assert all(t and not any(ch.isspace() for ch in t) for t in seq.tokens)
    assert tokenize(text) == seq


def test_punctuation_filter():
    assert is_punctuation(";") and is_punctuation(">=")
    assert not is_punctuation("call") and not is_punctuation("<NUM>")


class TestVocab:
    corpus = corpus_of(contract("x", "a a b"), contract("y", "a"))

    def test_min_freq_threshold(self):
        v = build_vocab(self.corpus, min_freq=2)
        assert v.tokens == ("<pad>", "<unk>", "a") and len(v) == 3

    def test_min_freq_one(self):
        assert build_vocab(self.corpus, min_freq=1).tokens == ("<pad>", "<unk>", "a", "b")

    def test_ties_lexicographic_and_deterministic(self):
        c = corpus_of(contract("x", "zeta alpha mid mid"))
        v1, v2 = build_vocab(c, 1), build_vocab(c, 1)
        assert v1.to_json() == v2.to_json()
        assert v1.tokens == ("<pad>", "<unk>", "mid", "alpha", "zeta")

    def test_json_round_trip(self):
        v = build_vocab(self.corpus, 1)
        assert Vocabulary.from_json(v.to_json()) == v

    def test_only_train_split_counted(self):
        train = corpus_of(contract("t", "shared shared trainonly trainonly"))
        test = corpus_of(contract("u", "heldout heldout heldout"))
        v = build_vocab(train, 2)
        assert "heldout" not in v
        assert encode(tokenize(test.contracts[0].source), v) == [UNK_ID] * 3

    def test_bad_min_freq(self):
        with pytest.raises(ValueError):
            build_vocab(self.corpus, 0)


def test_encode_unk_rule():
    v = Vocabulary(["<pad>", "<unk>", "a"])
    assert encode(["a", "zzz"], v) == [2, 1]
    assert encode(["q", "r"], v) == [UNK_ID, UNK_ID]
    assert PAD_ID not in encode(["a", "q"], v)


@given(st.text(alphabet="abc =;(){}0123456789\"+-<>&|.", min_size=1, max_size=80))
def test_encode_preserves_length(src):
    v = Vocabulary(["<pad>", "<unk>", "a", ";"])
    try:
        seq = tokenize(src)
    except LexError:
        return
    assert len(encode(seq, v)) == len(seq)
