import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afpnet.ingest import (Corpus, CorpusError, dedup_corpus, duplicate_groups, load_manifest,
                           normalize_source, split_corpus, write_manifest)
from conftest import contract, corpus_of, write_jsonl


def pairwise_survivors(contracts):
    """O(n^2) oracle: keep a contract unless an earlier one normalizes identically."""
    keep = []
    for i, c in enumerate(contracts):
        if not any(normalize_source(contracts[j].source) == normalize_source(c.source) for j in range(i)):
            keep.append(c.id)
    return keep


class TestLoadManifest:
    def test_empty_manifest(self, tmp_path):
        m = write_jsonl(tmp_path / "manifest.jsonl", [])
        assert len(load_manifest(m)) == 0

    def test_rows_in_order(self, tmp_path):
        (tmp_path / "b.sol").write_text("contract B {}")
        (tmp_path / "a.sol").write_text("contract A {}")
        m = write_jsonl(tmp_path / "manifest.jsonl", [
            {"id": "b", "path": "b.sol", "vuln_type": "reentrancy", "label": 1},
            {"id": "a", "path": "a.sol", "vuln_type": "reentrancy", "label": 0},
        ])
        corpus = load_manifest(m)
        assert corpus.ids == ["b", "a"]
        assert corpus["b"].source == "contract B {}"
        assert corpus.labels == [1, 0]

    def test_inline_source(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "source": "uint a;", "vuln_type": "timestamp", "label": 0}])
        assert load_manifest(m)["x"].source == "uint a;"

    def test_bad_label_names_row(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "source": "a", "vuln_type": "reentrancy", "label": 0},
            {"id": "y", "source": "b", "vuln_type": "reentrancy", "label": 2},
        ])
        with pytest.raises(CorpusError, match="row 2"):
            load_manifest(m)

    def test_missing_file_names_row(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "path": "nope.sol", "vuln_type": "reentrancy", "label": 0}])
        with pytest.raises(CorpusError, match=r"row 1.*nope\.sol"):
            load_manifest(m)

    def test_duplicate_id(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "source": "a", "vuln_type": "reentrancy", "label": 0},
            {"id": "x", "source": "b", "vuln_type": "reentrancy", "label": 0},
        ])
        with pytest.raises(CorpusError, match="duplicate id"):
            load_manifest(m)

    def test_path_and_source_both_given(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "source": "a", "path": "a.sol", "vuln_type": "reentrancy", "label": 0}])
        with pytest.raises(CorpusError, match="exactly one"):
            load_manifest(m)

    def test_vuln_type_filter(self, tmp_path):
        m = write_jsonl(tmp_path / "m.jsonl", [
            {"id": "x", "source": "a", "vuln_type": "reentrancy", "label": 0},
            {"id": "y", "source": "b", "vuln_type": "timestamp", "label": 1},
        ])
        assert load_manifest(m, "timestamp").ids == ["y"]

    def test_round_trip(self, tmp_path):
        corpus = corpus_of(contract("a", "x = 1;", 1), contract("b", "y = 2;", 0))
        write_manifest(corpus, tmp_path / "m.jsonl")
        assert load_manifest(tmp_path / "m.jsonl") == corpus


class TestNormalize:
    def test_examples(self):
        assert normalize_source("a  =  1 ; // x") == "a = 1 ;"
        assert normalize_source("a=1;") == normalize_source("a=1;\n")
        assert normalize_source("/*c*/a") == "a"

    def test_unterminated_block_comment(self):
        assert normalize_source("a = 1; /* never closed\n b = 2;") == "a = 1;"

    def test_comment_markers_in_strings_survive(self):
        assert normalize_source('s = "http://x";') == 's = "http://x";'

    @given(st.text(alphabet=" \t\nab/*;=\"", max_size=60))
    def test_idempotent(self, text):
        once = normalize_source(text)
        assert normalize_source(once) == once


class TestDedup:
    def test_comment_whitespace_variants_collapse_to_first(self):
        c = corpus_of(contract("a", "x = 1; // note"), contract("b", "x  =  1;\n/* other */"))
        out = dedup_corpus(c)
        assert out.ids == ["a"]

    def test_distinct_unchanged(self):
        c = corpus_of(contract("a", "x = 1;"), contract("b", "x = 2;"))
        assert dedup_corpus(c) == c

    def test_conflicting_labels_rejected(self):
        c = corpus_of(contract("a", "x = 1;", 0), contract("b", "x = 1; // dup", 1))
        with pytest.raises(CorpusError, match="a, b"):
            dedup_corpus(c)

    def test_planted_duplicates_match_pairwise_oracle(self):
        rng = random.Random(3)
        base = [contract(f"c{i}", f"uint v{i} = {rng.randint(0, 9)}; f{i}();", i % 2) for i in range(90)]
        contracts = list(base)
        for k in range(10):
            orig = base[rng.randrange(len(base))]
            noisy = "  /* copy */ " + orig.source.replace(" ", "\n  ") + " // dup"
            contracts.insert(rng.randrange(len(contracts) + 1),
                             contract(f"dup{k}", noisy, orig.label))
        # planted copies may land before their original; the oracle handles order
        corpus = Corpus(tuple(contracts))
        out = dedup_corpus(corpus)
        assert len(out) == 90
        assert out.ids == pairwise_survivors(contracts)
        assert len(duplicate_groups(corpus)) <= 10

    def test_idempotent_and_preserves_survivors(self):
        c = corpus_of(contract("a", "x;"), contract("b", "x ;"), contract("c", "y;", 1))
        once = dedup_corpus(c)
        assert dedup_corpus(once) == once
        for s in once:
            assert s == c[s.id]


class TestSplit:
    def corpus(self, n):
        return Corpus(tuple(contract(f"c{i}", f"s{i};", i % 2) for i in range(n)))

    def test_sizes(self):
        train, test = split_corpus(self.corpus(10), 0.8, seed=1)
        assert (len(train), len(test)) == (8, 2)
        assert not set(train.ids) & set(test.ids)

    def test_deterministic(self):
        c = self.corpus(10)
        assert split_corpus(c, 0.8, 5) == split_corpus(c, 0.8, 5)

    def test_seeds_differ_and_partition(self):
        c = self.corpus(50)
        a = split_corpus(c, 0.8, 1)
        b = split_corpus(c, 0.8, 2)
        assert a[0].ids != b[0].ids
        for train, test in (a, b):
            assert set(train.ids) | set(test.ids) == set(c.ids)
            assert not set(train.ids) & set(test.ids)

    def test_too_small(self):
        with pytest.raises(CorpusError):
            split_corpus(self.corpus(1), 0.8, 0)

    def test_bad_fraction(self):
        with pytest.raises(CorpusError):
            split_corpus(self.corpus(10), 1.0, 0)

    @settings(max_examples=50)
    @given(st.integers(2, 60), st.floats(0.05, 0.95), st.integers(0, 2**32 - 1))
    def test_partition_property(self, n, frac, seed):
        c = self.corpus(n)
        try:
            train, test = split_corpus(c, frac, seed)
        except CorpusError:
            assert int(frac * n) in (0, n)
            return
        assert len(train) == int(frac * n)
        assert sorted(train.ids + test.ids) == sorted(c.ids)
