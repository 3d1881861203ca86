"""Corpus loading, subsetting, coverage, and document-view contracts."""

import numpy as np
import pytest

from genir.corpus import (
    Corpus,
    Manifest,
    coverage_stats,
    daq,
    firstp,
    load_corpus_dir,
    normalize_text,
    save_corpus,
    subset_corpus,
)
from genir.errors import DataError
from tests.conftest import make_corpus, synth_text, write_corpus_files


def test_normalization_applied(tmp_path):
    corpus = make_corpus(tmp_path, {"a": "  Hello    WORLD \t x "})
    assert corpus.docs["a"].text == "hello world x"
    assert normalize_text("  A  B ") == "a b"


def test_docs_sorted_by_id(tmp_path):
    corpus = make_corpus(tmp_path, {"b": "two", "a": "one", "c": "three"})
    assert corpus.doc_ids() == ["a", "b", "c"]


def test_duplicate_doc_id_rejected(tmp_path):
    path = tmp_path / "docs.jsonl"
    path.write_text('{"doc_id": "x", "text": "a"}\n{"doc_id": "x", "text": "b"}\n')
    from genir.corpus import load_corpus

    with pytest.raises(DataError, match="duplicate"):
        load_corpus(str(path))


def test_qrels_must_resolve(tmp_path):
    docs = {"d1": "alpha", "d2": "beta"}
    queries = {"q1": ("alpha", "train")}
    with pytest.raises(DataError, match="unknown doc_id"):
        make_corpus(tmp_path, docs, queries, {"q1": {"missing"}})


def test_bad_split_rejected(tmp_path):
    docs = {"d1": "alpha"}
    with pytest.raises(DataError, match="split"):
        make_corpus(tmp_path, docs, {"q1": ("alpha", "test")}, None)


def test_subset_keeps_all_judged_docs(tmp_path):
    rng = np.random.default_rng(3)
    docs = {f"d{i:03d}": synth_text(rng, 10) for i in range(60)}
    queries = {f"q{i}": (docs[f"d{i:03d}"], "train") for i in range(8)}
    qrels = {f"q{i}": {f"d{i:03d}"} for i in range(8)}
    corpus = make_corpus(tmp_path, docs, queries, qrels)
    sub = subset_corpus(corpus, target_size=20, seed=5, name="sub")
    assert len(sub) == 20
    assert corpus.relevant_doc_ids() <= set(sub.docs)
    assert sub.queries == corpus.queries
    assert sub.qrels == corpus.qrels


def test_subset_deterministic(tmp_path):
    rng = np.random.default_rng(4)
    docs = {f"d{i:03d}": synth_text(rng, 8) for i in range(50)}
    corpus = make_corpus(tmp_path, docs)
    a = subset_corpus(corpus, 15, seed=9, name="a")
    b = subset_corpus(corpus, 15, seed=9, name="b")
    c = subset_corpus(corpus, 15, seed=10, name="c")
    assert list(a.docs) == list(b.docs)
    assert list(a.docs) != list(c.docs)


def test_subset_size_bounds(tmp_path):
    docs = {f"d{i}": "text here" for i in range(10)}
    queries = {"q0": ("text", "train"), "q1": ("text", "dev")}
    qrels = {"q0": {"d0", "d1"}, "q1": {"d2"}}
    corpus = make_corpus(tmp_path, docs, queries, qrels)
    with pytest.raises(DataError, match="judged"):
        subset_corpus(corpus, 2, seed=0, name="too-small")
    with pytest.raises(DataError, match="exceeds"):
        subset_corpus(corpus, 11, seed=0, name="too-big")


def test_coverage_fractions_match_known_tables(tmp_path):
    # analogue of a 1000-doc corpus with 5.8% vs 98.4% labeled coverage
    for labeled, expect in ((58, 0.058), (984, 0.984)):
        docs = {f"d{i:04d}": f"document number {i}" for i in range(1000)}
        queries = {f"q{i}": (f"number {i}", "train") for i in range(labeled)}
        queries["qdev"] = ("number 1", "dev")
        qrels = {f"q{i}": {f"d{i:04d}"} for i in range(labeled)}
        qrels["qdev"] = {"d0001"}
        corpus = make_corpus(tmp_path / str(labeled), docs, queries, qrels)
        stats = coverage_stats(corpus)
        assert stats.num_docs == 1000
        assert stats.labeled_docs == labeled
        assert stats.label_coverage == pytest.approx(expect, abs=1e-12)
        assert stats.num_dev_queries == 1


def test_coverage_ignores_dev_judgments(tmp_path):
    docs = {"d1": "alpha", "d2": "beta"}
    queries = {"q1": ("alpha", "dev")}
    corpus = make_corpus(tmp_path, docs, queries, {"q1": {"d1"}})
    assert coverage_stats(corpus).labeled_docs == 0


def test_save_load_round_trip(tmp_path, small_corpus):
    out = tmp_path / "saved"
    save_corpus(small_corpus, str(out))
    loaded = load_corpus_dir(str(out))
    assert loaded.docs == small_corpus.docs
    assert loaded.queries == small_corpus.queries
    assert loaded.qrels == small_corpus.qrels
    assert loaded.manifest.to_json() == small_corpus.manifest.to_json()
    sample = next(iter(small_corpus.docs.values())).text
    assert loaded.tokenizer.encode(sample) == small_corpus.tokenizer.encode(sample)


def test_manifest_round_trip_bytes():
    m = Manifest(name="x", params={"b": 2, "a": [1, 2], "nested": {"z": "y"}})
    assert Manifest.from_json(m.to_json()).to_json() == m.to_json()


def test_firstp_prefix(small_corpus):
    doc = small_corpus.docs["d000"]
    full = small_corpus.tokenizer.encode(doc.text)
    assert list(firstp(doc, small_corpus.tokenizer, 5)) == full[:5]
    assert list(firstp(doc, small_corpus.tokenizer, 10_000)) == full


def test_daq_covers_document(small_corpus):
    doc = small_corpus.docs["d003"]
    tokens = small_corpus.tokenizer.encode(doc.text)
    for seg_len, stride in ((4, 4), (6, 3), (5, 2), (len(tokens) + 3, 1)):
        segs = daq(doc, small_corpus.tokenizer, seg_len, stride)
        assert all(len(s) <= seg_len for s in segs)
        covered = []
        for i, seg in enumerate(segs):
            assert list(seg) == tokens[i * stride : i * stride + seg_len]
        flat_positions = {
            i * stride + j for i, seg in enumerate(segs) for j in range(len(seg))
        }
        assert flat_positions == set(range(len(tokens)))


def test_daq_disjoint_reconstructs(small_corpus):
    doc = small_corpus.docs["d004"]
    tokens = small_corpus.tokenizer.encode(doc.text)
    segs = daq(doc, small_corpus.tokenizer, 7)
    assert [t for seg in segs for t in seg] == tokens


def test_daq_empty_doc(tmp_path):
    corpus = make_corpus(tmp_path, {"e": "", "f": "word"})
    assert daq(corpus.docs["e"], corpus.tokenizer, 4) == []


def test_daq_stride_validation(small_corpus):
    doc = small_corpus.docs["d000"]
    with pytest.raises(DataError):
        daq(doc, small_corpus.tokenizer, 4, stride=5)
    with pytest.raises(DataError):
        daq(doc, small_corpus.tokenizer, 0)
