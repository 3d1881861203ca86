"""Shared fixtures: tiny synthetic corpora written through the real file formats."""

from __future__ import annotations

import json

import numpy as np
import pytest

from genir.corpus import Corpus, load_corpus

WORDS = (
    "ocean river stone cloud ember violet harbor maple quartz tundra "
    "signal lantern meadow copper drift fable grove hollow ivory junction "
    "kelp lumen mirror nectar orbit prairie quill ridge saddle thicket"
).split()


def synth_text(rng: np.random.Generator, n_words: int) -> str:
    return " ".join(WORDS[int(i)] for i in rng.integers(0, len(WORDS), size=n_words))


def write_corpus_files(
    tmp_path,
    docs: dict[str, str],
    queries: dict[str, tuple[str, str]] | None = None,
    qrels: dict[str, set[str]] | None = None,
):
    tmp_path.mkdir(parents=True, exist_ok=True)
    docs_path = tmp_path / "docs.jsonl"
    with open(docs_path, "w") as fh:
        for doc_id, text in docs.items():
            fh.write(json.dumps({"doc_id": doc_id, "text": text}) + "\n")
    queries_path = None
    if queries is not None:
        queries_path = tmp_path / "queries.jsonl"
        with open(queries_path, "w") as fh:
            for qid, (text, split) in queries.items():
                fh.write(
                    json.dumps({"query_id": qid, "text": text, "split": split}) + "\n"
                )
    qrels_path = None
    if qrels is not None:
        qrels_path = tmp_path / "qrels.tsv"
        with open(qrels_path, "w") as fh:
            for qid in sorted(qrels):
                for doc_id in sorted(qrels[qid]):
                    fh.write(f"{qid}\t{doc_id}\n")
    return docs_path, queries_path, qrels_path


def make_corpus(tmp_path, docs, queries=None, qrels=None, vocab_size=512) -> Corpus:
    docs_path, queries_path, qrels_path = write_corpus_files(tmp_path, docs, queries, qrels)
    return load_corpus(
        str(docs_path),
        str(queries_path) if queries_path else None,
        str(qrels_path) if qrels_path else None,
        tokenizer_vocab_size=vocab_size,
    )


@pytest.fixture
def small_corpus(tmp_path) -> Corpus:
    rng = np.random.default_rng(7)
    docs = {f"d{i:03d}": synth_text(rng, 24) for i in range(40)}
    queries = {
        "q0": (docs["d000"].split(" ", 3)[0] + " " + docs["d000"].split()[1], "train"),
        "q1": (" ".join(docs["d001"].split()[:3]), "train"),
        "q2": (" ".join(docs["d002"].split()[:3]), "dev"),
    }
    qrels = {"q0": {"d000"}, "q1": {"d001"}, "q2": {"d002"}}
    return make_corpus(tmp_path, docs, queries, qrels)
