"""Corpus loading, subsetting, coverage stats, and document views.

File formats:
  docs     JSONL, one object per line: {"doc_id": str, "text": str}
  queries  JSONL: {"query_id": str, "text": str, "split": "train"|"dev"}
  qrels    TSV:   query_id <TAB> doc_id
  manifest JSON sidecar recording provenance and construction parameters

All text is normalized (lowercased, whitespace collapsed) at load time, and
documents are kept in sorted doc_id order so every downstream artifact is
reproducible byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from genir.errors import DataError
from genir.tokenizer import ByteBpeTokenizer, train_tokenizer

VALID_SPLITS = ("train", "dev")


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    split: str


def _canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


@dataclass
class Manifest:
    """Provenance record for a corpus; round-trips byte-identically."""

    name: str
    params: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return _canonical_json({"name": self.name, "params": self.params}) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        obj = json.loads(text)
        return cls(name=obj["name"], params=obj["params"])


@dataclass
class Corpus:
    """Documents plus optional queries/qrels and a trained tokenizer.

    docs is an insertion-ordered dict sorted by doc_id.  qrels maps a
    query_id to the set of relevant doc_ids; every referenced id resolves.
    """

    docs: dict[str, Document]
    queries: dict[str, Query]
    qrels: dict[str, set[str]]
    manifest: Manifest
    tokenizer: ByteBpeTokenizer

    def __len__(self) -> int:
        return len(self.docs)

    def doc_ids(self) -> list[str]:
        return list(self.docs)

    def queries_for_split(self, split: str) -> list[Query]:
        if split not in VALID_SPLITS:
            raise DataError(f"unknown split {split!r}")
        return [q for q in self.queries.values() if q.split == split]

    def relevant_doc_ids(self) -> set[str]:
        out: set[str] = set()
        for docs in self.qrels.values():
            out |= docs
        return out


@dataclass(frozen=True)
class CoverageStats:
    num_docs: int
    num_train_queries: int
    num_dev_queries: int
    labeled_docs: int
    label_coverage: float


def _read_jsonl(path: str):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc


def read_docs_file(path: str) -> dict[str, Document]:
    docs: dict[str, Document] = {}
    for lineno, obj in _read_jsonl(path):
        if "doc_id" not in obj or "text" not in obj:
            raise DataError(f"{path}:{lineno}: expected doc_id and text fields")
        doc_id = str(obj["doc_id"])
        if not doc_id:
            raise DataError(f"{path}:{lineno}: empty doc_id")
        if doc_id in docs:
            raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        docs[doc_id] = Document(doc_id=doc_id, text=normalize_text(str(obj["text"])))
    return {k: docs[k] for k in sorted(docs)}


def read_queries_file(path: str) -> dict[str, Query]:
    queries: dict[str, Query] = {}
    for lineno, obj in _read_jsonl(path):
        missing = {"query_id", "text", "split"} - obj.keys()
        if missing:
            raise DataError(f"{path}:{lineno}: missing fields {sorted(missing)}")
        qid = str(obj["query_id"])
        split = str(obj["split"])
        if split not in VALID_SPLITS:
            raise DataError(f"{path}:{lineno}: split must be one of {VALID_SPLITS}")
        if qid in queries:
            raise DataError(f"{path}:{lineno}: duplicate query_id {qid!r}")
        queries[qid] = Query(query_id=qid, text=normalize_text(str(obj["text"])), split=split)
    return {k: queries[k] for k in sorted(queries)}


def read_qrels_file(path: str) -> dict[str, set[str]]:
    qrels: dict[str, set[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected query_id<TAB>doc_id")
            qrels.setdefault(parts[0], set()).add(parts[1])
    return qrels


def load_corpus(
    docs_path: str,
    queries_path: str | None = None,
    qrels_path: str | None = None,
    tokenizer: ByteBpeTokenizer | None = None,
    tokenizer_vocab_size: int = 2048,
    name: str | None = None,
) -> Corpus:
    """Load corpus files, validate cross-references, and attach a tokenizer.

    The tokenizer is trained on the document texts unless one is supplied.
    Qrels rows referencing unknown queries or documents are an error: the
    contract is that every stored relevance judgment resolves.
    """
    docs = read_docs_file(docs_path)
    if not docs:
        raise DataError(f"{docs_path}: no documents")
    queries = read_queries_file(queries_path) if queries_path else {}
    qrels = read_qrels_file(qrels_path) if qrels_path else {}
    for qid, rel in qrels.items():
        if qid not in queries:
            raise DataError(f"qrels references unknown query_id {qid!r}")
        for doc_id in rel:
            if doc_id not in docs:
                raise DataError(f"qrels references unknown doc_id {doc_id!r}")
    if tokenizer is None:
        tokenizer = train_tokenizer(
            (d.text for d in docs.values()), vocab_size=tokenizer_vocab_size
        )
    manifest = Manifest(
        name=name or os.path.splitext(os.path.basename(docs_path))[0],
        params={
            "source_docs": os.path.basename(docs_path),
            "num_docs": len(docs),
            "num_queries": len(queries),
            "normalization": "lowercase_collapse_ws",
            "tokenizer_vocab_size": tokenizer.vocab_size,
        },
    )
    return Corpus(docs=docs, queries=queries, qrels=qrels, manifest=manifest, tokenizer=tokenizer)


def save_corpus(corpus: Corpus, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "docs.jsonl"), "w", encoding="utf-8") as fh:
        for doc in corpus.docs.values():
            fh.write(_canonical_json({"doc_id": doc.doc_id, "text": doc.text}) + "\n")
    with open(os.path.join(out_dir, "queries.jsonl"), "w", encoding="utf-8") as fh:
        for q in corpus.queries.values():
            fh.write(
                _canonical_json(
                    {"query_id": q.query_id, "split": q.split, "text": q.text}
                )
                + "\n"
            )
    with open(os.path.join(out_dir, "qrels.tsv"), "w", encoding="utf-8") as fh:
        for qid in sorted(corpus.qrels):
            for doc_id in sorted(corpus.qrels[qid]):
                fh.write(f"{qid}\t{doc_id}\n")
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        fh.write(corpus.manifest.to_json())
    corpus.tokenizer.save(os.path.join(out_dir, "tokenizer.json"))


def load_corpus_dir(path: str) -> Corpus:
    """Inverse of save_corpus."""
    queries_path = os.path.join(path, "queries.jsonl")
    qrels_path = os.path.join(path, "qrels.tsv")
    corpus = load_corpus(
        os.path.join(path, "docs.jsonl"),
        queries_path if os.path.exists(queries_path) else None,
        qrels_path if os.path.exists(qrels_path) else None,
        tokenizer=ByteBpeTokenizer.load(os.path.join(path, "tokenizer.json")),
    )
    with open(os.path.join(path, "manifest.json"), encoding="utf-8") as fh:
        corpus.manifest = Manifest.from_json(fh.read())
    return corpus


def subset_corpus(corpus: Corpus, target_size: int, seed: int, name: str) -> Corpus:
    """Down-sample to target_size docs, keeping every judged document.

    All documents relevant to any train or dev query are retained; the
    remainder is a uniform random fill from the unjudged pool.  Queries
    and qrels carry over unchanged, so they still resolve by construction.
    """
    relevant = sorted(corpus.relevant_doc_ids())
    if target_size < len(relevant):
        raise DataError(
            f"target_size {target_size} is below the {len(relevant)} judged documents"
        )
    if target_size > len(corpus.docs):
        raise DataError(
            f"target_size {target_size} exceeds corpus size {len(corpus.docs)}"
        )
    pool = sorted(set(corpus.docs) - set(relevant))
    rng = np.random.default_rng(seed)
    n_fill = target_size - len(relevant)
    fill = sorted(rng.choice(len(pool), size=n_fill, replace=False).tolist()) if n_fill else []
    keep = sorted(relevant + [pool[i] for i in fill])
    docs = {doc_id: corpus.docs[doc_id] for doc_id in keep}
    manifest = Manifest(
        name=name,
        params={
            "parent": corpus.manifest.name,
            "target_size": target_size,
            "seed": seed,
            "judged_docs": len(relevant),
            "fill_pool": len(pool),
            "tokenizer": "inherited",
        },
    )
    return Corpus(
        docs=docs,
        queries=dict(corpus.queries),
        qrels={k: set(v) for k, v in corpus.qrels.items()},
        manifest=manifest,
        tokenizer=corpus.tokenizer,
    )


def coverage_stats(corpus: Corpus) -> CoverageStats:
    """Fraction of documents with at least one train-query judgment."""
    labeled: set[str] = set()
    for qid, rel in corpus.qrels.items():
        query = corpus.queries.get(qid)
        if query is not None and query.split == "train":
            labeled |= rel
    train = sum(1 for q in corpus.queries.values() if q.split == "train")
    dev = len(corpus.queries) - train
    return CoverageStats(
        num_docs=len(corpus.docs),
        num_train_queries=train,
        num_dev_queries=dev,
        labeled_docs=len(labeled),
        label_coverage=len(labeled) / len(corpus.docs) if corpus.docs else 0.0,
    )


def firstp(doc: Document, tokenizer: ByteBpeTokenizer, max_tokens: int) -> tuple[int, ...]:
    """First max_tokens tokens of the document; the FirstP indexing view."""
    if max_tokens <= 0:
        raise DataError(f"max_tokens must be positive, got {max_tokens}")
    return tuple(tokenizer.encode(doc.text)[:max_tokens])


def daq(
    doc: Document,
    tokenizer: ByteBpeTokenizer,
    seg_len: int,
    stride: int | None = None,
) -> list[tuple[int, ...]]:
    """Document-as-query segments: sliding token windows covering the text.

    stride defaults to seg_len (disjoint cover); stride <= seg_len keeps the
    cover gap-free.  Empty documents produce no segments.
    """
    if seg_len <= 0:
        raise DataError(f"seg_len must be positive, got {seg_len}")
    if stride is None:
        stride = seg_len
    if stride <= 0 or stride > seg_len:
        raise DataError(f"stride must be in 1..seg_len, got {stride}")
    tokens = tokenizer.encode(doc.text)
    segments: list[tuple[int, ...]] = []
    start = 0
    while True:
        seg = tuple(tokens[start : start + seg_len])
        if seg:
            segments.append(seg)
        if start + seg_len >= len(tokens):
            break
        start += stride
    return segments
