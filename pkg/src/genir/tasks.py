"""Training task construction and mixture sampling.

Three example sources feed training:
  indexing  document content -> identifier (FirstP prefix or DaQ segments)
  labeled   train-split query -> identifier of each judged document
  d2q       synthetic query -> identifier of the document it was drawn from

Inputs carry a short textual task prefix so one model can host all tasks.
Targets are stored in pure identifier space and lifted to model space (offset
plus EOS) at collate time; the atomic head keeps the raw class id instead.
"""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Callable, Iterable, Iterator
from dataclasses import dataclass, field

import numpy as np

from genir.constants import EOS_ID, ID_OFFSET, NUM_SPECIALS, PAD_ID
from genir.corpus import Corpus, Document, daq, firstp
from genir.docid import DocIdScheme
from genir.errors import ConfigError, DataError
from genir.model.net import make_dec_input
from genir.model.optim import Batch

logger = logging.getLogger(__name__)

TASK_INDEXING = "indexing"
TASK_LABELED = "labeled"
TASK_D2Q = "d2q"

INDEX_PREFIX = "index:"
QUERY_PREFIX = "query:"


@dataclass(frozen=True)
class TrainingExample:
    input_tokens: tuple[int, ...]
    target_tokens: tuple[int, ...]  # pure identifier space
    task: str
    doc_id: str


def stable_hash(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def encode_target(scheme: DocIdScheme, doc_id: str) -> tuple[int, ...]:
    """Model-space target for a document under the scheme."""
    tokens = scheme.id_map[doc_id]
    if scheme.kind == "atomic":
        return tokens
    return tuple(t + ID_OFFSET for t in tokens) + (EOS_ID,)


def model_target_vocab(scheme: DocIdScheme) -> int:
    """Size of the decoder output space the scheme needs."""
    if scheme.kind == "atomic":
        return scheme.vocab_size
    return scheme.vocab_size + NUM_SPECIALS


def query_input_tokens(tokenizer, text: str, max_tokens: int = 128) -> tuple[int, ...]:
    """Model input for query-style tasks: prefix plus truncated query tokens.

    Retrieval must build inputs through this same function, or the prefix
    the model was trained with would be missing at inference.
    """
    tokens = tuple(tokenizer.encode(text)[:max_tokens])
    if not tokens:
        return ()
    return tuple(tokenizer.encode(QUERY_PREFIX)) + tokens


def _check_scheme_covers(corpus: Corpus, scheme: DocIdScheme) -> None:
    missing = [d for d in corpus.docs if d not in scheme.id_map]
    if missing:
        raise DataError(
            f"scheme missing identifiers for {len(missing)} docs, e.g. {missing[:3]}"
        )


def indexing_examples(
    corpus: Corpus,
    scheme: DocIdScheme,
    view: str = "firstp",
    max_tokens: int = 128,
    seg_len: int = 64,
    stride: int | None = None,
) -> list[TrainingExample]:
    """Content -> identifier examples; one per doc (firstp) or per segment (daq)."""
    if view not in ("firstp", "daq"):
        raise ConfigError(f"indexing view must be firstp or daq, got {view!r}")
    _check_scheme_covers(corpus, scheme)
    prefix = tuple(corpus.tokenizer.encode(INDEX_PREFIX))
    out: list[TrainingExample] = []
    skipped = 0
    for doc_id, doc in corpus.docs.items():
        target = scheme.id_map[doc_id]
        if view == "firstp":
            segments = [firstp(doc, corpus.tokenizer, max_tokens)]
        else:
            segments = daq(doc, corpus.tokenizer, seg_len, stride)
        segments = [s for s in segments if s]
        if not segments:
            skipped += 1
            continue
        for seg in segments:
            out.append(
                TrainingExample(prefix + seg, target, TASK_INDEXING, doc_id)
            )
    if skipped:
        logger.warning("indexing: skipped %d empty documents", skipped)
    if not out:
        raise DataError("indexing produced no examples")
    return out


def labeled_examples(
    corpus: Corpus, scheme: DocIdScheme, max_tokens: int = 128
) -> list[TrainingExample]:
    """Train-split queries paired with each of their judged documents."""
    _check_scheme_covers(corpus, scheme)
    out: list[TrainingExample] = []
    for query in corpus.queries_for_split("train"):
        rel = corpus.qrels.get(query.query_id, set())
        tokens = query_input_tokens(corpus.tokenizer, query.text, max_tokens)
        if not tokens:
            logger.warning("labeled: query %r has empty text; skipped", query.query_id)
            continue
        for doc_id in sorted(rel):
            out.append(
                TrainingExample(tokens, scheme.id_map[doc_id], TASK_LABELED, doc_id)
            )
    return out


# ---------------------------------------------------------------------------
# synthetic queries


GeneratorFn = Callable[[Document, np.random.Generator], str]


@dataclass(frozen=True)
class QueryGenConfig:
    num_queries: int = 40
    top_k: int = 10
    temperature: float = 1.0
    min_words: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_queries < 1:
            raise ConfigError("num_queries must be >= 1")
        if self.min_words < 0:
            raise ConfigError("min_words must be >= 0")


@dataclass
class SyntheticQuerySet:
    queries: dict[str, list[str]]  # doc_id -> generated queries
    meta: dict = field(default_factory=dict)

    def total(self) -> int:
        return sum(len(v) for v in self.queries.values())


def extractive_generator(doc: Document, rng: np.random.Generator) -> str:
    """Draw a 3-8 word window from the document, sometimes dropping one
    interior word so queries are not always literal substrings."""
    words = doc.text.split()
    if not words:
        return ""
    n = min(len(words), int(rng.integers(3, 9)))
    start = int(rng.integers(0, len(words) - n + 1))
    window = words[start : start + n]
    if len(window) > 3 and rng.random() < 0.5:
        drop = int(rng.integers(1, len(window) - 1))
        window = window[:drop] + window[drop + 1 :]
    return " ".join(window)


def generate_queries(
    corpus: Corpus,
    generator: GeneratorFn,
    cfg: QueryGenConfig,
    source: str = "extractive",
) -> SyntheticQuerySet:
    """Up to cfg.num_queries synthetic queries per document.

    Each document gets its own generator stream seeded from (seed, doc_id),
    so regenerating any subset of documents is stable.  Queries shorter than
    min_words are discarded (the draw is not retried); duplicates are kept.
    """
    queries: dict[str, list[str]] = {}
    skipped: list[str] = []
    for doc_id, doc in corpus.docs.items():
        rng = np.random.default_rng(stable_hash(cfg.seed, doc_id))
        kept = []
        for _ in range(cfg.num_queries):
            q = generator(doc, rng)
            if len(q.split()) >= cfg.min_words and q:
                kept.append(q)
        if kept:
            queries[doc_id] = kept
        else:
            skipped.append(doc_id)
    if skipped:
        logger.warning("query generation produced nothing for %d docs", len(skipped))
    meta = {
        "source": source,
        "num_queries": cfg.num_queries,
        "top_k": cfg.top_k,
        "temperature": cfg.temperature,
        "min_words": cfg.min_words,
        "seed": cfg.seed,
        "skipped_docs": skipped,
    }
    return SyntheticQuerySet(queries=queries, meta=meta)


def save_queries(qset: SyntheticQuerySet, path: str) -> None:
    source = qset.meta.get("source", "unknown")
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id in sorted(qset.queries):
            for q in qset.queries[doc_id]:
                fh.write(
                    json.dumps(
                        {"doc_id": doc_id, "query": q, "source": source},
                        sort_keys=True,
                        separators=(",", ":"),
                    )
                    + "\n"
                )
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(qset.meta, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_queries(path: str) -> SyntheticQuerySet:
    import os

    queries: dict[str, list[str]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "doc_id" not in obj or "query" not in obj:
                raise DataError(f"{path}:{lineno}: expected doc_id and query fields")
            queries.setdefault(str(obj["doc_id"]), []).append(str(obj["query"]))
    meta = {}
    if os.path.exists(path + ".meta.json"):
        with open(path + ".meta.json", encoding="utf-8") as fh:
            meta = json.load(fh)
    return SyntheticQuerySet(queries=queries, meta=meta)


def d2q_examples(
    corpus: Corpus,
    scheme: DocIdScheme,
    qset: SyntheticQuerySet,
    max_tokens: int = 128,
) -> list[TrainingExample]:
    """Synthetic query -> identifier examples."""
    _check_scheme_covers(corpus, scheme)
    out: list[TrainingExample] = []
    unknown = [d for d in qset.queries if d not in corpus.docs]
    if unknown:
        raise DataError(
            f"synthetic queries reference {len(unknown)} unknown docs, e.g. {unknown[:3]}"
        )
    for doc_id in sorted(qset.queries):
        target = scheme.id_map[doc_id]
        for q in qset.queries[doc_id]:
            tokens = query_input_tokens(corpus.tokenizer, q, max_tokens)
            if not tokens:
                continue
            out.append(TrainingExample(tokens, target, TASK_D2Q, doc_id))
    if not out:
        raise DataError("d2q produced no examples")
    return out


# ---------------------------------------------------------------------------
# mixture sampling and batching


@dataclass(frozen=True)
class MixtureSpec:
    """Task names with unnormalized sampling rates."""

    components: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        if not self.components:
            raise ConfigError("mixture needs at least one component")
        names = [n for n, _ in self.components]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate mixture components in {names}")
        for name, rate in self.components:
            if rate <= 0:
                raise ConfigError(f"rate for {name!r} must be positive, got {rate}")

    @classmethod
    def equal(cls, names: Iterable[str]) -> "MixtureSpec":
        return cls(tuple((n, 1.0) for n in names))

    def fractions(self) -> dict[str, float]:
        total = sum(r for _, r in self.components)
        return {n: r / total for n, r in self.components}


def sample_mixture(
    spec: MixtureSpec,
    sources: dict[str, list[TrainingExample]],
    seed: int,
) -> Iterator[TrainingExample]:
    """Infinite stream drawing a component by rate, then an example uniformly.

    Components with an empty source are dropped with a warning; dropping all
    of them is an error.
    """
    active: list[tuple[str, float]] = []
    for name, rate in spec.components:
        if name not in sources:
            raise ConfigError(f"mixture component {name!r} has no source")
        if not sources[name]:
            logger.warning("mixture component %r is empty; dropped", name)
            continue
        active.append((name, rate))
    if not active:
        raise DataError("all mixture components are empty")
    names = [n for n, _ in active]
    rates = np.array([r for _, r in active], dtype=np.float64)
    p = rates / rates.sum()
    rng = np.random.default_rng(seed)
    while True:
        name = names[int(rng.choice(len(names), p=p))]
        pool = sources[name]
        yield pool[int(rng.integers(len(pool)))]


def collate(
    examples: list[TrainingExample],
    scheme: DocIdScheme,
    max_input_len: int,
    max_target_len: int,
) -> Batch:
    """Pad a list of examples into one Batch in model token space."""
    if not examples:
        raise ConfigError("cannot collate an empty batch")
    B = len(examples)
    srcs = [ex.input_tokens[:max_input_len] for ex in examples]
    if any(not s for s in srcs):
        raise DataError("batch contains an example with empty input")
    Ls = max(len(s) for s in srcs)
    src = np.full((B, Ls), PAD_ID, dtype=np.int64)
    for b, s in enumerate(srcs):
        src[b, : len(s)] = s
    targets = [encode_target(scheme, ex.doc_id) for ex in examples]
    Lt = max(len(t) for t in targets)
    if Lt > max_target_len:
        raise ConfigError(
            f"identifier length {Lt} exceeds max_target_len {max_target_len}"
        )
    if scheme.kind == "atomic":
        tgt_out = np.array(targets, dtype=np.int64)
        tgt_mask = np.ones((B, 1), dtype=bool)
    else:
        tgt_out = np.full((B, Lt), PAD_ID, dtype=np.int64)
        for b, t in enumerate(targets):
            tgt_out[b, : len(t)] = t
        tgt_mask = tgt_out != PAD_ID
    tgt_in = make_dec_input(tgt_out)
    return Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out, tgt_mask=tgt_mask)


def batch_stream(
    stream: Iterator[TrainingExample],
    scheme: DocIdScheme,
    batch_size: int,
    max_input_len: int,
    max_target_len: int,
) -> Iterator[Batch]:
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    while True:
        chunk = [next(stream) for _ in range(batch_size)]
        yield collate(chunk, scheme, max_input_len, max_target_len)
