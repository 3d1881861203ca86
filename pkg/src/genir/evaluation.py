"""Retrieval metrics, ranking analyses, and model cost estimates.

Metrics operate on run files (query_id -> ranked docs) against qrels and
return per-query values plus their arithmetic mean.  The analyses slice a
metric by query/synthetic-query similarity and by synthetic-query budget.
cost_estimate turns a model configuration into parameter and FLOP counts
using the same shape table the initializer allocates from.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from genir.corpus import Query, normalize_text
from genir.errors import ConfigError, DataError
from genir.model.config import ModelConfig, param_shapes
from genir.tasks import SyntheticQuerySet, stable_hash

import numpy as np

logger = logging.getLogger(__name__)

RunDict = dict[str, list[tuple[str, float]]]


@dataclass
class EvalReport:
    metric: str
    cutoff: int
    per_query: dict[str, float]
    aggregate: float
    metadata: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return (
            json.dumps(
                {
                    "metric": self.metric,
                    "cutoff": self.cutoff,
                    "aggregate": self.aggregate,
                    "num_queries": len(self.per_query),
                    "per_query": {q: self.per_query[q] for q in sorted(self.per_query)},
                    "metadata": self.metadata,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
            + "\n"
        )


def _as_run_dict(run) -> RunDict:
    if isinstance(run, dict):
        return run
    return {r.query_id: list(r.entries) for r in run}


def _aggregate(per_query: dict[str, float]) -> float:
    if not per_query:
        return 0.0
    # fsum: the mean does not depend on iteration order.
    return math.fsum(per_query[q] for q in sorted(per_query)) / len(per_query)


def mrr_at_k(run, qrels: Mapping[str, set[str]], k: int = 10) -> EvalReport:
    """Mean reciprocal rank of the first relevant doc within the top k.

    Queries missing from qrels score 0 and stay in the mean (warned).
    """
    if k < 1:
        raise ConfigError("cutoff k must be >= 1")
    run = _as_run_dict(run)
    per_query: dict[str, float] = {}
    for qid, entries in run.items():
        relevant = qrels.get(qid)
        if not relevant:
            logger.warning("mrr: query %r has no qrels entry; scored 0", qid)
            per_query[qid] = 0.0
            continue
        value = 0.0
        for rank, (doc_id, _) in enumerate(entries[:k], start=1):
            if doc_id in relevant:
                value = 1.0 / rank
                break
        per_query[qid] = value
    return EvalReport(
        metric="mrr", cutoff=k, per_query=per_query, aggregate=_aggregate(per_query)
    )


def _set_metric(run, qrels, k: int, name: str, score) -> EvalReport:
    if k < 1:
        raise ConfigError("cutoff k must be >= 1")
    run = _as_run_dict(run)
    per_query: dict[str, float] = {}
    for qid, entries in run.items():
        relevant = qrels.get(qid)
        if not relevant:
            logger.warning("%s: query %r has no relevant docs; excluded", name, qid)
            continue
        top = {doc_id for doc_id, _ in entries[:k]}
        per_query[qid] = score(top, relevant)
    return EvalReport(
        metric=name, cutoff=k, per_query=per_query, aggregate=_aggregate(per_query)
    )


def recall_at_k(run, qrels: Mapping[str, set[str]], k: int) -> EvalReport:
    """Fraction of a query's relevant docs inside the top k; zero-relevant
    queries are excluded from the mean."""
    return _set_metric(
        run, qrels, k, "recall", lambda top, rel: len(top & rel) / len(rel)
    )


def hits_at_k(run, qrels: Mapping[str, set[str]], k: int) -> EvalReport:
    """1 if any relevant doc is inside the top k, else 0; zero-relevant
    queries are excluded from the mean."""
    return _set_metric(
        run, qrels, k, "hits", lambda top, rel: 1.0 if top & rel else 0.0
    )


# ---------------------------------------------------------------------------
# similarity bucket analysis


def jaccard(a: str, b: str) -> float:
    """Word-set Jaccard similarity after lowercase normalization."""
    sa = set(normalize_text(a).split())
    sb = set(normalize_text(b).split())
    if not sa and not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


BUCKET_LABELS = tuple(f"({lo},{lo + 10}]" for lo in range(0, 100, 10))


def _bucket_index(inter: int, union: int) -> int:
    """Bucket of inter/union on the (0,10], (10,20], ... (90,100] percent
    grid, in exact integer arithmetic; a similarity of 0 falls into the
    first bucket."""
    if inter <= 0 or union <= 0:
        return 0
    return min(9, -((-10 * inter) // union) - 1)


@dataclass
class BucketRow:
    label: str
    count: int
    mean_metric: float
    query_ids: list[str]


@dataclass
class BucketReport:
    buckets: list[BucketRow]
    overall_mean: float
    excluded: int  # dev queries with no synthetic queries to compare against
    metric: str

    def to_csv(self) -> str:
        lines = ["bucket,count,mean_metric"]
        for row in self.buckets:
            lines.append(f"{row.label},{row.count},{row.mean_metric:.10g}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return (
            json.dumps(
                {
                    "metric": self.metric,
                    "overall_mean": self.overall_mean,
                    "excluded": self.excluded,
                    "buckets": [
                        {
                            "label": r.label,
                            "count": r.count,
                            "mean_metric": r.mean_metric,
                            "query_ids": r.query_ids,
                        }
                        for r in self.buckets
                    ],
                },
                sort_keys=True,
                separators=(",", ":"),
            )
            + "\n"
        )


def jaccard_bucket_analysis(
    qset: SyntheticQuerySet,
    dev_queries: Sequence[Query],
    qrels: Mapping[str, set[str]],
    per_query_metric: Mapping[str, float],
    metric_name: str = "metric",
) -> BucketReport:
    """Slice a per-query metric by how close each query comes to the
    synthetic queries of its relevant docs.

    Per query the similarity is the maximum word-set Jaccard against every
    synthetic query of every relevant doc; queries whose relevant docs have
    no synthetic queries are excluded and counted.  The buckets partition
    the included queries, so the count-weighted mean over buckets equals
    the overall mean.
    """
    values: list[list[float]] = [[] for _ in range(10)]
    members: list[list[str]] = [[] for _ in range(10)]
    excluded = 0
    for query in dev_queries:
        if query.query_id not in per_query_metric:
            continue
        q_words = set(normalize_text(query.text).split())
        best: tuple[int, int] | None = None  # (inter, union) of the max similarity
        for doc_id in sorted(qrels.get(query.query_id, ())):
            for synth in qset.queries.get(doc_id, ()):
                s_words = set(normalize_text(synth).split())
                union = len(q_words | s_words)
                if union == 0:
                    continue
                inter = len(q_words & s_words)
                if best is None or inter * best[1] > best[0] * union:
                    best = (inter, union)
        if best is None:
            excluded += 1
            continue
        idx = _bucket_index(*best)
        values[idx].append(per_query_metric[query.query_id])
        members[idx].append(query.query_id)
    if excluded:
        logger.warning(
            "bucket analysis: %d queries had no synthetic queries to compare against",
            excluded,
        )
    rows = []
    for i, label in enumerate(BUCKET_LABELS):
        mean = math.fsum(values[i]) / len(values[i]) if values[i] else 0.0
        rows.append(
            BucketRow(label=label, count=len(values[i]), mean_metric=mean, query_ids=members[i])
        )
    included = [v for bucket in values for v in bucket]
    overall = math.fsum(included) / len(included) if included else 0.0
    return BucketReport(buckets=rows, overall_mean=overall, excluded=excluded, metric=metric_name)


# ---------------------------------------------------------------------------
# synthetic-query budget ablation


def query_text_hash(text: str) -> str:
    """Stable hash naming a query inside a score file."""
    return hashlib.blake2b(text.encode("utf-8"), digest_size=8).hexdigest()


def read_score_file(path: str) -> dict[tuple[str, str], float]:
    """TSV rows of doc_id, query_text_hash, score."""
    scores: dict[tuple[str, str], float] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                scores[(parts[0], parts[1])] = float(parts[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad score {parts[2]!r}") from exc
    return scores


STRATEGIES = ("random_k", "scored_top_k")


def select_queries(
    qset: SyntheticQuerySet,
    budget: int,
    strategy: str,
    scores: Mapping[tuple[str, str], float] | None = None,
    seed: int = 0,
) -> SyntheticQuerySet:
    """Per-doc subset of the synthetic queries under a budget.

    random_k draws without replacement with a per-doc seeded generator, so
    the choice is independent of corpus iteration order.  scored_top_k
    keeps the budget highest-scored queries and requires a score for every
    (doc, query) pair.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    if strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}")
    if strategy == "scored_top_k":
        if scores is None:
            raise ConfigError("scored_top_k needs a score file")
        missing = [
            (doc_id, q)
            for doc_id in sorted(qset.queries)
            for q in qset.queries[doc_id]
            if (doc_id, query_text_hash(q)) not in scores
        ]
        if missing:
            shown = ", ".join(f"({d!r}, {q!r})" for d, q in missing[:20])
            more = f" and {len(missing) - 20} more" if len(missing) > 20 else ""
            raise DataError(f"score file is missing {len(missing)} pairs: {shown}{more}")
    selected: dict[str, list[str]] = {}
    for doc_id in sorted(qset.queries):
        queries = qset.queries[doc_id]
        if budget >= len(queries):
            selected[doc_id] = list(queries)
        elif strategy == "random_k":
            rng = np.random.default_rng(stable_hash(seed, "random_k", budget, doc_id))
            idx = sorted(rng.choice(len(queries), size=budget, replace=False).tolist())
            selected[doc_id] = [queries[i] for i in idx]
        else:
            ranked = sorted(
                queries, key=lambda q: (-scores[(doc_id, query_text_hash(q))], q)
            )
            selected[doc_id] = ranked[:budget]
    meta = dict(qset.meta)
    meta["selection"] = f"{strategy}:{budget}"
    return SyntheticQuerySet(queries=selected, meta=meta)


@dataclass
class AblationRow:
    strategy: str
    budget: int
    metric: float


@dataclass
class AblationReport:
    rows: list[AblationRow]

    def to_csv(self) -> str:
        lines = ["strategy,budget,metric"]
        for row in self.rows:
            lines.append(f"{row.strategy},{row.budget},{row.metric:.10g}")
        return "\n".join(lines) + "\n"


def query_budget_ablation(
    qset: SyntheticQuerySet,
    budgets: Iterable[int],
    strategies: Iterable[str],
    pipeline: Callable[[SyntheticQuerySet], float],
    scores: Mapping[tuple[str, str], float] | None = None,
    seed: int = 0,
) -> AblationReport:
    """Run a train+eval closure once per (strategy, budget) query subset."""
    rows = []
    for strategy in strategies:
        for budget in sorted(set(budgets)):
            subset = select_queries(qset, budget, strategy, scores=scores, seed=seed)
            rows.append(AblationRow(strategy=strategy, budget=budget, metric=pipeline(subset)))
    return AblationReport(rows=rows)


# ---------------------------------------------------------------------------
# parameter and FLOP accounting

FLOPS_CONVENTION = (
    "flops = 2 * active_params * processed_tokens, where active_params are "
    "the non-embedding encoder/decoder/auxiliary weights plus the output "
    "projection (vocab x d_model; corpus_size x d_model for the atomic "
    "head), and processed_tokens = beam_width * (input_len + depth + 1) for "
    "sequential identifiers (the beam re-encodes per hypothesis) or "
    "input_len + 1 for atomic (one decode step ranks every document)"
)

SCHEME_KINDS = ("atomic", "naive", "semantic", "semantic2d")


@dataclass
class CostReport:
    total_params: int
    embedding_params: int
    encoder_params: int
    decoder_params: int
    head_params: int
    auxiliary_params: int
    inference_flops: float
    decode_steps: int
    convention: str

    def to_text(self) -> str:
        rows = [
            ("embeddings", self.embedding_params),
            ("encoder", self.encoder_params),
            ("decoder", self.decoder_params),
            ("head", self.head_params),
            ("auxiliary", self.auxiliary_params),
            ("total", self.total_params),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {count:>15,}" for name, count in rows]
        lines.append("")
        lines.append(f"decode steps    {self.decode_steps:,}")
        lines.append(f"inference FLOPs {self.inference_flops:.3e}")
        lines.append(f"convention: {self.convention}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        return (
            json.dumps(
                {
                    "total_params": self.total_params,
                    "embedding_params": self.embedding_params,
                    "encoder_params": self.encoder_params,
                    "decoder_params": self.decoder_params,
                    "head_params": self.head_params,
                    "auxiliary_params": self.auxiliary_params,
                    "inference_flops": self.inference_flops,
                    "decode_steps": self.decode_steps,
                    "convention": self.convention,
                },
                sort_keys=True,
                separators=(",", ":"),
            )
            + "\n"
        )


def cost_estimate(
    cfg: ModelConfig,
    scheme_kind: str,
    corpus_size: int,
    identifier_depth: int = 1,
    beam_width: int = 40,
    input_len: int = 128,
) -> CostReport:
    """Parameter count (exact, from the shape table) and a documented-
    convention FLOPs estimate for one retrieval pass."""
    if scheme_kind not in SCHEME_KINDS:
        raise ConfigError(f"scheme_kind must be one of {SCHEME_KINDS}")
    if (scheme_kind == "atomic") != (cfg.head_kind == "atomic"):
        raise ConfigError("atomic scheme and atomic head go together")
    if scheme_kind == "atomic" and cfg.target_vocab_size != corpus_size:
        raise ConfigError(
            f"atomic head rows ({cfg.target_vocab_size}) must equal corpus size ({corpus_size})"
        )
    if corpus_size < 1 or identifier_depth < 1 or beam_width < 1 or input_len < 1:
        raise ConfigError("corpus_size, identifier_depth, beam_width, input_len must be >= 1")

    groups = {"embed": 0, "enc": 0, "dec": 0, "head": 0, "pawa": 0}
    for name, shape in param_shapes(cfg).items():
        groups[name.split(".", 1)[0]] += int(np.prod(shape, dtype=np.int64))
    total = sum(groups.values())

    if cfg.head_kind == "atomic":
        projection = groups["head"]
    else:
        # Tied head: the projection reuses embedding weights but its matmul
        # is real compute, so it counts as active here.
        projection = cfg.target_vocab_size * cfg.d_model
    active = groups["enc"] + groups["dec"] + groups["pawa"] + projection
    if scheme_kind == "atomic":
        tokens = input_len + 1
        decode_steps = 1
    else:
        tokens = beam_width * (input_len + identifier_depth + 1)
        decode_steps = (identifier_depth + 1) * beam_width
    flops = 2.0 * active * tokens

    return CostReport(
        total_params=total,
        embedding_params=groups["embed"],
        encoder_params=groups["enc"],
        decoder_params=groups["dec"],
        head_params=groups["head"],
        auxiliary_params=groups["pawa"],
        inference_flops=flops,
        decode_steps=decode_steps,
        convention=FLOPS_CONVENTION,
    )
