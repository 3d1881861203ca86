"""Metric oracles, bucket/budget analyses, and cost accounting."""

import json
import math

import numpy as np
import pytest

from genir.errors import ConfigError, DataError
from genir.evaluation import (
    AblationReport,
    cost_estimate,
    hits_at_k,
    jaccard,
    jaccard_bucket_analysis,
    mrr_at_k,
    query_budget_ablation,
    query_text_hash,
    read_score_file,
    recall_at_k,
    select_queries,
)
from genir.corpus import Query
from genir.model import ModelConfig
from genir.tasks import SyntheticQuerySet


def _run(entries_by_qid):
    return {
        qid: [(d, -float(i)) for i, d in enumerate(docs)]
        for qid, docs in entries_by_qid.items()
    }


# ---------------------------------------------------------------------------
# metrics


def test_mrr_direct_examples():
    run = _run({"q1": ["a", "b"], "q2": ["x", "y", "z", "rel"], "q3": ["m"] * 0 + ["n"]})
    qrels = {"q1": {"a"}, "q2": {"rel"}, "q3": {"missing"}}
    report = mrr_at_k(run, qrels, 10)
    assert report.per_query["q1"] == 1.0
    assert report.per_query["q2"] == 0.25
    assert report.per_query["q3"] == 0.0


def test_mrr_cutoff_zeroes_late_hits():
    run = _run({"q1": [f"d{i}" for i in range(12)]})
    report = mrr_at_k(run, {"q1": {"d10"}}, 10)  # first relevant at rank 11
    assert report.per_query["q1"] == 0.0


def test_mrr_query_absent_from_qrels_scores_zero():
    run = _run({"q1": ["a"], "ghost": ["a"]})
    report = mrr_at_k(run, {"q1": {"a"}}, 10)
    assert report.per_query["ghost"] == 0.0
    assert report.aggregate == pytest.approx(0.5)


def test_recall_and_hits_examples():
    run = _run({"q1": ["a", "b", "c", "d", "e"]})
    qrels = {"q1": {"c", "zz"}}  # one of two relevant docs inside top-5
    assert recall_at_k(run, qrels, 5).per_query["q1"] == 0.5
    assert hits_at_k(run, qrels, 5).per_query["q1"] == 1.0
    assert recall_at_k(run, qrels, 2).per_query["q1"] == 0.0


def test_zero_relevant_queries_excluded():
    run = _run({"q1": ["a"], "q2": ["b"]})
    qrels = {"q1": {"a"}}
    report = recall_at_k(run, qrels, 1)
    assert "q2" not in report.per_query
    assert report.aggregate == 1.0


def test_cutoff_validation():
    with pytest.raises(ConfigError):
        mrr_at_k({}, {}, 0)
    with pytest.raises(ConfigError):
        recall_at_k({}, {}, -1)


def test_metrics_match_brute_force_on_random_runs():
    rng = np.random.default_rng(17)
    docs = [f"d{i}" for i in range(30)]
    for _ in range(50):
        run = {}
        qrels = {}
        for q in range(rng.integers(1, 8)):
            qid = f"q{q}"
            ranking = list(rng.permutation(docs)[: rng.integers(1, 15)])
            run[qid] = [(d, -float(i)) for i, d in enumerate(ranking)]
            if rng.random() < 0.9:
                qrels[qid] = set(rng.choice(docs, size=rng.integers(1, 4), replace=False))
        k = int(rng.integers(1, 12))
        got_mrr = mrr_at_k(run, qrels, k)
        got_rec = recall_at_k(run, qrels, k)
        got_hit = hits_at_k(run, qrels, k)
        for qid, entries in run.items():
            rel = qrels.get(qid, set())
            rr = 0.0
            for rank, (d, _) in enumerate(entries[:k], start=1):
                if d in rel:
                    rr = 1.0 / rank
                    break
            assert got_mrr.per_query[qid] == rr
            if rel:
                top = [d for d, _ in entries[:k]]
                assert got_rec.per_query[qid] == len(rel & set(top)) / len(rel)
                assert got_hit.per_query[qid] == (1.0 if rel & set(top) else 0.0)
            else:
                assert qid not in got_rec.per_query
        assert got_mrr.aggregate == pytest.approx(
            sum(got_mrr.per_query.values()) / len(got_mrr.per_query)
        )


def test_report_json_is_stable():
    report = mrr_at_k(_run({"q1": ["a"]}), {"q1": {"a"}}, 10)
    obj = json.loads(report.to_json())
    assert obj["aggregate"] == 1.0
    assert obj["metric"] == "mrr"


# ---------------------------------------------------------------------------
# jaccard buckets


def test_jaccard_examples():
    assert jaccard("a b c", "a b c") == 1.0
    assert jaccard("a b c", "b c d") == 0.5
    assert jaccard("Ocean River", "ocean river") == 1.0
    assert jaccard("a", "b") == 0.0
    assert jaccard("", "") == 0.0


def _bucket_fixture():
    queries = [
        Query("q1", "alpha beta gamma", "dev"),
        Query("q2", "delta epsilon", "dev"),
        Query("q3", "zeta eta theta iota", "dev"),
        Query("q4", "kappa", "dev"),
    ]
    qrels = {
        "q1": {"d1"},
        "q2": {"d2"},
        "q3": {"d3"},
        "q4": {"d4"},  # d4 has no synthetic queries -> excluded
    }
    qset = SyntheticQuerySet(
        queries={
            "d1": ["alpha beta gamma"],  # jaccard 1.0 -> (90,100]
            "d2": ["delta epsilon zz ww"],  # 2/4 = 0.5 -> (40,50]
            "d3": ["totally different words"],  # 0.0 -> first bucket
        }
    )
    metric = {"q1": 1.0, "q2": 0.5, "q3": 0.0, "q4": 0.25}
    return qset, queries, qrels, metric


def test_bucket_placement_and_exclusion():
    qset, queries, qrels, metric = _bucket_fixture()
    report = jaccard_bucket_analysis(qset, queries, qrels, metric)
    by_label = {row.label: row for row in report.buckets}
    assert by_label["(90,100]"].query_ids == ["q1"]
    assert by_label["(40,50]"].query_ids == ["q2"]
    assert by_label["(0,10]"].query_ids == ["q3"]  # zero similarity, first bucket
    assert report.excluded == 1
    assert sum(row.count for row in report.buckets) == 3


def test_bucket_partition_identity():
    qset, queries, qrels, metric = _bucket_fixture()
    report = jaccard_bucket_analysis(qset, queries, qrels, metric)
    total = sum(row.count for row in report.buckets)
    weighted = math.fsum(
        v for row in report.buckets for v in (metric[q] for q in row.query_ids)
    )
    assert report.overall_mean == weighted / total
    # buckets partition the included queries exactly
    seen = [q for row in report.buckets for q in row.query_ids]
    assert sorted(seen) == ["q1", "q2", "q3"]


def test_bucket_takes_max_similarity_over_relevant_docs():
    queries = [Query("q1", "alpha beta", "dev")]
    qrels = {"q1": {"d1", "d2"}}
    qset = SyntheticQuerySet(
        queries={"d1": ["nothing shared"], "d2": ["alpha beta"]}
    )
    report = jaccard_bucket_analysis(qset, queries, qrels, {"q1": 1.0})
    assert report.buckets[-1].query_ids == ["q1"]  # max is 1.0, not 0.0


def test_bucket_boundaries_are_exact():
    # similarity exactly 10% must land in (0,10], not (10,20]
    q_words = "w0 w1 w2 w3 w4 w5 w6 w7 w8"  # 9 words
    synth = "w0 x1"  # union 10, intersection 1
    queries = [Query("q1", q_words, "dev")]
    qset = SyntheticQuerySet(queries={"d1": [synth]})
    report = jaccard_bucket_analysis(qset, queries, {"q1": {"d1"}}, {"q1": 1.0})
    assert report.buckets[0].query_ids == ["q1"]


def test_bucket_csv_shape():
    qset, queries, qrels, metric = _bucket_fixture()
    report = jaccard_bucket_analysis(qset, queries, qrels, metric)
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "bucket,count,mean_metric"
    assert len(lines) == 11


# ---------------------------------------------------------------------------
# budget selection


def _qset(num_docs=3, per_doc=10) -> SyntheticQuerySet:
    return SyntheticQuerySet(
        queries={
            f"d{i}": [f"query {i} variant {j}" for j in range(per_doc)]
            for i in range(num_docs)
        }
    )


def test_select_queries_random_k_deterministic():
    qset = _qset()
    a = select_queries(qset, 4, "random_k", seed=5)
    b = select_queries(qset, 4, "random_k", seed=5)
    assert a.queries == b.queries
    assert all(len(v) == 4 for v in a.queries.values())
    for doc_id, kept in a.queries.items():
        assert set(kept) <= set(qset.queries[doc_id])


def test_select_queries_budget_at_capacity_keeps_everything():
    qset = _qset(per_doc=7)
    full_random = select_queries(qset, 100, "random_k", seed=1)
    scores = {
        (d, query_text_hash(q)): float(j)
        for d, qs in qset.queries.items()
        for j, q in enumerate(qs)
    }
    full_scored = select_queries(qset, 100, "scored_top_k", scores=scores)
    assert full_random.queries == qset.queries
    assert full_scored.queries == qset.queries


def test_select_queries_scored_top_k_orders_by_score():
    qset = SyntheticQuerySet(queries={"d0": ["qa", "qb", "qc"]})
    scores = {
        ("d0", query_text_hash("qa")): 0.1,
        ("d0", query_text_hash("qb")): 0.9,
        ("d0", query_text_hash("qc")): 0.5,
    }
    sel = select_queries(qset, 2, "scored_top_k", scores=scores)
    assert sel.queries["d0"] == ["qb", "qc"]


def test_select_queries_missing_scores_listed():
    qset = SyntheticQuerySet(queries={"d0": ["qa", "qb"]})
    scores = {("d0", query_text_hash("qa")): 1.0}
    with pytest.raises(DataError, match="qb"):
        select_queries(qset, 1, "scored_top_k", scores=scores)


def test_select_queries_validation():
    with pytest.raises(ConfigError):
        select_queries(_qset(), 0, "random_k")
    with pytest.raises(ConfigError):
        select_queries(_qset(), 2, "best_k")
    with pytest.raises(ConfigError):
        select_queries(_qset(), 2, "scored_top_k")  # no scores


def test_score_file_roundtrip(tmp_path):
    path = tmp_path / "scores.tsv"
    h = query_text_hash("some query")
    path.write_text(f"d0\t{h}\t0.75\nd1\t{h}\t-1.5\n")
    scores = read_score_file(str(path))
    assert scores == {("d0", h): 0.75, ("d1", h): -1.5}
    path.write_text("d0\tonly two\n")
    with pytest.raises(DataError):
        read_score_file(str(path))


def test_query_budget_ablation_runs_pipeline_per_cell():
    qset = _qset(num_docs=2, per_doc=10)
    calls = []

    def pipeline(sub):
        calls.append(sub.meta["selection"])
        return float(sub.total())

    report = query_budget_ablation(
        qset, budgets=[2, 10], strategies=["random_k"], pipeline=pipeline
    )
    assert calls == ["random_k:2", "random_k:10"]
    assert [row.metric for row in report.rows] == [4.0, 20.0]
    lines = report.to_csv().strip().split("\n")
    assert lines[0] == "strategy,budget,metric"
    assert len(lines) == 3


# ---------------------------------------------------------------------------
# cost accounting


def _base_cfg(target_vocab, head_kind, shared, pawa_layers=0):
    return ModelConfig(
        num_layers=12,
        d_model=768,
        num_heads=12,
        d_ff=3072,
        input_vocab_size=32128,
        target_vocab_size=target_vocab,
        max_input_len=128,
        max_target_len=32,
        head_kind=head_kind,
        dropout_rate=0.1,
        shared_vocab=shared,
        pawa_layers=pawa_layers,
    )


def test_cost_breakdown_sums_to_total():
    report = cost_estimate(_base_cfg(32128, "standard", True), "naive", 1000, 4, 10)
    parts = (
        report.embedding_params
        + report.encoder_params
        + report.decoder_params
        + report.head_params
        + report.auxiliary_params
    )
    assert parts == report.total_params


def test_cost_base_naive_near_220m():
    report = cost_estimate(_base_cfg(32128, "standard", True), "naive", 8841823, 7, 40)
    assert abs(report.total_params - 220e6) / 220e6 < 0.05


def test_cost_atomic_minus_naive_is_corpus_times_width():
    naive = cost_estimate(_base_cfg(32128, "standard", True), "naive", 8841823, 7, 40)
    atomic = cost_estimate(_base_cfg(8841823, "atomic", False), "atomic", 8841823)
    assert atomic.total_params - naive.total_params == 8841823 * 768


def test_cost_atomic_head_delta_legacy_scale():
    # 109k-doc corpus at width 768: the head alone costs about 84M
    atomic = cost_estimate(_base_cfg(109000, "atomic", False), "atomic", 109000)
    assert atomic.head_params == 109000 * 768
    assert abs(atomic.head_params - 8.4e7) / 8.4e7 < 0.01


def test_cost_flops_formulas_exact():
    cfg = _base_cfg(32128, "standard", True)
    seq = cost_estimate(cfg, "naive", 1000, identifier_depth=4, beam_width=10, input_len=32)
    active = (
        seq.encoder_params + seq.decoder_params + seq.auxiliary_params + 32128 * 768
    )
    assert seq.inference_flops == 2.0 * active * 10 * (32 + 4 + 1)
    assert seq.decode_steps == 50
    atom = cost_estimate(_base_cfg(1000, "atomic", False), "atomic", 1000, input_len=32)
    active_a = atom.encoder_params + atom.decoder_params + atom.head_params
    assert atom.inference_flops == 2.0 * active_a * 33
    assert atom.decode_steps == 1


def test_cost_convention_is_printed():
    report = cost_estimate(_base_cfg(32128, "standard", True), "naive", 10, 2, 4)
    assert "flops" in report.convention
    assert report.convention in report.to_text()
    assert json.loads(report.to_json())["convention"] == report.convention


def test_cost_validation():
    with pytest.raises(ConfigError):
        cost_estimate(_base_cfg(32128, "standard", True), "fancy", 10)
    with pytest.raises(ConfigError):
        cost_estimate(_base_cfg(32128, "standard", True), "atomic", 10)
    with pytest.raises(ConfigError):
        cost_estimate(_base_cfg(500, "atomic", False), "atomic", 10)
    with pytest.raises(ConfigError):
        cost_estimate(_base_cfg(32128, "standard", True), "naive", 0)


def test_cost_pawa_adds_auxiliary_stack():
    plain = cost_estimate(_base_cfg(32128, "standard", True), "semantic2d", 1000, 4, 10)
    pawa = cost_estimate(
        _base_cfg(32128, "pawa", True), "semantic2d", 1000, 4, 10
    )
    assert pawa.auxiliary_params > 0
    assert plain.auxiliary_params == 0
    assert pawa.total_params - plain.total_params == pawa.auxiliary_params
