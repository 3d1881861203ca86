"""Training example construction, query generation, and mixture sampling."""

import numpy as np
import pytest

from genir.constants import BOS_ID, EOS_ID, ID_OFFSET, PAD_ID
from genir.corpus import Document
from genir.docid import assign_atomic_ids, assign_naive_ids
from genir.errors import ConfigError, DataError
from genir.tasks import (
    INDEX_PREFIX,
    QUERY_PREFIX,
    MixtureSpec,
    QueryGenConfig,
    TrainingExample,
    collate,
    batch_stream,
    d2q_examples,
    encode_target,
    extractive_generator,
    generate_queries,
    indexing_examples,
    labeled_examples,
    load_queries,
    model_target_vocab,
    query_input_tokens,
    sample_mixture,
    save_queries,
)
from tests.conftest import make_corpus, synth_text


# ---------------------------------------------------------------------------
# target encoding


def test_encode_target_sequential_offsets_and_eos(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    target = encode_target(scheme, "d003")
    pure = scheme.id_map["d003"]
    assert target == tuple(t + ID_OFFSET for t in pure) + (EOS_ID,)


def test_encode_target_atomic_is_raw_class(small_corpus):
    scheme = assign_atomic_ids(small_corpus)
    assert encode_target(scheme, "d000") == scheme.id_map["d000"]


def test_model_target_vocab(small_corpus):
    naive = assign_naive_ids(small_corpus)
    atomic = assign_atomic_ids(small_corpus)
    assert model_target_vocab(naive) == naive.vocab_size + 3
    assert model_target_vocab(atomic) == len(small_corpus)


def test_query_input_tokens_has_prefix(small_corpus):
    tok = small_corpus.tokenizer
    tokens = query_input_tokens(tok, "ocean river", 8)
    prefix = tuple(tok.encode(QUERY_PREFIX))
    assert tokens[: len(prefix)] == prefix
    assert len(tokens) > len(prefix)
    assert query_input_tokens(tok, "", 8) == ()


# ---------------------------------------------------------------------------
# example builders


def test_indexing_firstp_one_example_per_doc(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    examples = indexing_examples(small_corpus, scheme, view="firstp", max_tokens=16)
    assert len(examples) == len(small_corpus)
    prefix = tuple(small_corpus.tokenizer.encode(INDEX_PREFIX))
    for ex in examples:
        assert ex.input_tokens[: len(prefix)] == prefix
        assert ex.target_tokens == scheme.id_map[ex.doc_id]
        assert ex.task == "indexing"


def test_indexing_daq_covers_docs_with_segments(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    examples = indexing_examples(
        small_corpus, scheme, view="daq", seg_len=8, stride=4
    )
    by_doc = {}
    for ex in examples:
        by_doc.setdefault(ex.doc_id, []).append(ex)
    assert set(by_doc) == set(small_corpus.docs)
    assert all(len(v) >= 2 for v in by_doc.values())  # 24-word docs, short segments


def test_indexing_rejects_unknown_view(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    with pytest.raises(ConfigError):
        indexing_examples(small_corpus, scheme, view="middlep")


def test_indexing_requires_scheme_coverage(small_corpus, tmp_path):
    other = make_corpus(tmp_path / "other", {"x1": "ocean river"})
    scheme = assign_naive_ids(other)
    with pytest.raises(DataError):
        indexing_examples(small_corpus, scheme)


def test_labeled_examples_train_split_only(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    examples = labeled_examples(small_corpus, scheme)
    # q0, q1 are train; q2 is dev and must not appear
    assert {ex.doc_id for ex in examples} == {"d000", "d001"}
    assert all(ex.task == "labeled" for ex in examples)
    prefix = tuple(small_corpus.tokenizer.encode(QUERY_PREFIX))
    assert all(ex.input_tokens[: len(prefix)] == prefix for ex in examples)


# ---------------------------------------------------------------------------
# synthetic query generation


def test_extractive_generator_deterministic():
    doc = Document("d1", "ocean river stone cloud ember violet harbor maple")
    a = extractive_generator(doc, np.random.default_rng(5))
    b = extractive_generator(doc, np.random.default_rng(5))
    assert a == b
    assert 1 <= len(a.split()) <= 8


def test_extractive_generator_words_come_from_doc():
    doc = Document("d1", "ocean river stone cloud ember violet harbor maple")
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = extractive_generator(doc, rng)
        assert set(q.split()) <= set(doc.text.split())


def test_generate_queries_counts_and_determinism(small_corpus):
    cfg = QueryGenConfig(num_queries=5, seed=3)
    a = generate_queries(small_corpus, extractive_generator, cfg)
    b = generate_queries(small_corpus, extractive_generator, cfg)
    assert a.queries == b.queries
    assert a.total() == 5 * len(small_corpus)
    assert a.meta["source"] == "extractive"


def test_generate_queries_per_doc_seeding_is_order_free(small_corpus, tmp_path):
    # A corpus with the same doc under the same seed yields the same queries.
    cfg = QueryGenConfig(num_queries=4, seed=9)
    full = generate_queries(small_corpus, extractive_generator, cfg)
    solo = make_corpus(tmp_path / "solo", {"d007": small_corpus.docs["d007"].text})
    alone = generate_queries(solo, extractive_generator, cfg)
    assert alone.queries["d007"] == full.queries["d007"]


def test_generate_queries_min_words_filters_without_retry(small_corpus):
    loose = generate_queries(
        small_corpus, extractive_generator, QueryGenConfig(num_queries=10, seed=1)
    )
    strict = generate_queries(
        small_corpus,
        extractive_generator,
        QueryGenConfig(num_queries=10, min_words=4, seed=1),
    )
    for doc_id, kept in strict.queries.items():
        assert all(len(q.split()) >= 4 for q in kept)
        # filtering only removes draws, never replaces them
        assert [q for q in loose.queries[doc_id] if len(q.split()) >= 4] == kept


def test_queries_roundtrip(tmp_path, small_corpus):
    qset = generate_queries(
        small_corpus, extractive_generator, QueryGenConfig(num_queries=3, seed=2)
    )
    path = str(tmp_path / "queries.jsonl")
    save_queries(qset, path)
    back = load_queries(path)
    assert back.queries == qset.queries
    assert back.meta == qset.meta


def test_d2q_examples_map_queries_to_doc_targets(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    qset = generate_queries(
        small_corpus, extractive_generator, QueryGenConfig(num_queries=2, seed=0)
    )
    examples = d2q_examples(small_corpus, scheme, qset)
    assert len(examples) == qset.total()
    for ex in examples:
        assert ex.target_tokens == scheme.id_map[ex.doc_id]
        assert ex.task == "d2q"


def test_d2q_rejects_unknown_docs(small_corpus):
    from genir.tasks import SyntheticQuerySet

    scheme = assign_naive_ids(small_corpus)
    qset = SyntheticQuerySet(queries={"ghost": ["ocean river"]})
    with pytest.raises(DataError):
        d2q_examples(small_corpus, scheme, qset)


# ---------------------------------------------------------------------------
# mixtures


def test_mixture_spec_validation():
    with pytest.raises(ConfigError):
        MixtureSpec(())
    with pytest.raises(ConfigError):
        MixtureSpec((("a", 1.0), ("a", 2.0)))
    with pytest.raises(ConfigError):
        MixtureSpec((("a", 0.0),))
    spec = MixtureSpec.equal(["x", "y"])
    assert spec.fractions() == {"x": 0.5, "y": 0.5}


def test_mixture_fractions_unnormalized_rates():
    spec = MixtureSpec((("labeled", 1.0), ("daq", 32.0)))
    assert spec.fractions()["labeled"] == pytest.approx(1 / 33)


def _one_token_example(task: str, doc_id: str) -> TrainingExample:
    return TrainingExample((5,), (0,), task, doc_id)


def test_sample_mixture_deterministic():
    spec = MixtureSpec((("a", 1.0), ("b", 2.0)))
    sources = {
        "a": [_one_token_example("a", "d0"), _one_token_example("a", "d1")],
        "b": [_one_token_example("b", "d2")],
    }
    first = [next(sample_mixture(spec, sources, seed=4)).doc_id for _ in range(1)]
    stream1 = sample_mixture(spec, sources, seed=4)
    stream2 = sample_mixture(spec, sources, seed=4)
    a = [next(stream1).doc_id for _ in range(200)]
    b = [next(stream2).doc_id for _ in range(200)]
    assert a == b
    assert first[0] == a[0]


def test_sample_mixture_rate_fractions_roughly_hold():
    # Full-scale tolerance for the (1, 32) setting lives in the acceptance
    # suite; this is a coarse sanity check.
    spec = MixtureSpec((("labeled", 1.0), ("d2q", 32.0)))
    sources = {
        "labeled": [_one_token_example("labeled", "d0")],
        "d2q": [_one_token_example("d2q", "d1")],
    }
    stream = sample_mixture(spec, sources, seed=11)
    draws = [next(stream).task for _ in range(6600)]
    frac = draws.count("labeled") / len(draws)
    assert abs(frac - 1 / 33) < 0.01


def test_sample_mixture_drops_empty_component():
    spec = MixtureSpec((("a", 1.0), ("b", 1.0)))
    sources = {"a": [], "b": [_one_token_example("b", "d0")]}
    stream = sample_mixture(spec, sources, seed=0)
    assert all(next(stream).task == "b" for _ in range(20))


def test_sample_mixture_all_empty_is_error():
    spec = MixtureSpec((("a", 1.0),))
    with pytest.raises(DataError):
        next(sample_mixture(spec, {"a": []}, seed=0))


def test_sample_mixture_missing_source_is_error():
    spec = MixtureSpec((("a", 1.0),))
    with pytest.raises(ConfigError):
        next(sample_mixture(spec, {}, seed=0))


# ---------------------------------------------------------------------------
# collation


def test_collate_shapes_and_padding(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    examples = [
        TrainingExample((4, 5, 6), scheme.id_map["d000"], "labeled", "d000"),
        TrainingExample((7,), scheme.id_map["d012"], "labeled", "d012"),
    ]
    batch = collate(examples, scheme, max_input_len=8, max_target_len=8)
    assert batch.src.shape == (2, 3)
    assert batch.src[1, 1] == PAD_ID and batch.src[1, 2] == PAD_ID
    assert batch.tgt_in[0, 0] == BOS_ID
    # targets carry offset tokens then EOS; mask covers exactly the non-pad span
    t0 = encode_target(scheme, "d000")
    assert tuple(batch.tgt_out[0, : len(t0)]) == t0
    assert batch.tgt_mask[0].sum() == len(t0)


def test_collate_truncates_long_inputs(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    ex = TrainingExample(tuple(range(4, 30)), scheme.id_map["d000"], "x", "d000")
    batch = collate([ex], scheme, max_input_len=5, max_target_len=8)
    assert batch.src.shape == (1, 5)


def test_collate_rejects_oversized_targets(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    ex = TrainingExample((4,), scheme.id_map["d000"], "x", "d000")
    with pytest.raises(ConfigError):
        collate([ex], scheme, max_input_len=4, max_target_len=1)


def test_collate_rejects_empty_input(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    ex = TrainingExample((), scheme.id_map["d000"], "x", "d000")
    with pytest.raises(DataError):
        collate([ex], scheme, max_input_len=4, max_target_len=8)


def test_collate_atomic_single_step(small_corpus):
    scheme = assign_atomic_ids(small_corpus)
    examples = [
        TrainingExample((4, 5), scheme.id_map["d003"], "d2q", "d003"),
        TrainingExample((6,), scheme.id_map["d004"], "d2q", "d004"),
    ]
    batch = collate(examples, scheme, max_input_len=8, max_target_len=4)
    assert batch.tgt_out.shape == (2, 1)
    assert batch.tgt_in.shape == (2, 1) and (batch.tgt_in == BOS_ID).all()
    assert batch.tgt_mask.all()
    assert batch.tgt_out[0, 0] == scheme.id_map["d003"][0]


def test_batch_stream_batches(small_corpus):
    scheme = assign_naive_ids(small_corpus)
    spec = MixtureSpec((("firstp", 1.0),))
    sources = {"firstp": indexing_examples(small_corpus, scheme, max_tokens=12)}
    stream = sample_mixture(spec, sources, seed=1)
    batches = batch_stream(stream, scheme, 4, max_input_len=16, max_target_len=8)
    batch = next(batches)
    assert batch.src.shape[0] == 4
    assert next(batches).src.shape[0] == 4
