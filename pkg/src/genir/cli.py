"""Config-driven command line wiring the whole retrieval pipeline.

One JSON config describes a run; every command reads it, applies dotted
--set overrides, takes a lock on the output directory, writes its outputs
atomically (temp file + rename), and leaves the fully resolved config
beside them.  Re-running a command with the same config and seed rewrites
byte-identical artifacts.

Exit codes: 0 success, 1 config error, 2 data error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import json
import logging
import os
import shutil
import sys
from importlib import resources

import numpy as np

from genir.corpus import (
    Corpus,
    coverage_stats,
    load_corpus,
    load_corpus_dir,
    save_corpus,
    subset_corpus,
)
from genir.decode import BeamConfig, RankedList, atomic_rank, beam_search, read_run, write_run
from genir.docid import (
    assign_atomic_ids,
    assign_naive_ids,
    build_semantic_tree,
    embed_corpus,
    load_scheme,
    save_scheme,
    scheme_file_exists,
    semantic_ids_from_tree,
    to_2d_scheme,
)
from genir.errors import ConfigError, DataError, GenirError
from genir.evaluation import (
    cost_estimate,
    hits_at_k,
    jaccard_bucket_analysis,
    mrr_at_k,
    query_budget_ablation,
    read_score_file,
    recall_at_k,
)
from genir.model import ModelConfig, init_model, load_checkpoint
from genir.model.optim import compute_loss
from genir.tasks import (
    MixtureSpec,
    QueryGenConfig,
    batch_stream,
    d2q_examples,
    extractive_generator,
    generate_queries,
    indexing_examples,
    labeled_examples,
    load_queries,
    model_target_vocab,
    query_input_tokens,
    sample_mixture,
    save_queries,
    stable_hash,
)
from genir.training import TrainSettings, run_training
from genir.trie import build_trie

logger = logging.getLogger(__name__)

DEFAULTS: dict = {
    "seed": 0,
    "output_dir": "out",
    "corpus": {
        "dir": None,
        "docs": None,
        "queries": None,
        "qrels": None,
        "subset_size": None,
        "tokenizer_vocab": 1024,
    },
    "scheme": {
        "kind": "naive",
        "path": None,
        "k": 30,
        "c": 100,
        "embed_dim": 256,
        "sample_cap": 100000,
        "sample_threshold": 1000000,
        "seed": None,
    },
    "model": {
        "num_layers": 2,
        "d_model": 64,
        "num_heads": 4,
        "d_ff": 128,
        "max_input_len": 64,
        "max_target_len": 16,
        "head_kind": "standard",
        "dropout_rate": 0.1,
        "pawa_layers": 0,
    },
    "querygen": {
        "path": None,
        "num_queries": 40,
        "top_k": 10,
        "temperature": 1.0,
        "min_words": 0,
        "seed": None,
    },
    "mixture": {"d2q": 1.0},
    "indexing": {"max_tokens": 64, "seg_len": 32, "stride": None},
    "training": {
        "steps": 2000,
        "batch_size": 32,
        "base_lr": 0.001,
        "warmup_steps": 100,
        "consistency": "off",
        "kl_weight": 0.015,
        "softmax_weight": 0.15,
        "log_every": 100,
        "eval_interval": 0,
        "checkpoint_every": 0,
        "seed": None,
    },
    "beam": {
        "beam_width": 40,
        "max_steps": 0,
        "constrained": True,
        "brevity_penalty": 0.0,
    },
    "retrieve": {"split": "dev", "checkpoint": None, "run": None},
    "eval": {"metrics": ["mrr@10", "hits@1"], "split": "dev"},
    "analysis": {
        "kind": "bucket",
        "metric": "mrr@10",
        "budgets": [10, 20, 30, 40, 100],
        "strategies": ["random_k"],
        "score_file": None,
        "seed": None,
    },
    "cost": {
        "scheme_kind": None,
        "corpus_size": None,
        "identifier_depth": 8,
        "beam_width": 40,
        "input_len": 128,
        "input_vocab": 32128,
        "target_vocab": None,
    },
}

PRESETS = ("dsi", "nci", "d2q_only")

MIXTURE_SOURCES = ("firstp", "daq", "labeled", "d2q")


# ---------------------------------------------------------------------------
# config plumbing


def _merge(base: dict, overlay: dict, path: str = "") -> None:
    for key, value in overlay.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {where}")
        current = base[key]
        if isinstance(current, dict) and where != "mixture":
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            _merge(current, value, where)
        else:
            base[key] = _coerce(where, current, value)


def _coerce(where: str, current, value):
    if value is None or current is None:
        return value
    if isinstance(current, bool) or isinstance(value, bool):
        if isinstance(current, bool) and isinstance(value, bool):
            return value
        raise ConfigError(f"{where}: expected {type(current).__name__}")
    if isinstance(current, float) and isinstance(value, int):
        return float(value)
    if isinstance(current, dict) and isinstance(value, dict):
        return value
    if isinstance(current, list) and isinstance(value, list):
        return value
    if type(current) is not type(value):
        raise ConfigError(
            f"{where}: expected {type(current).__name__}, got {type(value).__name__}"
        )
    return value


def _apply_set(cfg: dict, expr: str) -> None:
    if "=" not in expr:
        raise ConfigError(f"--set needs key=value, got {expr!r}")
    dotted, raw = expr.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = dotted.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        prefix = ".".join(parts[: i + 1])
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key: {prefix}")
        node = node[part]
    leaf = parts[-1]
    if not isinstance(node, dict):
        raise ConfigError(f"unknown config key: {dotted}")
    if leaf not in node and ".".join(parts[:-1]) != "mixture":
        raise ConfigError(f"unknown config key: {dotted}")
    node[leaf] = _coerce(dotted, node.get(leaf), value)


def load_run_config(
    config_path: str | None = None,
    preset: str | None = None,
    sets: list[str] | None = None,
    output_dir: str | None = None,
) -> dict:
    """Defaults, then preset, then config file, then --set overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {PRESETS}")
        text = (
            resources.files("genir").joinpath("presets", f"{preset}.json").read_text("utf-8")
        )
        _merge(cfg, json.loads(text))
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                overlay = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{config_path}: invalid JSON: {exc}") from exc
        if not isinstance(overlay, dict):
            raise ConfigError(f"{config_path}: config must be a JSON object")
        _merge(cfg, overlay)
    for expr in sets or []:
        _apply_set(cfg, expr)
    if output_dir:
        cfg["output_dir"] = output_dir
    _validate(cfg)
    return cfg


def _validate(cfg: dict) -> None:
    if cfg["scheme"]["kind"] not in ("atomic", "naive", "semantic", "semantic2d"):
        raise ConfigError(f"scheme.kind: unknown kind {cfg['scheme']['kind']!r}")
    for name in cfg["mixture"]:
        if name not in MIXTURE_SOURCES:
            raise ConfigError(
                f"mixture.{name}: unknown source; choose from {MIXTURE_SOURCES}"
            )
    atomic_scheme = cfg["scheme"]["kind"] == "atomic"
    atomic_head = cfg["model"]["head_kind"] == "atomic"
    if atomic_scheme != atomic_head:
        raise ConfigError(
            "model.head_kind: atomic head and atomic scheme must be used together"
        )
    for metric in cfg["eval"]["metrics"]:
        _parse_metric(metric)


def _seed_for(cfg: dict, section: str) -> int:
    value = cfg[section].get("seed")
    return cfg["seed"] if value is None else value


def canonical_config(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":")) + "\n"


# ---------------------------------------------------------------------------
# output handling


def write_atomic(path: str, data) -> None:
    tmp = path + ".tmp"
    mode = "wb" if isinstance(data, bytes) else "w"
    kwargs = {} if isinstance(data, bytes) else {"encoding": "utf-8"}
    with open(tmp, mode, **kwargs) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _replace_dir(tmp_dir: str, final_dir: str) -> None:
    if os.path.isdir(final_dir):
        shutil.rmtree(final_dir)
    os.replace(tmp_dir, final_dir)


@contextlib.contextmanager
def lock_output(out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    lock_path = os.path.join(out_dir, ".lock")
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeError(
            f"{out_dir} is locked by another run (delete {lock_path} if stale)"
        ) from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(lock_path)


def _write_resolved(cfg: dict) -> None:
    write_atomic(
        os.path.join(cfg["output_dir"], "resolved_config.json"), canonical_config(cfg)
    )


# ---------------------------------------------------------------------------
# shared loading steps


def _load_any_corpus(cfg: dict) -> Corpus:
    c = cfg["corpus"]
    if c["dir"]:
        return load_corpus_dir(c["dir"])
    if not c["docs"]:
        raise ConfigError("corpus.dir or corpus.docs is required")
    return load_corpus(
        c["docs"],
        queries_path=c["queries"],
        qrels_path=c["qrels"],
        tokenizer_vocab_size=c["tokenizer_vocab"],
    )


def _scheme_path(cfg: dict) -> str:
    return cfg["scheme"]["path"] or os.path.join(cfg["output_dir"], "ids.tsv")


def _queries_path(cfg: dict) -> str:
    return cfg["querygen"]["path"] or os.path.join(cfg["output_dir"], "queries.jsonl")


def _run_path(cfg: dict) -> str:
    return cfg["retrieve"]["run"] or os.path.join(cfg["output_dir"], "run.tsv")


def _checkpoint_dir(cfg: dict) -> str:
    return cfg["retrieve"]["checkpoint"] or os.path.join(cfg["output_dir"], "checkpoint")


def _load_scheme_checked(cfg: dict):
    path = _scheme_path(cfg)
    if not scheme_file_exists(path):
        raise DataError(f"no identifier scheme at {path}; run build-ids first")
    return load_scheme(path)


def _build_scheme(cfg: dict, corpus: Corpus):
    kind = cfg["scheme"]["kind"]
    if kind == "atomic":
        return assign_atomic_ids(corpus)
    if kind == "naive":
        return assign_naive_ids(corpus)
    s = cfg["scheme"]
    emb = embed_corpus(corpus, dim=s["embed_dim"], seed=_seed_for(cfg, "scheme"))
    tree = build_semantic_tree(
        emb,
        k=s["k"],
        c=s["c"],
        seed=_seed_for(cfg, "scheme"),
        sample_cap=s["sample_cap"],
        sample_threshold=s["sample_threshold"],
    )
    scheme = semantic_ids_from_tree(tree)
    if kind == "semantic2d":
        scheme = to_2d_scheme(scheme)
    return scheme


def _model_config(cfg: dict, corpus: Corpus, scheme) -> ModelConfig:
    m = cfg["model"]
    needed = 1 if scheme.kind == "atomic" else scheme.max_depth() + 1
    if m["max_target_len"] < needed:
        raise ConfigError(
            f"model.max_target_len: identifiers need {needed} decoder positions"
        )
    return ModelConfig(
        num_layers=m["num_layers"],
        d_model=m["d_model"],
        num_heads=m["num_heads"],
        d_ff=m["d_ff"],
        input_vocab_size=corpus.tokenizer.vocab_size,
        target_vocab_size=model_target_vocab(scheme),
        max_input_len=m["max_input_len"],
        max_target_len=m["max_target_len"],
        head_kind=m["head_kind"],
        dropout_rate=m["dropout_rate"],
        pawa_layers=m["pawa_layers"],
    )


def _build_sources(cfg: dict, corpus: Corpus, scheme, qset=None) -> dict:
    sources: dict[str, list] = {}
    idx = cfg["indexing"]
    for name, rate in cfg["mixture"].items():
        if rate is None:
            continue
        if name == "firstp":
            sources[name] = indexing_examples(
                corpus, scheme, view="firstp", max_tokens=idx["max_tokens"]
            )
        elif name == "daq":
            sources[name] = indexing_examples(
                corpus,
                scheme,
                view="daq",
                seg_len=idx["seg_len"],
                stride=idx["stride"],
            )
        elif name == "labeled":
            sources[name] = labeled_examples(
                corpus, scheme, max_tokens=cfg["model"]["max_input_len"]
            )
        else:
            if qset is None:
                qset = load_queries(_queries_path(cfg))
            sources[name] = d2q_examples(
                corpus, scheme, qset, max_tokens=cfg["model"]["max_input_len"]
            )
    return sources


def _mixture_spec(cfg: dict) -> MixtureSpec:
    # A null rate (e.g. --set mixture.d2q=null) removes the component.
    live = {n: r for n, r in cfg["mixture"].items() if r is not None}
    return MixtureSpec(tuple(sorted(live.items())))


def _parse_metric(spec: str):
    name, sep, k = spec.partition("@")
    fns = {"mrr": mrr_at_k, "recall": recall_at_k, "hits": hits_at_k}
    if name not in fns or not sep or not k.isdigit() or int(k) < 1:
        raise ConfigError(
            f"eval metric must look like mrr@10, recall@5, or hits@1; got {spec!r}"
        )
    return fns[name], int(k)


# ---------------------------------------------------------------------------
# commands


def cmd_subset(cfg: dict) -> None:
    size = cfg["corpus"]["subset_size"]
    if not size:
        raise ConfigError("corpus.subset_size is required for subset")
    corpus = _load_any_corpus(cfg)
    sub = subset_corpus(
        corpus, size, seed=cfg["seed"], name=f"{corpus.manifest.name}-{size}"
    )
    out = cfg["output_dir"]
    tmp = os.path.join(out, "corpus.tmp")
    if os.path.isdir(tmp):
        shutil.rmtree(tmp)
    save_corpus(sub, tmp)
    _replace_dir(tmp, os.path.join(out, "corpus"))
    _write_resolved(cfg)
    stats = coverage_stats(sub)
    print(
        f"subset: {len(sub)} docs, {len(sub.queries)} queries, "
        f"coverage {stats.label_coverage:.3f} -> {os.path.join(out, 'corpus')}"
    )


def cmd_build_ids(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    scheme = _build_scheme(cfg, corpus)
    path = os.path.join(cfg["output_dir"], "ids.tsv")
    tmp = path + ".tmp"
    save_scheme(scheme, tmp)
    os.replace(tmp + ".meta.json", path + ".meta.json")
    os.replace(tmp, path)
    _write_resolved(cfg)
    print(
        f"build-ids: {scheme.kind} ids for {len(scheme.id_map)} docs, "
        f"vocab {scheme.vocab_size}, max depth {scheme.max_depth()} -> {path}"
    )


def cmd_gen_queries(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    q = cfg["querygen"]
    qcfg = QueryGenConfig(
        num_queries=q["num_queries"],
        top_k=q["top_k"],
        temperature=q["temperature"],
        min_words=q["min_words"],
        seed=_seed_for(cfg, "querygen"),
    )
    qset = generate_queries(corpus, extractive_generator, qcfg)
    path = os.path.join(cfg["output_dir"], "queries.jsonl")
    tmp = path + ".tmp"
    save_queries(qset, tmp)
    os.replace(tmp + ".meta.json", path + ".meta.json")
    os.replace(tmp, path)
    _write_resolved(cfg)
    print(f"gen-queries: {qset.total()} queries over {len(qset.queries)} docs -> {path}")


def cmd_train(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    scheme = _load_scheme_checked(cfg)
    model_cfg = _model_config(cfg, corpus, scheme)
    sources = _build_sources(cfg, corpus, scheme)
    spec = _mixture_spec(cfg)
    t = cfg["training"]
    seed = _seed_for(cfg, "training")
    params = init_model(model_cfg, seed=stable_hash(cfg["seed"], "init"))
    stream = sample_mixture(spec, sources, seed=stable_hash(seed, "mixture"))
    batches = batch_stream(
        stream,
        scheme,
        t["batch_size"],
        model_cfg.max_input_len,
        model_cfg.max_target_len,
    )
    eval_fn = None
    if t["eval_interval"] > 0:
        probe_stream = sample_mixture(spec, sources, seed=stable_hash(seed, "probe"))
        probe = next(
            batch_stream(
                probe_stream,
                scheme,
                t["batch_size"],
                model_cfg.max_input_len,
                model_cfg.max_target_len,
            )
        )

        def eval_fn(params, step):
            report, _ = compute_loss(params, probe, want_grads=False)
            return {"probe_ce": report.cross_entropy}

    settings = TrainSettings(
        steps=t["steps"],
        base_lr=t["base_lr"],
        warmup_steps=t["warmup_steps"],
        consistency=t["consistency"],
        kl_weight=t["kl_weight"],
        softmax_weight=t["softmax_weight"],
        log_every=t["log_every"],
        eval_every=t["eval_interval"],
        checkpoint_every=t["checkpoint_every"],
        seed=seed,
    )
    _, _, rows = run_training(params, batches, settings, out_dir=cfg["output_dir"])
    _write_resolved(cfg)
    last = rows[-1] if rows else {}
    print(
        f"train: {t['steps']} steps, final ce {last.get('ce', float('nan')):.4f} "
        f"-> {os.path.join(cfg['output_dir'], 'checkpoint')}"
    )


def _retrieve_runs(cfg: dict, corpus: Corpus, scheme, params) -> list[RankedList]:
    beam = cfg["beam"]
    beam_cfg = BeamConfig(
        beam_width=beam["beam_width"],
        max_steps=beam["max_steps"],
        constrained=beam["constrained"],
        brevity_penalty=beam["brevity_penalty"],
    )
    queries = sorted(
        corpus.queries_for_split(cfg["retrieve"]["split"]), key=lambda q: q.query_id
    )
    if not queries:
        raise DataError(f"no queries in split {cfg['retrieve']['split']!r}")
    trie = None
    if scheme.kind != "atomic" and beam_cfg.constrained:
        trie = build_trie(scheme)
    runs = []
    for query in queries:
        tokens = query_input_tokens(
            corpus.tokenizer, query.text, params.config.max_input_len
        )
        if not tokens:
            logger.warning("retrieve: query %r has empty text; skipped", query.query_id)
            continue
        if scheme.kind == "atomic":
            runs.append(
                atomic_rank(
                    params, scheme, tokens, beam_cfg.beam_width, query_id=query.query_id
                )
            )
        else:
            runs.append(
                beam_search(
                    params, scheme, tokens, beam_cfg, trie=trie, query_id=query.query_id
                )
            )
    return runs


def cmd_retrieve(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    scheme = _load_scheme_checked(cfg)
    ckpt = _checkpoint_dir(cfg)
    if not os.path.isdir(ckpt):
        raise DataError(f"no checkpoint at {ckpt}; run train first")
    params, _ = load_checkpoint(ckpt)
    runs = _retrieve_runs(cfg, corpus, scheme, params)
    path = _run_path(cfg)
    tmp = path + ".tmp"
    write_run(tmp, runs)
    os.replace(tmp, path)
    _write_resolved(cfg)
    print(f"retrieve: {len(runs)} queries -> {path}")


def cmd_eval(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    run = read_run(_run_path(cfg))
    _write_resolved(cfg)
    for spec in cfg["eval"]["metrics"]:
        fn, k = _parse_metric(spec)
        report = fn(run, corpus.qrels, k)
        report.metadata = {"run": _run_path(cfg), "split": cfg["eval"]["split"]}
        out_path = os.path.join(cfg["output_dir"], f"eval_{spec}.json")
        write_atomic(out_path, report.to_json())
        print(f"{spec}: {report.aggregate:.4f} over {len(report.per_query)} queries")


def _ablation_pipeline(cfg: dict, corpus: Corpus, scheme):
    """Train + retrieve + eval closure for one synthetic-query subset."""
    metric_fn, metric_k = _parse_metric(cfg["analysis"]["metric"])
    t = cfg["training"]
    seed = _seed_for(cfg, "training")

    def run_cell(sub_qset) -> float:
        model_cfg = _model_config(cfg, corpus, scheme)
        sources = _build_sources(cfg, corpus, scheme, qset=sub_qset)
        spec = _mixture_spec(cfg)
        params = init_model(model_cfg, seed=stable_hash(cfg["seed"], "init"))
        stream = sample_mixture(spec, sources, seed=stable_hash(seed, "mixture"))
        batches = batch_stream(
            stream,
            scheme,
            t["batch_size"],
            model_cfg.max_input_len,
            model_cfg.max_target_len,
        )
        settings = TrainSettings(
            steps=t["steps"],
            base_lr=t["base_lr"],
            warmup_steps=t["warmup_steps"],
            consistency=t["consistency"],
            kl_weight=t["kl_weight"],
            softmax_weight=t["softmax_weight"],
            log_every=t["log_every"],
            seed=seed,
        )
        params, _, _ = run_training(params, batches, settings)
        runs = _retrieve_runs(cfg, corpus, scheme, params)
        report = metric_fn(runs, corpus.qrels, metric_k)
        return report.aggregate

    return run_cell


def cmd_analyze(cfg: dict) -> None:
    corpus = _load_any_corpus(cfg)
    a = cfg["analysis"]
    if a["kind"] == "bucket":
        qset = load_queries(_queries_path(cfg))
        run = read_run(_run_path(cfg))
        metric_fn, metric_k = _parse_metric(a["metric"])
        per_query = metric_fn(run, corpus.qrels, metric_k).per_query
        dev_queries = corpus.queries_for_split(cfg["eval"]["split"])
        report = jaccard_bucket_analysis(
            qset, dev_queries, corpus.qrels, per_query, metric_name=a["metric"]
        )
        base = os.path.join(cfg["output_dir"], "bucket")
        write_atomic(base + ".csv", report.to_csv())
        write_atomic(base + ".json", report.to_json())
        _write_resolved(cfg)
        print(
            f"analyze bucket: overall {report.overall_mean:.4f}, "
            f"{report.excluded} excluded -> {base}.csv"
        )
    elif a["kind"] == "ablation":
        if "d2q" not in cfg["mixture"]:
            raise ConfigError("analysis.kind=ablation needs d2q in the mixture")
        scheme = _load_scheme_checked(cfg)
        qset = load_queries(_queries_path(cfg))
        scores = read_score_file(a["score_file"]) if a["score_file"] else None
        report = query_budget_ablation(
            qset,
            budgets=a["budgets"],
            strategies=a["strategies"],
            pipeline=_ablation_pipeline(cfg, corpus, scheme),
            scores=scores,
            seed=_seed_for(cfg, "analysis"),
        )
        path = os.path.join(cfg["output_dir"], "ablation.csv")
        write_atomic(path, report.to_csv())
        _write_resolved(cfg)
        for row in report.rows:
            print(f"{row.strategy} budget={row.budget}: {row.metric:.4f}")
        print(f"analyze ablation -> {path}")
    else:
        raise ConfigError(f"analysis.kind must be bucket or ablation, got {a['kind']!r}")


def cmd_cost(cfg: dict) -> None:
    c = cfg["cost"]
    kind = c["scheme_kind"] or cfg["scheme"]["kind"]
    size = c["corpus_size"]
    if not size:
        raise ConfigError("cost.corpus_size is required")
    m = cfg["model"]
    if kind == "atomic":
        target_vocab, shared, head = size, False, "atomic"
    elif c["target_vocab"]:
        target_vocab, shared = c["target_vocab"], c["target_vocab"] == c["input_vocab"]
        head = m["head_kind"] if m["head_kind"] != "atomic" else "standard"
    else:
        target_vocab, shared = c["input_vocab"], True
        head = m["head_kind"] if m["head_kind"] != "atomic" else "standard"
    model_cfg = ModelConfig(
        num_layers=m["num_layers"],
        d_model=m["d_model"],
        num_heads=m["num_heads"],
        d_ff=m["d_ff"],
        input_vocab_size=c["input_vocab"],
        target_vocab_size=target_vocab,
        max_input_len=max(m["max_input_len"], c["input_len"]),
        max_target_len=m["max_target_len"],
        head_kind=head,
        dropout_rate=m["dropout_rate"],
        pawa_layers=m["pawa_layers"],
        shared_vocab=shared,
    )
    report = cost_estimate(
        model_cfg,
        kind,
        size,
        identifier_depth=c["identifier_depth"],
        beam_width=c["beam_width"],
        input_len=c["input_len"],
    )
    write_atomic(os.path.join(cfg["output_dir"], "cost.json"), report.to_json())
    _write_resolved(cfg)
    print(report.to_text(), end="")


# ---------------------------------------------------------------------------
# entry point

COMMANDS = {
    "subset": cmd_subset,
    "build-ids": cmd_build_ids,
    "gen-queries": cmd_gen_queries,
    "train": cmd_train,
    "retrieve": cmd_retrieve,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "cost": cmd_cost,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="genir",
        description="Generative retrieval pipeline: corpus to identifiers to "
        "trained model to ranked results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON run config overlaying the defaults")
        p.add_argument(
            "--preset", choices=PRESETS, help="built-in config to start from"
        )
        p.add_argument(
            "--set",
            action="append",
            dest="sets",
            metavar="KEY=VALUE",
            help="dotted-path override, e.g. --set training.steps=500",
        )
        p.add_argument("--out", help="override output_dir")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(
            config_path=args.config,
            preset=args.preset,
            sets=args.sets,
            output_dir=args.out,
        )
        with lock_output(cfg["output_dir"]):
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (GenirError, OSError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
