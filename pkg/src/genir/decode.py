"""Decoding identifiers from a trained model.

Sequential schemes use beam search over identifier tokens, optionally
constrained by the scheme trie so every hypothesis is a valid identifier
prefix.  Scores are per-sequence log probabilities accumulated in float64;
ties break lexicographically on the token sequence, so rankings are total
and reproducible.  The atomic head ranks all documents with a single
decoder step.

With the beam at least as wide as the identifier set, nothing is ever
pruned, and constrained beam search returns exactly the exhaustive
teacher-forced ranking; the acceptance suite holds it to that oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from genir.constants import BOS_ID, EOS_ID, ID_OFFSET
from genir.docid import DocIdScheme
from genir.errors import ConfigError, DataError
from genir.model.net import ModelParams, _decoder_fwd, _head_fwd, encode
from genir.trie import END, Trie

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BeamConfig:
    beam_width: int = 40
    max_steps: int = 0  # 0: trie depth + 1, or max_target_len unconstrained
    constrained: bool = True
    brevity_penalty: float = 0.0

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ConfigError("beam_width must be >= 1")
        if self.brevity_penalty < 0:
            raise ConfigError("brevity_penalty must be >= 0")


@dataclass
class RankedList:
    query_id: str
    entries: list[tuple[str, float]]  # (doc_id, score), best first
    dropped: int = 0  # hypotheses that mapped to no identifier

    def doc_ids(self) -> list[str]:
        return [d for d, _ in self.entries]


def _log_softmax64(logits: np.ndarray) -> np.ndarray:
    z = logits.astype(np.float64)
    z = z - z.max(-1, keepdims=True)
    return z - np.log(np.exp(z).sum(-1, keepdims=True))


def _step_logprobs(params: ModelParams, enc_out, src, prefixes: list[tuple[int, ...]]):
    """Log-probabilities of the next token for each prefix (teacher-forced)."""
    n = len(prefixes)
    L = max(len(p) for p in prefixes) + 1
    tgt_in = np.full((n, L), 0, dtype=np.int64)
    tgt_in[:, 0] = BOS_ID
    for i, p in enumerate(prefixes):
        tgt_in[i, 1 : 1 + len(p)] = p
    enc_rep = np.broadcast_to(enc_out, (n,) + enc_out.shape[1:])
    src_rep = np.broadcast_to(src, (n,) + src.shape[1:])
    h, _ = _decoder_fwd(params, enc_rep, src_rep, tgt_in, None)
    logits, _ = _head_fwd(params, h, tgt_in, None)
    rows = np.arange(n)
    last = np.array([len(p) for p in prefixes])
    return _log_softmax64(logits[rows, last])


def _length_norm(logp: float, length: int, bp: float) -> float:
    if bp == 0.0:
        return logp
    return logp / (((5.0 + length) / 6.0) ** bp)


def beam_search(
    params: ModelParams,
    scheme: DocIdScheme,
    query_tokens,
    cfg: BeamConfig,
    trie: Trie | None = None,
    query_id: str = "",
) -> RankedList:
    """Top identifiers for one query under a sequential scheme.

    Constrained mode requires the scheme trie and only ever proposes valid
    continuations.  Unconstrained mode explores the raw token space; finished
    hypotheses that match no identifier are dropped when mapped back to
    documents, with the count reported on the result.
    """
    if not scheme.is_sequential:
        raise ConfigError("beam_search needs a sequential scheme; use atomic_rank")
    if cfg.constrained and trie is None:
        raise ConfigError("constrained decoding requires the scheme trie")
    query_tokens = list(query_tokens)
    if not query_tokens:
        raise DataError("cannot decode an empty query")
    src = np.asarray([query_tokens], dtype=np.int64)
    enc_out, _ = encode(params, src)

    vocab = params.config.target_vocab_size
    max_steps = cfg.max_steps
    if max_steps <= 0:
        max_steps = (trie.max_depth + 1) if trie is not None else params.config.max_target_len

    alive: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []
    for _ in range(max_steps):
        if not alive:
            break
        logprobs = _step_logprobs(params, enc_out, src, [t for _, t in alive])
        candidates: list[tuple[float, tuple[int, ...]]] = []
        for (logp, toks), lp in zip(alive, logprobs):
            if cfg.constrained:
                pure = tuple(t - ID_OFFSET for t in toks)
                allowed = [
                    EOS_ID if t == END else t + ID_OFFSET
                    for t in trie.valid_next(pure)
                ]
            else:
                allowed = [t for t in range(1, vocab) if t != BOS_ID]
            for t in allowed:
                candidates.append((logp + float(lp[t]), toks + (t,)))
        candidates.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for logp, toks in candidates:
            if toks[-1] == EOS_ID:
                finished.append(
                    (_length_norm(logp, len(toks), cfg.brevity_penalty), toks[:-1])
                )
            elif len(alive) < cfg.beam_width:
                alive.append((logp, toks))
        if cfg.brevity_penalty == 0.0 and len(finished) >= cfg.beam_width and alive:
            kept = sorted(finished, key=lambda c: (-c[0], c[1]))[: cfg.beam_width]
            if alive[0][0] <= kept[-1][0]:
                break

    finished.sort(key=lambda c: (-c[0], c[1]))
    rev = (
        None if trie is not None else {v: k for k, v in scheme.id_map.items()}
    )
    entries: list[tuple[str, float]] = []
    seen: set[str] = set()
    dropped = 0
    for score, toks in finished:
        pure = tuple(t - ID_OFFSET for t in toks)
        doc = trie.lookup(pure) if trie is not None else rev.get(pure)
        if doc is None:
            dropped += 1
            continue
        if doc in seen:
            continue
        seen.add(doc)
        entries.append((doc, score))
        if len(entries) >= cfg.beam_width:
            break
    if dropped:
        logger.warning(
            "query %s: dropped %d hypotheses with no matching identifier",
            query_id or "<anon>",
            dropped,
        )
    if not entries:
        logger.warning(
            "query %s: no hypothesis reached a terminal within %d steps",
            query_id or "<anon>",
            max_steps,
        )
    return RankedList(query_id=query_id, entries=entries, dropped=dropped)


def atomic_rank(
    params: ModelParams,
    scheme: DocIdScheme,
    query_tokens,
    k: int,
    query_id: str = "",
) -> RankedList:
    """Rank documents by the single-step atomic head; top k by log-probability."""
    if scheme.kind != "atomic":
        raise ConfigError("atomic_rank needs an atomic scheme")
    if k < 1:
        raise ConfigError("k must be >= 1")
    query_tokens = list(query_tokens)
    if not query_tokens:
        raise DataError("cannot decode an empty query")
    src = np.asarray([query_tokens], dtype=np.int64)
    enc_out, _ = encode(params, src)
    tgt_in = np.array([[BOS_ID]], dtype=np.int64)
    h, _ = _decoder_fwd(params, enc_out, src, tgt_in, None)
    logits, _ = _head_fwd(params, h, tgt_in, None)
    logp = _log_softmax64(logits[0, 0])
    order = np.lexsort((np.arange(logp.size), -logp))
    by_token = {tokens[0]: doc_id for doc_id, tokens in scheme.id_map.items()}
    entries = [(by_token[int(t)], float(logp[t])) for t in order[:k]]
    return RankedList(query_id=query_id, entries=entries)


# ---------------------------------------------------------------------------
# run files


def write_run(path: str, runs: list[RankedList]) -> None:
    """TSV: query_id, doc_id, 1-based rank, score."""
    with open(path, "w", encoding="utf-8") as fh:
        for run in runs:
            for rank, (doc_id, score) in enumerate(run.entries, start=1):
                fh.write(f"{run.query_id}\t{doc_id}\t{rank}\t{score:.10g}\n")


def read_run(path: str) -> dict[str, list[tuple[str, float]]]:
    """Per-query ranked entries; tolerates arbitrary line order."""
    rows: dict[str, dict[int, tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            qid, doc_id, rank_s, score_s = parts
            try:
                rank = int(rank_s)
                score = float(score_s)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad rank or score") from exc
            per = rows.setdefault(qid, {})
            if rank in per:
                raise DataError(f"{path}:{lineno}: duplicate rank {rank} for {qid!r}")
            per[rank] = (doc_id, score)
    out: dict[str, list[tuple[str, float]]] = {}
    for qid, per in rows.items():
        ranks = sorted(per)
        if ranks != list(range(1, len(ranks) + 1)):
            raise DataError(f"{path}: ranks for {qid!r} are not contiguous from 1")
        docs = [per[r][0] for r in ranks]
        if len(set(docs)) != len(docs):
            raise DataError(f"{path}: duplicate doc_id in ranking for {qid!r}")
        out[qid] = [per[r] for r in ranks]
    return out
