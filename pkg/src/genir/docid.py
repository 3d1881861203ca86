"""Document identifier schemes.

Four kinds:
  atomic      one fresh token per document; decoding is a single step
  naive       the doc_id string spelled out character by character
  semantic    hierarchical k-means path plus position within the leaf
  semantic2d  a sequential scheme re-tokenized as (position, value) pairs,
              so the token at step i can only be one of the step-i values

Identifier tokens live in a "pure" space starting at 0; the model layer adds
special tokens on top (see genir.constants).  vocab_size below always counts
the pure space only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from genir.corpus import Corpus
from genir.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SEQUENTIAL_KINDS = ("naive", "semantic", "semantic2d")
ALL_KINDS = ("atomic",) + SEQUENTIAL_KINDS


@dataclass
class DocIdScheme:
    """Assignment of identifier token sequences to documents.

    id_map values are tuples of pure token ids, each < vocab_size.  Atomic
    schemes map every document to a distinct length-1 sequence.
    """

    kind: str
    id_map: dict[str, tuple[int, ...]]
    vocab_size: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown scheme kind {self.kind!r}")
        seen: dict[tuple[int, ...], str] = {}
        for doc_id, tokens in self.id_map.items():
            if not tokens:
                raise DataError(f"empty identifier for doc {doc_id!r}")
            if self.kind == "atomic" and len(tokens) != 1:
                raise DataError(f"atomic identifier must have length 1: {doc_id!r}")
            for t in tokens:
                if not 0 <= t < self.vocab_size:
                    raise DataError(
                        f"token {t} out of range 0..{self.vocab_size - 1} for doc {doc_id!r}"
                    )
            if tokens in seen:
                raise DataError(
                    f"identifier collision between {seen[tokens]!r} and {doc_id!r}"
                )
            seen[tokens] = doc_id

    @property
    def is_sequential(self) -> bool:
        return self.kind != "atomic"

    def max_depth(self) -> int:
        return max(len(t) for t in self.id_map.values())


def assign_atomic_ids(corpus: Corpus) -> DocIdScheme:
    """One dedicated output slot per document, in sorted doc_id order."""
    id_map = {doc_id: (i,) for i, doc_id in enumerate(corpus.docs)}
    return DocIdScheme(
        kind="atomic",
        id_map=id_map,
        vocab_size=len(corpus.docs),
        meta={"corpus_size": len(corpus.docs)},
    )


def assign_naive_ids(corpus: Corpus) -> DocIdScheme:
    """Spell out each doc_id string one character per decode step."""
    alphabet = sorted({ch for doc_id in corpus.docs for ch in doc_id})
    index = {ch: i for i, ch in enumerate(alphabet)}
    id_map = {
        doc_id: tuple(index[ch] for ch in doc_id) for doc_id in corpus.docs
    }
    return DocIdScheme(
        kind="naive",
        id_map=id_map,
        vocab_size=len(alphabet),
        meta={"alphabet": "".join(alphabet)},
    )


# ---------------------------------------------------------------------------
# corpus embeddings (input to the semantic tree)


@dataclass
class CorpusEmbedding:
    doc_ids: list[str]
    matrix: np.ndarray  # (n, dim) float32


def _hash_bucket(term: str, seed: int, dim: int) -> tuple[int, float]:
    h = hashlib.blake2b(f"{seed}:{term}".encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(h, "little")
    return value % dim, 1.0 if (value >> 63) & 1 else -1.0


def embed_corpus(corpus: Corpus, dim: int = 256, seed: int = 0) -> CorpusEmbedding:
    """Hashed tf-idf document vectors, L2-normalized.

    Deterministic given (corpus, dim, seed); no fitted vocabulary to store.
    Documents with no terms get a zero vector and a warning.
    """
    if dim <= 0:
        raise ConfigError(f"embedding dim must be positive, got {dim}")
    doc_ids = list(corpus.docs)
    n = len(doc_ids)
    df: dict[str, int] = {}
    doc_terms: list[dict[str, int]] = []
    for doc_id in doc_ids:
        counts: dict[str, int] = {}
        for term in corpus.docs[doc_id].text.split():
            counts[term] = counts.get(term, 0) + 1
        doc_terms.append(counts)
        for term in counts:
            df[term] = df.get(term, 0) + 1
    idf = {t: np.log((1.0 + n) / (1.0 + c)) + 1.0 for t, c in df.items()}
    matrix = np.zeros((n, dim), dtype=np.float32)
    buckets = {t: _hash_bucket(t, seed, dim) for t in df}
    for row, counts in enumerate(doc_terms):
        for term, tf in counts.items():
            bucket, sign = buckets[term]
            matrix[row, bucket] += sign * tf * idf[term]
        norm = float(np.linalg.norm(matrix[row]))
        if norm > 0:
            matrix[row] /= norm
        else:
            logger.warning("document %r has no terms; zero embedding", doc_ids[row])
    return CorpusEmbedding(doc_ids=doc_ids, matrix=matrix)


def save_embedding(emb: CorpusEmbedding, path: str) -> None:
    """Binary layout: int32 LE count, int32 LE dim, then row-major float32."""
    n, dim = emb.matrix.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", n, dim))
        fh.write(np.ascontiguousarray(emb.matrix, dtype="<f4").tobytes())
    with open(path + ".ids", "w", encoding="utf-8") as fh:
        for doc_id in emb.doc_ids:
            fh.write(doc_id + "\n")


def load_embedding(path: str) -> CorpusEmbedding:
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise DataError(f"{path}: truncated header")
        n, dim = struct.unpack("<ii", header)
        if n < 0 or dim <= 0:
            raise DataError(f"{path}: bad header ({n}, {dim})")
        payload = fh.read()
    expected = n * dim * 4
    if len(payload) != expected:
        raise DataError(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    matrix = np.frombuffer(payload, dtype="<f4").reshape(n, dim).astype(np.float32)
    with open(path + ".ids", encoding="utf-8") as fh:
        doc_ids = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
    if len(doc_ids) != n:
        raise DataError(f"{path}.ids: {len(doc_ids)} ids for {n} rows")
    return CorpusEmbedding(doc_ids=doc_ids, matrix=matrix)


# ---------------------------------------------------------------------------
# hierarchical k-means


def _node_seed(seed: int, path: tuple[int, ...]) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(str(seed).encode())
    for p in path:
        h.update(struct.pack("<i", p))
    return int.from_bytes(h.digest(), "little")


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _repair_empty(x, labels, centers, k):
    """Give every empty cluster the farthest point of the current largest one."""
    sizes = np.bincount(labels, minlength=k)
    for j in range(k):
        if sizes[j] == 0:
            donor = int(np.argmax(sizes))
            members = np.flatnonzero(labels == donor)
            far = members[
                int(np.argmax(((x[members] - centers[donor]) ** 2).sum(axis=1)))
            ]
            labels[far] = j
            sizes[donor] -= 1
            sizes[j] += 1
            centers[j] = x[far]
            centers[donor] = x[labels == donor].mean(axis=0)
    return labels, centers


def _lloyd(x, centers, max_iters, tol):
    k = centers.shape[0]
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(max_iters):
        # ties go to the lowest cluster index (argmin behavior)
        dists = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        sizes = np.bincount(labels, minlength=k)
        for j in range(k):
            if sizes[j] > 0:
                new_centers[j] = x[labels == j].mean(axis=0)
        labels, new_centers = _repair_empty(x, labels, new_centers, k)
        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        scale = float(np.sqrt((new_centers**2).sum(axis=1)).max())
        centers = new_centers
        if shift <= tol * max(scale, 1.0):
            break
    sse = float(((x - centers[labels]) ** 2).sum())
    return labels, centers, sse


def _exact_two_means(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
    """Globally optimal 2-means by enumerating every non-trivial split."""
    n = x.shape[0]
    best_sse = np.inf
    best_mask = 1
    for mask in range(1, 2**n - 1):
        sse = 0.0
        for j in (0, 1):
            idx = [i for i in range(n) if ((mask >> i) & 1) == j]
            pts = x[idx]
            sse += float(((pts - pts.mean(axis=0)) ** 2).sum())
        if sse < best_sse - 1e-12:
            best_sse = sse
            best_mask = mask
    labels = np.array([(best_mask >> i) & 1 for i in range(n)], dtype=np.int64)
    centers = np.stack([x[labels == j].mean(axis=0) for j in (0, 1)])
    return labels, centers, best_sse


def kmeans(
    x: np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iters: int = 50,
    tol: float = 1e-4,
    n_init: int = 4,
) -> tuple[np.ndarray, np.ndarray, float]:
    """k-means with k-means++ seeding; best of n_init restarts by SSE.

    Two-way splits of at most 12 points are solved exactly by enumeration:
    Lloyd's algorithm stalls in local optima often enough at that size to
    matter, and the exact answer is cheap there.
    """
    if k < 1 or k > x.shape[0]:
        raise ConfigError(f"k={k} invalid for {x.shape[0]} points")
    x = np.asarray(x, dtype=np.float64)
    if k == 1:
        center = x.mean(axis=0, keepdims=True)
        return np.zeros(x.shape[0], dtype=np.int64), center, float(
            ((x - center) ** 2).sum()
        )
    if k == 2 and x.shape[0] <= 12:
        return _exact_two_means(x)
    best = None
    for _ in range(n_init):
        centers = _kmeans_pp_init(x, k, rng)
        labels, centers, sse = _lloyd(x, centers, max_iters, tol)
        if best is None or sse < best[2] - 1e-12:
            best = (labels, centers, sse)
    return best


@dataclass
class TreeNode:
    path: tuple[int, ...]
    children: list["TreeNode"] = field(default_factory=list)
    members: list[str] = field(default_factory=list)  # doc_ids, leaves only

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class SemanticTree:
    root: TreeNode
    k: int
    c: int
    seed: int
    num_docs: int

    def leaves(self) -> list[TreeNode]:
        out: list[TreeNode] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out


def build_semantic_tree(
    emb: CorpusEmbedding,
    k: int,
    c: int,
    seed: int,
    sample_cap: int = 100_000,
    sample_threshold: int = 1_000_000,
) -> SemanticTree:
    """Recursive k-means clustering until every leaf holds at most c docs.

    Nodes larger than sample_threshold fit centroids on a sample_cap-point
    subsample, then assign all members to the nearest fitted centroid.  Every
    split is seeded from (seed, node path), so rebuilds are identical.
    """
    if k < 2:
        raise ConfigError(f"branching factor k must be >= 2, got {k}")
    if c < 1:
        raise ConfigError(f"leaf capacity c must be >= 1, got {c}")
    x = np.asarray(emb.matrix, dtype=np.float64)
    doc_ids = emb.doc_ids

    def split(indices: np.ndarray, path: tuple[int, ...]) -> TreeNode:
        if indices.size <= c:
            members = sorted(doc_ids[i] for i in indices)
            return TreeNode(path=path, members=members)
        rng = np.random.default_rng(_node_seed(seed, path))
        k_eff = min(k, int(indices.size))
        if indices.size > sample_threshold:
            sample = rng.choice(indices, size=min(sample_cap, indices.size), replace=False)
            _, centers, _ = kmeans(x[sample], k_eff, rng)
            dists = ((x[indices][:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels = np.argmin(dists, axis=1)
            labels, _ = _repair_empty(x[indices], labels, centers, k_eff)
        else:
            labels, _, _ = kmeans(x[indices], k_eff, rng)
        # every cluster is non-empty after repair, so children shrink strictly
        node = TreeNode(path=path)
        for j in range(k_eff):
            child_idx = indices[labels == j]
            node.children.append(split(child_idx, path + (j,)))
        return node

    root = split(np.arange(len(doc_ids)), ())
    return SemanticTree(root=root, k=k, c=c, seed=seed, num_docs=len(doc_ids))


def semantic_ids_from_tree(tree: SemanticTree) -> DocIdScheme:
    """Identifier = cluster path + position within the leaf (doc_id order)."""
    id_map: dict[str, tuple[int, ...]] = {}
    for leaf in tree.leaves():
        if len(leaf.members) > tree.c:
            raise DataError(
                f"leaf {leaf.path} holds {len(leaf.members)} > c={tree.c} docs"
            )
        for pos, doc_id in enumerate(leaf.members):
            id_map[doc_id] = leaf.path + (pos,)
    if len(id_map) != tree.num_docs:
        raise DataError(
            f"tree covers {len(id_map)} of {tree.num_docs} documents"
        )
    id_map = {k: id_map[k] for k in sorted(id_map)}
    return DocIdScheme(
        kind="semantic",
        id_map=id_map,
        vocab_size=max(tree.k, tree.c),
        meta={"k": tree.k, "c": tree.c, "seed": tree.seed},
    )


def to_2d_tokens(tokens: tuple[int, ...], width: int, max_depth: int) -> tuple[int, ...]:
    """Re-token a sequence as position/value composites: (i, v) -> i*width + v."""
    if len(tokens) > max_depth:
        raise DataError(f"sequence depth {len(tokens)} exceeds max_depth {max_depth}")
    out = []
    for i, v in enumerate(tokens):
        if not 0 <= v < width:
            raise DataError(f"value {v} out of range for width {width}")
        out.append(i * width + v)
    return tuple(out)


def to_2d_scheme(scheme: DocIdScheme) -> DocIdScheme:
    """Lift a sequential scheme into position-aware composite tokens.

    The step-i token can only ever be one of the width step-i composites, so
    the same surface value at different depths never shares a model token.
    """
    if not scheme.is_sequential or scheme.kind == "semantic2d":
        raise ConfigError(f"cannot lift scheme of kind {scheme.kind!r} to 2d")
    width = scheme.vocab_size
    depth = scheme.max_depth()
    id_map = {
        doc_id: to_2d_tokens(tokens, width, depth)
        for doc_id, tokens in scheme.id_map.items()
    }
    return DocIdScheme(
        kind="semantic2d",
        id_map=id_map,
        vocab_size=width * depth,
        meta={"base_kind": scheme.kind, "width": width, "depth": depth, **scheme.meta},
    )


def format_identifier(scheme: DocIdScheme, doc_id: str) -> str:
    """Human-readable identifier rendering (logs and reports only)."""
    tokens = scheme.id_map[doc_id]
    if scheme.kind == "naive":
        alphabet = scheme.meta.get("alphabet", "")
        return "".join(alphabet[t] for t in tokens)
    if scheme.kind == "semantic2d":
        width = scheme.meta["width"]
        return " ".join(f"[{t // width},{t % width}]" for t in tokens)
    return "-".join(str(t) for t in tokens)


# ---------------------------------------------------------------------------
# persistence


def save_scheme(scheme: DocIdScheme, path: str) -> None:
    """TSV: doc_id <TAB> space-separated tokens; meta in a JSON sidecar."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, tokens in scheme.id_map.items():
            fh.write(doc_id + "\t" + " ".join(str(t) for t in tokens) + "\n")
    sidecar = {
        "kind": scheme.kind,
        "vocab_size": scheme.vocab_size,
        "meta": scheme.meta,
    }
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_scheme(path: str) -> DocIdScheme:
    with open(path + ".meta.json", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    id_map: dict[str, tuple[int, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected doc_id<TAB>tokens")
            doc_id, tok_str = parts
            if doc_id in id_map:
                raise DataError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
            try:
                id_map[doc_id] = tuple(int(t) for t in tok_str.split())
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad token list {tok_str!r}") from exc
    return DocIdScheme(
        kind=sidecar["kind"],
        id_map=id_map,
        vocab_size=sidecar["vocab_size"],
        meta=sidecar.get("meta", {}),
    )


def scheme_file_exists(path: str) -> bool:
    return os.path.exists(path) and os.path.exists(path + ".meta.json")
