"""Byte-level BPE tokenizer.

Text is lowercased upstream; here every word is prefixed with a space byte so
word boundaries survive merging (the GPT-2 convention, applied uniformly to
the first word as well).  The base alphabet is all 256 byte values, so any
string is encodable and there is no unknown token.  Id 0 is reserved for
padding, bytes sit at 1..256, and merge products follow in rank order.

Training and encoding are fully deterministic: merge selection breaks count
ties by the numerically smallest pair.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

from genir.constants import TEXT_PAD_ID
from genir.errors import DataError

_BYTE_BASE = 1  # byte b -> id 1 + b
_FIRST_MERGE_ID = 257
_SPACE = _BYTE_BASE + 0x20


def _word_to_ids(word: str) -> tuple[int, ...]:
    return tuple(_BYTE_BASE + b for b in (" " + word).encode("utf-8"))


@dataclass
class ByteBpeTokenizer:
    """Reversible subword tokenizer over raw bytes.

    merges: ordered list of (left_id, right_id) pairs; merge at rank r
    produces token id 257 + r.
    """

    merges: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._ranks = {pair: i for i, pair in enumerate(self.merges)}
        self._token_bytes: list[bytes] = [b""]
        self._token_bytes += [bytes([b]) for b in range(256)]
        for left, right in self.merges:
            self._token_bytes.append(self._token_bytes[left] + self._token_bytes[right])
        self._word_cache: dict[str, tuple[int, ...]] = {}

    @property
    def vocab_size(self) -> int:
        return _FIRST_MERGE_ID + len(self.merges)

    def encode_word(self, word: str) -> tuple[int, ...]:
        cached = self._word_cache.get(word)
        if cached is not None:
            return cached
        seq = list(_word_to_ids(word))
        while len(seq) > 1:
            best_rank = None
            best_pos = -1
            for i in range(len(seq) - 1):
                rank = self._ranks.get((seq[i], seq[i + 1]))
                if rank is not None and (best_rank is None or rank < best_rank):
                    best_rank = rank
                    best_pos = i
            if best_rank is None:
                break
            left, right = seq[best_pos], seq[best_pos + 1]
            merged_id = _FIRST_MERGE_ID + best_rank
            out = []
            i = 0
            while i < len(seq):
                if i < len(seq) - 1 and seq[i] == left and seq[i + 1] == right:
                    out.append(merged_id)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seq = out
        ids = tuple(seq)
        self._word_cache[word] = ids
        return ids

    def encode(self, text: str) -> list[int]:
        ids: list[int] = []
        for word in text.split():
            ids.extend(self.encode_word(word))
        return ids

    def decode(self, ids: list[int] | tuple[int, ...]) -> str:
        buf = b"".join(
            self._token_bytes[i] for i in ids if i != TEXT_PAD_ID
        )
        return buf.decode("utf-8", errors="replace").lstrip(" ")

    def save(self, path: str) -> None:
        payload = {"version": 1, "merges": [list(p) for p in self.merges]}
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ByteBpeTokenizer":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        merges = [tuple(p) for p in payload["merges"]]
        for pair in merges:
            if len(pair) != 2:
                raise DataError(f"malformed merge entry in {path}: {pair!r}")
        return cls(merges=merges)


def train_tokenizer(
    texts,
    vocab_size: int = 2048,
    min_pair_freq: int = 2,
) -> ByteBpeTokenizer:
    """Learn BPE merges from an iterable of (already normalized) texts.

    vocab_size counts pad + 256 byte tokens + merges, so it must be at least
    257.  Merging stops early once no adjacent pair reaches min_pair_freq.
    """
    if vocab_size < _FIRST_MERGE_ID:
        raise DataError(f"vocab_size must be >= {_FIRST_MERGE_ID}, got {vocab_size}")
    word_freq: Counter[str] = Counter()
    for text in texts:
        word_freq.update(text.split())

    seqs: dict[str, list[int]] = {w: list(_word_to_ids(w)) for w in word_freq}
    pair_counts: Counter[tuple[int, int]] = Counter()
    pair_words: dict[tuple[int, int], set[str]] = {}
    for word, seq in seqs.items():
        freq = word_freq[word]
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freq
            pair_words.setdefault(pair, set()).add(word)

    merges: list[tuple[int, int]] = []
    num_merges = vocab_size - _FIRST_MERGE_ID
    for rank in range(num_merges):
        if not pair_counts:
            break
        best, best_count = max(
            pair_counts.items(), key=lambda kv: (kv[1], -kv[0][0], -kv[0][1])
        )
        if best_count < min_pair_freq:
            break
        merged_id = _FIRST_MERGE_ID + rank
        merges.append(best)
        for word in sorted(pair_words.get(best, ())):
            seq = seqs[word]
            freq = word_freq[word]
            for pair in zip(seq, seq[1:]):
                pair_counts[pair] -= freq
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
                group = pair_words.get(pair)
                if group is not None:
                    group.discard(word)
                    if not group:
                        del pair_words[pair]
            new_seq = []
            i = 0
            while i < len(seq):
                if i < len(seq) - 1 and (seq[i], seq[i + 1]) == best:
                    new_seq.append(merged_id)
                    i += 2
                else:
                    new_seq.append(seq[i])
                    i += 1
            seqs[word] = new_seq
            for pair in zip(new_seq, new_seq[1:]):
                pair_counts[pair] += freq
                pair_words.setdefault(pair, set()).add(word)
    return ByteBpeTokenizer(merges=merges)
