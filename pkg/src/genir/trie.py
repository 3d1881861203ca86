"""Prefix tree over identifier token sequences.

Drives constrained decoding: at any prefix, valid_next() returns exactly the
tokens that extend it toward some stored identifier, plus END when an
identifier terminates here.  Identifiers may be prefixes of one another (the
decoder's end-of-sequence step disambiguates), so termination is modeled as
one shared sentinel rather than per-node flags in the count.
"""

from __future__ import annotations

from genir.docid import DocIdScheme
from genir.errors import ConfigError, DataError

END = -1


class Trie:
    def __init__(self) -> None:
        self._children: list[dict[int, int]] = [{}]
        self._doc_at: dict[int, str] = {}
        self.max_depth = 0

    @property
    def node_count(self) -> int:
        # interior/leaf prefix nodes plus the single shared END sentinel
        return len(self._children) + 1

    @property
    def size(self) -> int:
        return len(self._doc_at)

    def insert(self, tokens: tuple[int, ...], doc_id: str) -> None:
        if not tokens:
            raise DataError(f"empty identifier for {doc_id!r}")
        node = 0
        for t in tokens:
            nxt = self._children[node].get(t)
            if nxt is None:
                self._children.append({})
                nxt = len(self._children) - 1
                self._children[node][t] = nxt
            node = nxt
        if node in self._doc_at:
            raise DataError(
                f"duplicate identifier {tokens}: {self._doc_at[node]!r} vs {doc_id!r}"
            )
        self._doc_at[node] = doc_id
        self.max_depth = max(self.max_depth, len(tokens))

    def _walk(self, prefix: tuple[int, ...]) -> int:
        node = 0
        for t in prefix:
            nxt = self._children[node].get(t)
            if nxt is None:
                raise DataError(f"prefix {prefix} not present in trie")
            node = nxt
        return node

    def valid_next(self, prefix: tuple[int, ...]) -> frozenset[int]:
        """Continuations of prefix; includes END when an identifier ends here."""
        node = self._walk(prefix)
        out = set(self._children[node])
        if node in self._doc_at:
            out.add(END)
        return frozenset(out)

    def lookup(self, tokens: tuple[int, ...]) -> str | None:
        """doc_id whose identifier is exactly tokens, or None."""
        node = 0
        for t in tokens:
            nxt = self._children[node].get(t)
            if nxt is None:
                return None
            node = nxt
        return self._doc_at.get(node)


def build_trie(scheme: DocIdScheme) -> Trie:
    if not scheme.is_sequential:
        raise ConfigError("atomic identifiers decode in one step; no trie applies")
    trie = Trie()
    for doc_id, tokens in scheme.id_map.items():
        trie.insert(tokens, doc_id)
    return trie
