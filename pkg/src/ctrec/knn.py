"""Nearest-neighbour baselines: Item-KNN, SKNN and sequence-aware SKNN."""

from __future__ import annotations

import heapq
import math
from collections import deque
from typing import Callable, Sequence

from .base import RankedList, Recommender, top_k


class SessionStore:
    """FIFO of the ``capacity`` most recent sessions with an item -> session index."""

    def __init__(self, capacity: int = 1000):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.ring: deque[tuple[int, tuple[int, ...], frozenset[int]]] = deque()
        self.index: dict[int, set[int]] = {}
        self.sessions: dict[int, frozenset[int]] = {}
        self._next_key = 0

    def __len__(self) -> int:
        return len(self.ring)

    def insert(self, items: Sequence[int]) -> int:
        if not items:
            raise ValueError("cannot store an empty session")
        key = self._next_key
        self._next_key += 1
        itemset = frozenset(items)
        self.ring.append((key, tuple(items), itemset))
        self.sessions[key] = itemset
        for x in itemset:
            self.index.setdefault(x, set()).add(key)
        while len(self.ring) > self.capacity:
            old, _, old_set = self.ring.popleft()
            del self.sessions[old]
            for x in old_set:
                keys = self.index[x]
                keys.discard(old)
                if not keys:
                    del self.index[x]
        return key

    def candidates(self, items: Sequence[int]) -> set[int]:
        out: set[int] = set()
        for x in set(items):
            keys = self.index.get(x)
            if keys:
                out |= keys
        return out


def cosine(a: frozenset[int] | set[int], b: frozenset[int] | set[int]) -> float:
    """Cosine of two binary vectors given as item sets."""
    if not a or not b:
        return 0.0
    return len(a & b) / math.sqrt(len(a) * len(b))


def _neighbours(store: SessionStore, current: Sequence[int], k_neighbors: int) -> list[tuple[float, int]]:
    cur = set(current)
    sims = []
    for key in store.candidates(current):
        sims.append((cosine(cur, store.sessions[key]), key))
    # most similar first; equal similarity prefers the more recent session
    return heapq.nlargest(k_neighbors, sims)


def _accumulate(store: SessionStore, neigh: list[tuple[float, int]],
                weight: Callable[[frozenset[int]], float] | None) -> dict[int, float]:
    parts: dict[int, list[float]] = {}
    for sim, key in neigh:
        itemset = store.sessions[key]
        contrib = sim if weight is None else sim * weight(itemset)
        for x in itemset:
            parts.setdefault(x, []).append(contrib)
    # fsum makes the total independent of neighbour order
    return {x: math.fsum(v) for x, v in parts.items()}


def sknn_score(store: SessionStore, current: Sequence[int], k_neighbors: int = 500) -> dict[int, float]:
    """Sum of neighbour-session similarities over the sessions holding each item."""
    if not current:
        raise ValueError("current session is empty")
    return _accumulate(store, _neighbours(store, current, k_neighbors), None)


def position_weight(current: Sequence[int]) -> Callable[[frozenset[int]], float]:
    """Weight = 1-based position of the latest shared item / session length."""
    last_pos = {x: i + 1 for i, x in enumerate(current)}
    n = len(current)

    def weight(itemset: frozenset[int]) -> float:
        shared = [last_pos[x] for x in itemset if x in last_pos]
        return max(shared) / n if shared else 0.0

    return weight


def ssknn_score(store: SessionStore, current: Sequence[int], k_neighbors: int = 100,
                weight: Callable[[frozenset[int]], float] | None = None) -> dict[int, float]:
    if not current:
        raise ValueError("current session is empty")
    if weight is None:
        weight = position_weight(current)
    return _accumulate(store, _neighbours(store, current, k_neighbors), weight)


class CooccurrenceMatrix:
    """Symmetric session co-occurrence counts; the diagonal is the session frequency."""

    def __init__(self) -> None:
        self.pairs: dict[int, dict[int, int]] = {}
        self.freq: dict[int, int] = {}

    def add_session(self, items: Sequence[int]) -> None:
        seen: list[int] = []
        for x in items:
            self.add_to_session(seen, x)

    def add_to_session(self, seen: list[int], x: int) -> None:
        """Account for ``x`` joining a session whose distinct items so far are ``seen``."""
        if x in seen:
            return
        self.freq[x] = self.freq.get(x, 0) + 1
        row = self.pairs.setdefault(x, {})
        for y in seen:
            row[y] = row.get(y, 0) + 1
            other = self.pairs[y]
            other[x] = other.get(x, 0) + 1
        seen.append(x)

    def cooc(self, a: int, b: int) -> int:
        if a == b:
            return self.freq.get(a, 0)
        return self.pairs.get(a, {}).get(b, 0)

    def similarity(self, a: int, b: int) -> float:
        c = self.cooc(a, b)
        if not c:
            return 0.0
        return c / math.sqrt(self.freq[a] * self.freq[b])


def itemknn_recommend(m: CooccurrenceMatrix, last_item: int, k: int) -> RankedList:
    row = m.pairs.get(last_item)
    if not row:
        return []
    fa = m.freq[last_item]
    scores = {b: c / math.sqrt(fa * m.freq[b]) for b, c in row.items() if b != last_item}
    return top_k(scores, k)


class ItemKNN(Recommender):
    name = "itemknn"

    def __init__(self) -> None:
        self.matrix = CooccurrenceMatrix()
        self._open: dict[str, list[int]] = {}

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        self.matrix.add_to_session(self._open.setdefault(session_id, []), item)

    def end_session(self, session_id: str, items: Sequence[int]) -> None:
        self._open.pop(session_id, None)

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        if not context:
            return []
        return itemknn_recommend(self.matrix, context[-1], k)


class SKNN(Recommender):
    """Session KNN; sessions join the store only once they end."""

    name = "sknn"

    def __init__(self, k_neighbors: int = 500, capacity: int = 1000, exclude_current: bool = False):
        self.k_neighbors = k_neighbors
        self.store = SessionStore(capacity)
        self.exclude_current = exclude_current

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        pass

    def end_session(self, session_id: str, items: Sequence[int]) -> None:
        if items:
            self.store.insert(items)

    def score(self, context: Sequence[int]) -> dict[int, float]:
        return sknn_score(self.store, context, self.k_neighbors)

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        if not context:
            return []
        scores = self.score(context)
        if self.exclude_current:
            for x in context:
                scores.pop(x, None)
        return top_k(scores, k)


class SSKNN(SKNN):
    name = "ssknn"

    def __init__(self, k_neighbors: int = 100, capacity: int = 500, exclude_current: bool = False):
        super().__init__(k_neighbors, capacity, exclude_current)

    def score(self, context: Sequence[int]) -> dict[int, float]:
        return ssknn_score(self.store, context, self.k_neighbors)
