"""Random, Fresh and Popular baselines for the replay protocol."""

from __future__ import annotations

import random
from collections import deque
from typing import Sequence

from .base import RankedList, Recommender
from .data import ItemCatalog


class RecentWindow:
    """The last ``size`` viewed items with their in-window counts."""

    def __init__(self, size: int = 100):
        if size < 1:
            raise ValueError("window size must be positive")
        self.size = size
        self.views: deque[int] = deque()
        self.counts: dict[int, int] = {}
        self.last_seen: dict[int, int] = {}
        self._clock = 0

    def push(self, item: int) -> None:
        self.views.append(item)
        self.counts[item] = self.counts.get(item, 0) + 1
        self._clock += 1
        self.last_seen[item] = self._clock
        if len(self.views) > self.size:
            old = self.views.popleft()
            c = self.counts[old] - 1
            if c:
                self.counts[old] = c
            else:
                del self.counts[old]
                del self.last_seen[old]

    def __len__(self) -> int:
        return len(self.views)


def random_recommend(window: RecentWindow, k: int, rng: random.Random) -> RankedList:
    pool = sorted(window.counts)
    picks = rng.sample(pool, min(k, len(pool)))
    return [(x, float(len(picks) - i)) for i, x in enumerate(picks)]


def fresh_recommend(catalog: ItemCatalog, k: int) -> RankedList:
    return [(i, float(catalog.first_seen_order(i))) for i in catalog.newest(k)]


def popular_recommend(window: RecentWindow, k: int) -> RankedList:
    """Most viewed in the window; ties go to the more recent view, then the smaller id."""
    order = sorted(window.counts.items(), key=lambda kv: (-kv[1], -window.last_seen[kv[0]], kv[0]))
    return [(x, float(c)) for x, c in order[:k]]


class _WindowModel(Recommender):
    def __init__(self, window: int = 100):
        self.window = RecentWindow(window)

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        self.window.push(item)


class RandomRec(_WindowModel):
    name = "random"

    def __init__(self, window: int = 100, seed: int = 0):
        super().__init__(window)
        self.rng = random.Random(seed)

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        return random_recommend(self.window, k, self.rng)


class PopularRec(_WindowModel):
    name = "popular"

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        return popular_recommend(self.window, k)


class FreshRec(Recommender):
    """Newest items by first appearance in the stream seen so far."""

    name = "fresh"

    def __init__(self) -> None:
        self.catalog = ItemCatalog()

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        self.catalog.add(item)

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        return [(self.catalog.key_of(i), s) for i, s in fresh_recommend(self.catalog, k)]
