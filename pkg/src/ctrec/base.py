"""Interface shared by every recommender."""

from __future__ import annotations

import heapq
from typing import Iterable, Sequence

# (item, score) pairs, best first; equal scores ordered by ascending item id
RankedList = list[tuple[int, float]]


def top_k(scores: dict[int, float], k: int) -> RankedList:
    best = heapq.nsmallest(k, ((-s, x) for x, s in scores.items()))
    return [(x, -neg) for neg, x in best]


class Recommender:
    """Next-item recommender driven one event at a time.

    ``update`` sees every event, including the first of each session (with an
    empty context). ``end_session`` is called once a session's last event
    has been consumed.
    """

    name = "base"

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        raise NotImplementedError

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        raise NotImplementedError

    def end_session(self, session_id: str, items: Sequence[int]) -> None:
        pass

    def fit(self, sessions: Iterable) -> None:
        for s in sessions:
            items = s.items
            for p, item in enumerate(items):
                self.update(s.id, items[:p], item)
            self.end_session(s.id, items)
