from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from ctrec.knn import (
    SKNN,
    SSKNN,
    CooccurrenceMatrix,
    ItemKNN,
    SessionStore,
    cosine,
    itemknn_recommend,
    position_weight,
    sknn_score,
    ssknn_score,
)

from oracles import item_cosine_table, sknn_bruteforce

A, B, C, D = range(4)


def store_of(sessions, capacity=1000):
    s = SessionStore(capacity)
    for items in sessions:
        s.insert(items)
    return s


def test_store_is_fifo():
    s = store_of([[A], [B], [C]], capacity=2)
    assert [items for _, items, _ in s.ring] == [(B,), (C,)]
    assert s.candidates([A]) == set()


def test_store_index_matches_rebuild_after_eviction():
    rng = random.Random(2)
    sessions = [[rng.randrange(15) for _ in range(rng.randint(1, 5))] for _ in range(300)]
    s = store_of(sessions, capacity=40)
    rebuilt = store_of(sessions[-40:], capacity=40)

    def relative(store):
        first = store.ring[0][0]
        return {x: {k - first for k in keys} for x, keys in store.index.items()}

    assert relative(s) == relative(rebuilt)
    assert len(s) == 40


def test_cosine_values():
    assert cosine({A}, {A, B}) == pytest.approx(1 / math.sqrt(2))
    assert cosine({A, B}, {A, B}) == pytest.approx(1.0)
    assert cosine({A}, {B}) == 0.0
    assert cosine(set(), {A}) == 0.0


def test_sknn_hand_example():
    s = store_of([[A, B], [A, B, C], [D]])
    scores = sknn_score(s, [A])
    assert scores[B] == pytest.approx(1 / math.sqrt(2) + 1 / math.sqrt(3))
    assert scores[C] == pytest.approx(1 / math.sqrt(3))
    assert D not in scores


def test_sknn_neighbour_cap():
    s = store_of([[A, B], [A, B, C]])
    scores = sknn_score(s, [A], k_neighbors=1)
    assert scores == pytest.approx({A: 1 / math.sqrt(2), B: 1 / math.sqrt(2)})


def test_ssknn_position_weight():
    current = [A, C, D, B]
    w = position_weight(current)
    assert w(frozenset({A, B})) == pytest.approx(1.0)
    assert w(frozenset({A})) == pytest.approx(0.25)
    assert w(frozenset({B})) == pytest.approx(1.0)
    # the neighbour shares only the first of four items
    s2 = store_of([[A, C]])
    plain = sknn_score(s2, [A, B, D, B])
    seq = ssknn_score(s2, [A, B, D, B])
    assert seq[C] == pytest.approx(0.25 * plain[C])


def test_ssknn_unit_weights_are_sknn():
    rng = random.Random(9)
    sessions = [[rng.randrange(20) for _ in range(rng.randint(1, 6))] for _ in range(100)]
    s = store_of(sessions)
    for _ in range(30):
        cur = [rng.randrange(20) for _ in range(rng.randint(1, 5))]
        assert ssknn_score(s, cur, 50, weight=lambda _: 1.0) == sknn_score(s, cur, 50)


def test_k_at_least_store_size_is_no_op():
    rng = random.Random(4)
    sessions = [[rng.randrange(10) for _ in range(4)] for _ in range(30)]
    s = store_of(sessions)
    cur = [1, 2, 3]
    assert sknn_score(s, cur, 30) == sknn_score(s, cur, 500)


@given(st.lists(st.lists(st.integers(0, 12), min_size=1, max_size=6), min_size=1, max_size=40),
       st.lists(st.integers(0, 12), min_size=1, max_size=5), st.integers(1, 50), st.integers(5, 60))
@settings(max_examples=150, deadline=None)
def test_sknn_matches_bruteforce(sessions, current, k, capacity):
    s = store_of(sessions, capacity)
    kept = sessions[-capacity:]
    expected = sknn_bruteforce(kept, current, k)
    assert sknn_score(s, current, k) == pytest.approx(expected, abs=1e-12)
    w = position_weight(current)
    expected = sknn_bruteforce(kept, current, k, weight=w)
    assert ssknn_score(s, current, k) == pytest.approx(expected, abs=1e-12)


def test_sknn_model_stores_only_ended_sessions():
    m = SKNN(capacity=10)
    m.update("s", [], A)
    m.update("s", [A], B)
    assert m.recommend("t", [A], 5) == []
    m.end_session("s", [A, B])
    assert [x for x, _ in m.recommend("t", [A], 5)] == [A, B]
    m2 = SKNN(capacity=10, exclude_current=True)
    m2.end_session("s", [A, B])
    assert [x for x, _ in m2.recommend("t", [A], 5)] == [B]


def test_ssknn_defaults():
    m = SSKNN()
    assert (m.k_neighbors, m.store.capacity) == (100, 500)


def test_cooccurrence_hand_example():
    m = CooccurrenceMatrix()
    for s in ([A, B], [A, B, C], [A, A, C]):
        m.add_session(s)
    assert m.freq == {A: 3, B: 2, C: 2}
    assert m.cooc(A, B) == 2
    assert m.cooc(A, A) == 3
    assert m.similarity(A, B) == pytest.approx(2 / math.sqrt(6))
    assert m.similarity(B, C) == pytest.approx(1 / 2)
    ranked = itemknn_recommend(m, B, 5)
    assert [x for x, _ in ranked] == [A, C]


def test_cooccurrence_matches_table():
    rng = random.Random(6)
    sessions = [[rng.randrange(8) for _ in range(rng.randint(1, 5))] for _ in range(60)]
    m = CooccurrenceMatrix()
    for s in sessions:
        m.add_session(s)
    for (a, b), v in item_cosine_table(sessions).items():
        assert m.similarity(a, b) == pytest.approx(v, abs=1e-12)


def test_itemknn_only_cooccurring_items():
    m = ItemKNN()
    for sid, s in (("1", [A, B]), ("2", [C, D])):
        for p, x in enumerate(s):
            m.update(sid, s[:p], x)
        m.end_session(sid, s)
    assert [x for x, _ in m.recommend("q", [A], 10)] == [B]
    assert m.recommend("q", [9], 10) == []
    assert m.recommend("q", [], 10) == []
