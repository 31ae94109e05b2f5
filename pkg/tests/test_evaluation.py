from __future__ import annotations

import json
import random
from collections import Counter

import pytest

from ctrec.base import Recommender
from ctrec.ctree import CTRecommender
from ctrec.data import ItemCatalog, from_sessions, ingest, split_static
from ctrec.evaluation import (
    EvaluationError,
    PopularityTracker,
    PredictionRecord,
    ecdf,
    evaluate_adaptive,
    evaluate_static,
    freshness_curves,
    freshness_of,
    hit_and_rank,
    write_report,
)
from ctrec.heuristics import PopularRec


def interleaved(tmp_path, n_sessions=40, n_items=12, seed=0):
    rng = random.Random(seed)
    rows = []
    for s in range(n_sessions):
        t = s * 3
        for _ in range(rng.randint(2, 6)):
            t += rng.randint(1, 4)
            rows.append(f"s{s},i{rng.randrange(n_items)},{t}")
    p = tmp_path / "inter.csv"
    p.write_text("session_id,item_key,timestamp\n" + "\n".join(rows) + "\n")
    return ingest(p)


class Empty(Recommender):
    name = "empty"

    def update(self, session_id, context, item):
        pass

    def recommend(self, session_id, context, k):
        return []


class LastUpdate(Recommender):
    """Recommends whatever it was last shown; a protocol leak would make it perfect."""

    name = "last"

    def __init__(self):
        self.last = None

    def update(self, session_id, context, item):
        self.last = item

    def recommend(self, session_id, context, k):
        return [] if self.last is None else [(self.last, 1.0)]


def test_hit_and_rank():
    ranked = [(5, 0.9), (3, 0.5), (8, 0.1)]
    assert hit_and_rank(ranked, 3) == 2
    assert hit_and_rank(ranked, 4) is None
    assert hit_and_rank([], 4) is None


def test_freshness_of():
    c = ItemCatalog(["a", "b", "c", "d"])
    assert freshness_of("b", c) == 0.5
    assert freshness_of("d", c) == 1.0
    with pytest.raises(KeyError):
        freshness_of("z", c)


def test_static_prediction_count_and_empty_model():
    d = from_sessions([["a", "b", "c"]] * 6 + [["a", "b", "c", "a"], ["b", "c"]])
    train, test = split_static(d, d.sessions[6].timestamps[0])
    rep = evaluate_static(Empty(), train, test, ks=(1, 5))
    assert rep.n_predictions == sum(len(s) - 1 for s in test.sessions) == 4
    assert rep.hr_at == {1: 0.0, 5: 0.0}
    assert rep.mrr_at == {1: 0.0, 5: 0.0}


def test_static_does_not_update_on_test():
    d = from_sessions([["a", "b", "c"], ["b", "c", "a"], ["a", "c", "b"], ["c", "b", "a"], ["a", "b", "a"]])
    train, test = split_static(d, d.sessions[3].timestamps[0])
    model = CTRecommender()
    evaluate_static(model, train, test)
    ref = CTRecommender()
    ref.fit(train.sessions)
    assert model.state() == ref.state()


def test_static_learns_pattern():
    d = from_sessions([["a", "b", "c", "d"]] * 10)
    train, test = split_static(d, d.sessions[8].timestamps[0])
    rep = evaluate_static(CTRecommender(), train, test, ks=(1,))
    assert rep.hr_at[1] == 1.0
    assert rep.mrr_at[1] == 1.0


def test_adaptive_never_scores_first_event(tmp_path):
    d = interleaved(tmp_path)
    rep, records = evaluate_adaptive(CTRecommender(), d, keep_records=True)
    assert rep.n_predictions == d.n_events - len(d.sessions)
    assert all(r.position >= 1 for r in records)
    per_session = Counter(r.session_id for r in records)
    assert all(per_session[s.id] == len(s) - 1 for s in d.sessions)


def test_adaptive_predicts_before_update():
    # sessions of distinct items, not interleaved: the last update is never the target
    d = from_sessions([["a", "b", "c"], ["d", "e", "f"], ["g", "h", "i"]])
    rep = evaluate_adaptive(LastUpdate(), d, ks=(1,))
    assert rep.hr_at[1] == 0.0


def test_adaptive_matches_retraining_on_prefix(tmp_path):
    d = interleaved(tmp_path, n_sessions=15, n_items=6, seed=3)
    _, records = evaluate_adaptive(CTRecommender(), d, ks=(3,), keep_records=True)
    events = list(d.events())
    it = iter(records)
    seen: dict[str, list[int]] = {}
    for t, e in enumerate(events):
        prefix = seen.setdefault(e.session_id, [])
        if prefix:
            # a model rebuilt from scratch on everything before t
            m = CTRecommender()
            hist: dict[str, list[int]] = {}
            for past in events[:t]:
                ctx = hist.setdefault(past.session_id, [])
                m.update(past.session_id, list(ctx), past.item)
                ctx.append(past.item)
            expected = hit_and_rank(m.recommend(e.session_id, prefix, 3), e.item)
            assert next(it).rank == expected
        prefix.append(e.item)


def test_tail_exclude_zero_equals_overall(tmp_path):
    d = interleaved(tmp_path)
    for mode in ("target", "candidates"):
        rep = evaluate_adaptive(PopularRec(20), d, ks=(1, 5), tail_exclude=0, tail_mode=mode)
        assert rep.tail_hr_at == rep.hr_at
        assert rep.tail_mrr_at == rep.mrr_at
        assert rep.n_tail_predictions == rep.n_predictions


def test_tail_excludes_popular_targets(tmp_path):
    d = interleaved(tmp_path)
    rep = evaluate_adaptive(PopularRec(20), d, ks=(5,), tail_exclude=3)
    assert rep.n_tail_predictions < rep.n_predictions


def test_metric_relations(tmp_path):
    d = interleaved(tmp_path, n_sessions=80)
    rep = evaluate_adaptive(CTRecommender(), d, ks=(1, 2, 5, 10))
    hrs = [rep.hr_at[k] for k in rep.ks]
    assert hrs == sorted(hrs)
    for k in rep.ks:
        assert 0.0 <= rep.mrr_at[k] <= rep.hr_at[k] <= 1.0
    assert rep.hr_at[1] == rep.mrr_at[1]


def test_popularity_tracker_matches_bruteforce():
    rng = random.Random(1)
    t = PopularityTracker(5)
    counts = Counter()
    for _ in range(2000):
        x = int(rng.paretovariate(1.2)) % 40
        t.add(x)
        counts[x] += 1
        expected = sorted(counts, key=lambda y: (-counts[y], y))[:5]
        assert t.top == expected


def test_ecdf_grid():
    pts = ecdf([1.0, 1.0, 1.0])
    assert len(pts) == 100
    assert all(y == 0.0 for _, y in pts[:-1])
    assert pts[-1] == (1.0, 1.0)
    pts = ecdf([0.1, 0.5, 0.9])
    assert pts[-1] == (1.0, 1.0)
    assert dict(pts)[0.5] == pytest.approx(2 / 3)
    assert ecdf([]) == []


def record(freshness, rank=None, rec=()):
    return PredictionRecord("s", 1, 0, rank, freshness, 5, rec)


def test_conditional_success_buckets():
    recs = [record(0.1, 1), record(0.11), record(1.0, 2), record(0.95)]
    _, cond = freshness_curves(recs, buckets=10)
    assert cond == [(0.05, 1.0, 1), (0.15, 0.0, 1), (0.95, 0.5, 2)]
    _, cond = freshness_curves(recs, buckets=10, k=1)
    assert cond[-1] == (0.95, 0.0, 2)
    with pytest.raises(EvaluationError):
        freshness_curves([])


def test_fresh_recommendations_put_mass_at_one():
    recs = [record(0.5, None, (1.0, 1.0)) for _ in range(4)]
    curve, _ = freshness_curves(recs)
    assert curve[-2][1] == 0.0
    assert curve[-1] == (1.0, 1.0)


def test_bad_arguments(tmp_path):
    d = interleaved(tmp_path)
    with pytest.raises(EvaluationError):
        evaluate_adaptive(Empty(), d, ks=())
    with pytest.raises(EvaluationError):
        evaluate_adaptive(Empty(), d, tail_mode="other")


def test_determinism_and_writer(tmp_path):
    d = interleaved(tmp_path)
    reps = [evaluate_adaptive(CTRecommender(), d) for _ in range(2)]
    assert reps[0].to_dict() == reps[1].to_dict()
    outs = [write_report(r, tmp_path / f"run{i}") for i, r in enumerate(reps)]
    for name in ("report.json", "metrics.csv", "freshness_ecdf.csv", "conditional_success.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
    data = json.loads((outs[0] / "report.json").read_text())
    assert data["protocol"] == "adaptive"
    assert "timing" not in data
    assert set(json.loads((outs[0] / "timing.json").read_text())) == {"train_seconds", "predict_ms_mean"}
    lines = (outs[0] / "metrics.csv").read_text().splitlines()
    assert lines[0] == "metric,value"
    assert any(line.startswith("HR@20,") for line in lines)
    assert (outs[0] / "freshness_ecdf.csv").read_text().splitlines()[0] == "x,y"
