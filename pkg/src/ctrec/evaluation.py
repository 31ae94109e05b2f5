"""Static and replay (adaptive) evaluation, HR@k / MRR@k and freshness analytics."""

from __future__ import annotations

import csv
import json
import math
import time
from bisect import bisect_right
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .base import RankedList, Recommender
from .data import Dataset, ItemCatalog


class EvaluationError(ValueError):
    pass


@dataclass(slots=True)
class PredictionRecord:
    session_id: str
    position: int
    target: int
    rank: int | None
    freshness: float
    list_len: int
    recommended_freshness: tuple[float, ...] = ()
    popular_target: bool = False
    tail_rank: int | None = None


@dataclass
class EvalReport:
    model: str
    protocol: str
    ks: list[int]
    hr_at: dict[int, float]
    mrr_at: dict[int, float]
    tail_hr_at: dict[int, float]
    tail_mrr_at: dict[int, float]
    n_predictions: int
    n_tail_predictions: int
    tail_exclude: int
    tail_mode: str
    freshness_ecdf: list[tuple[float, float]]
    conditional_success: list[tuple[float, float, int]]
    success_k: int
    timing: dict[str, float] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def to_dict(self, with_timing: bool = False) -> dict:
        out = asdict(self)
        for key in ("hr_at", "mrr_at", "tail_hr_at", "tail_mrr_at"):
            out[key] = {str(k): v for k, v in out[key].items()}
        out["freshness_ecdf"] = [list(p) for p in self.freshness_ecdf]
        out["conditional_success"] = [list(p) for p in self.conditional_success]
        if not with_timing:
            del out["timing"]
        return out


def hit_and_rank(ranked: RankedList, target: int) -> int | None:
    for i, (x, _) in enumerate(ranked):
        if x == target:
            return i + 1
    return None


def freshness_of(item: int, catalog: ItemCatalog) -> float:
    """Creation rank of ``item`` over the current pool size; catalog keys are item ids."""
    idx = catalog.id_of(item)
    if idx is None:
        raise KeyError(item)
    return catalog.first_seen_order(idx) / catalog.count


class PopularityTracker:
    """Global view counts plus the ``top_n`` most viewed items (ties: smaller id)."""

    def __init__(self, top_n: int):
        self.top_n = top_n
        self.counts: dict[int, int] = {}
        self.top: list[int] = []

    def _key(self, x: int) -> tuple[int, int]:
        return (-self.counts[x], x)

    def add(self, item: int) -> None:
        self.counts[item] = self.counts.get(item, 0) + 1
        if self.top_n <= 0:
            return
        top = self.top
        if item in top:
            top.sort(key=self._key)
        elif len(top) < self.top_n:
            top.append(item)
            top.sort(key=self._key)
        elif self._key(item) < self._key(top[-1]):
            top[-1] = item
            top.sort(key=self._key)

    def is_popular(self, item: int) -> bool:
        return item in self.top


def ecdf(values: Sequence[float], points: int = 100) -> list[tuple[float, float]]:
    """Fraction of values <= x on the grid x = 1/points, ..., 1."""
    if not values:
        return []
    vs = sorted(values)
    n = len(vs)
    return [(i / points, bisect_right(vs, i / points) / n) for i in range(1, points + 1)]


def freshness_curves(records: Sequence[PredictionRecord], buckets: int = 10, k: int | None = None,
                     points: int = 100) -> tuple[list[tuple[float, float]], list[tuple[float, float, int]]]:
    """ECDF of recommended-item freshness, and hit rate by target-freshness bucket.

    Both use the first ``k`` list entries (default: the whole list).
    """
    if not records:
        raise EvaluationError("no prediction records")
    rec_values: list[float] = []
    hits = [0] * buckets
    totals = [0] * buckets
    for r in records:
        shown = r.recommended_freshness if k is None else r.recommended_freshness[:k]
        rec_values.extend(shown)
        b = min(max(math.ceil(r.freshness * buckets) - 1, 0), buckets - 1)
        totals[b] += 1
        if r.rank is not None and (k is None or r.rank <= k):
            hits[b] += 1
    conditional = [((b + 0.5) / buckets, hits[b] / totals[b], totals[b]) for b in range(buckets) if totals[b]]
    return ecdf(rec_values, points), conditional


def _rates(ranks: Iterable[int | None], ks: Sequence[int]) -> tuple[dict[int, float], dict[int, float], int]:
    ranks = list(ranks)
    n = len(ranks)
    hr = {}
    mrr = {}
    for k in ks:
        hits = [r for r in ranks if r is not None and r <= k]
        hr[k] = len(hits) / n if n else 0.0
        mrr[k] = math.fsum(1.0 / r for r in hits) / n if n else 0.0
    return hr, mrr, n


def summarize(records: Sequence[PredictionRecord], ks: Sequence[int], model: str, protocol: str,
              tail_exclude: int, tail_mode: str, buckets: int = 10, success_k: int | None = None,
              timing: dict | None = None, meta: dict | None = None) -> EvalReport:
    if not records:
        raise EvaluationError("no predictions were scored")
    ks = sorted(ks)
    success_k = success_k or ks[0]
    hr, mrr, n = _rates((r.rank for r in records), ks)
    if tail_mode == "target":
        tail_records = [r.rank for r in records if not r.popular_target]
    else:
        tail_records = [r.tail_rank for r in records]
    tail_hr, tail_mrr, n_tail = _rates(tail_records, ks)
    curve, conditional = freshness_curves(records, buckets, success_k)
    meta = dict(meta or {})
    meta.setdefault("freshness_ecdf", "freshness of recommended items (top success_k)")
    meta.setdefault("conditional_success", "hit@success_k rate bucketed by target freshness")
    return EvalReport(model, protocol, list(ks), hr, mrr, tail_hr, tail_mrr, n, n_tail, tail_exclude,
                      tail_mode, curve, conditional, success_k, dict(timing or {}), meta)


def _tail_list(ranked: RankedList, popular: PopularityTracker, k: int) -> RankedList:
    return [e for e in ranked if not popular.is_popular(e[0])][:k]


def _record(sid: str, pos: int, target: int, ranked: RankedList, kmax: int, catalog: ItemCatalog,
            popular: PopularityTracker, tail_mode: str) -> PredictionRecord:
    n = catalog.count
    main = ranked[:kmax]
    rec_fresh = []
    for x, _ in main:
        idx = catalog.id_of(x)
        rec_fresh.append(min((idx + 1) / n, 1.0) if idx is not None else 1.0)
    tail_rank = None
    if tail_mode == "candidates":
        tail_rank = hit_and_rank(_tail_list(ranked, popular, kmax), target)
    return PredictionRecord(sid, pos, target, hit_and_rank(main, target),
                            freshness_of(target, catalog), kmax, tuple(rec_fresh),
                            popular.is_popular(target), tail_rank)


def _check(ks: Sequence[int], tail_mode: str) -> int:
    if not ks or min(ks) < 1:
        raise EvaluationError("ks must be positive integers")
    if tail_mode not in ("target", "candidates"):
        raise EvaluationError(f"unknown tail mode {tail_mode!r}")
    return max(ks)


def evaluate_static(model: Recommender, train: Dataset, test: Dataset, ks: Sequence[int] = (5, 20),
                    tail_exclude: int = 20, tail_mode: str = "target", buckets: int = 10,
                    name: str | None = None, keep_records: bool = False):
    """Fit on ``train`` in time order, then score every next-item transition of ``test``.

    The model is not updated on test events. Popularity for the tail metric
    and item freshness come from the training stream. Returns the report, and
    the records as well when ``keep_records`` is set.
    """
    kmax = _check(ks, tail_mode)
    if not test.sessions:
        raise EvaluationError("test set is empty")
    catalog = ItemCatalog()
    popular = PopularityTracker(tail_exclude)
    for e in train.events():
        catalog.add(e.item)
        popular.add(e.item)
    t0 = time.perf_counter()
    model.fit(train.sessions)
    train_seconds = time.perf_counter() - t0
    request = kmax + tail_exclude if tail_mode == "candidates" else kmax
    records = []
    predict_seconds = 0.0
    for s in test.sessions:
        items = s.items
        for p in range(1, len(items)):
            t1 = time.perf_counter()
            ranked = model.recommend(s.id, items[:p], request)
            predict_seconds += time.perf_counter() - t1
            catalog.add(items[p])
            records.append(_record(s.id, p, items[p], ranked, kmax, catalog, popular, tail_mode))
    timing = {"train_seconds": train_seconds,
              "predict_ms_mean": 1000.0 * predict_seconds / max(len(records), 1)}
    report = summarize(records, ks, name or model.name, "static", tail_exclude, tail_mode, buckets,
                       timing=timing)
    return (report, records) if keep_records else report


def evaluate_adaptive(model: Recommender, full: Dataset, ks: Sequence[int] = (5, 20),
                      tail_exclude: int = 20, tail_mode: str = "target", buckets: int = 10,
                      name: str | None = None, keep_records: bool = False):
    """Replay every event in time order: recommend, score, then update the model.

    The first event of a session is never scored. Popularity for the tail
    metric counts only the events replayed before the current one.
    """
    kmax = _check(ks, tail_mode)
    lengths = {s.id: len(s) for s in full.sessions}
    open_sessions: dict[str, list[int]] = {}
    catalog = ItemCatalog()
    popular = PopularityTracker(tail_exclude)
    request = kmax + tail_exclude if tail_mode == "candidates" else kmax
    records = []
    predict_seconds = 0.0
    update_seconds = 0.0
    for e in full.events():
        prefix = open_sessions.setdefault(e.session_id, [])
        catalog.add(e.item)
        if prefix:
            t1 = time.perf_counter()
            ranked = model.recommend(e.session_id, prefix, request)
            predict_seconds += time.perf_counter() - t1
            records.append(_record(e.session_id, len(prefix), e.item, ranked, kmax, catalog, popular,
                                   tail_mode))
        t1 = time.perf_counter()
        model.update(e.session_id, prefix, e.item)
        prefix.append(e.item)
        if len(prefix) == lengths[e.session_id]:
            model.end_session(e.session_id, prefix)
            del open_sessions[e.session_id]
        update_seconds += time.perf_counter() - t1
        popular.add(e.item)
    timing = {"train_seconds": update_seconds,
              "predict_ms_mean": 1000.0 * predict_seconds / max(len(records), 1)}
    report = summarize(records, ks, name or model.name, "adaptive", tail_exclude, tail_mode, buckets,
                       timing=timing)
    return (report, records) if keep_records else report


def write_report(report: EvalReport, outdir: str | Path) -> Path:
    """Write report.json, metrics.csv and one x,y CSV per curve; timings go to timing.json.

    Everything except timing.json is a pure function of the configuration.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("metric", "value"))
        for prefix, table in (("HR", report.hr_at), ("MRR", report.mrr_at),
                              ("tail_HR", report.tail_hr_at), ("tail_MRR", report.tail_mrr_at)):
            for k in report.ks:
                w.writerow((f"{prefix}@{k}", repr(table[k])))
        w.writerow(("n_predictions", report.n_predictions))
        w.writerow(("n_tail_predictions", report.n_tail_predictions))
    for fname, points in (("freshness_ecdf.csv", report.freshness_ecdf),
                          ("conditional_success.csv", report.conditional_success)):
        with (out / fname).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("x", "y"))
            for p in points:
                w.writerow((repr(p[0]), repr(p[1])))
    (out / "timing.json").write_text(json.dumps(report.timing, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return out
