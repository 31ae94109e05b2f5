"""Items, sessions and click-stream datasets.

Input files are UTF-8 CSV with a ``session_id,item_key,timestamp`` header.
Item keys are interned into dense integer ids in global event order, so an
item's id plus one is its creation rank.
"""

from __future__ import annotations

import csv
import heapq
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Sequence

HEADER = ("session_id", "item_key", "timestamp")
DAY_MS = 86_400_000


class DatasetError(ValueError):
    """Malformed or unusable input data."""


class EmptyDatasetError(DatasetError):
    pass


class ItemCatalog:
    """Bijective interning of raw item keys, in order of first appearance.

    ``first_seen_order(i)`` is the 1-based creation rank of item ``i``.
    Because ids are handed out on first sight the rank is simply ``i + 1``.
    """

    def __init__(self, keys: Iterable[Hashable] = ()):
        self.keys: list[Hashable] = []
        self._index: dict[Hashable, int] = {}
        self.view_counts: list[int] = []
        for key in keys:
            self.add(key)

    def add(self, key: Hashable) -> int:
        idx = self._index.get(key)
        if idx is None:
            idx = len(self.keys)
            self._index[key] = idx
            self.keys.append(key)
            self.view_counts.append(0)
        return idx

    def view(self, key: Hashable) -> int:
        idx = self.add(key)
        self.view_counts[idx] += 1
        return idx

    def id_of(self, key: Hashable) -> int | None:
        return self._index.get(key)

    def key_of(self, item: int) -> Hashable:
        return self.keys[item]

    def __contains__(self, key: Hashable) -> bool:
        return key in self._index

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def count(self) -> int:
        return len(self.keys)

    def first_seen_order(self, item: int) -> int:
        if not 0 <= item < len(self.keys):
            raise KeyError(item)
        return item + 1

    def newest(self, k: int) -> list[int]:
        return list(range(len(self.keys) - 1, max(len(self.keys) - k, 0) - 1, -1))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ItemCatalog):
            return NotImplemented
        return self.keys == other.keys and self.view_counts == other.view_counts


@dataclass(frozen=True)
class Event:
    session_id: str
    item: int
    timestamp: int
    seq: int = 0  # input row index; breaks timestamp ties


@dataclass(frozen=True)
class Session:
    id: str
    items: tuple[int, ...]
    timestamps: tuple[int, ...]
    seqs: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.items)

    @property
    def start(self) -> tuple[int, int]:
        return (self.timestamps[0], self.seqs[0])

    def events(self) -> Iterator[Event]:
        for item, ts, seq in zip(self.items, self.timestamps, self.seqs):
            yield Event(self.id, item, ts, seq)


@dataclass(frozen=True)
class Dataset:
    sessions: tuple[Session, ...]
    catalog: ItemCatalog = field(compare=False)
    split_point: int | None = None

    def __len__(self) -> int:
        return len(self.sessions)

    @property
    def n_events(self) -> int:
        return sum(len(s) for s in self.sessions)

    def items(self) -> set[int]:
        out: set[int] = set()
        for s in self.sessions:
            out.update(s.items)
        return out

    def events(self) -> Iterator[Event]:
        """All events merged into one stream by (timestamp, input row)."""
        return heapq.merge(*(s.events() for s in self.sessions),
                           key=lambda e: (e.timestamp, e.seq))

    def time_range(self) -> tuple[int, int]:
        if not self.sessions:
            raise EmptyDatasetError("dataset has no sessions")
        lo = min(s.timestamps[0] for s in self.sessions)
        hi = max(s.timestamps[-1] for s in self.sessions)
        return lo, hi

    def stats(self) -> dict:
        n_events = self.n_events
        return {
            "items": len(self.items()),
            "events": n_events,
            "sessions": len(self.sessions),
            "avg_session_length": round(n_events / len(self.sessions), 4) if self.sessions else 0.0,
        }


def _build(rows: Sequence[tuple[str, Hashable, int, int]], split_point: int | None = None) -> Dataset:
    """Group (session_id, key, timestamp, seq) rows into a Dataset."""
    ordered = sorted(rows, key=lambda r: (r[2], r[3]))
    catalog = ItemCatalog()
    grouped: dict[str, list[tuple[int, int, int]]] = {}
    for sid, key, ts, seq in ordered:
        grouped.setdefault(sid, []).append((catalog.view(key), ts, seq))
    sessions = [
        Session(sid, tuple(e[0] for e in evs), tuple(e[1] for e in evs), tuple(e[2] for e in evs))
        for sid, evs in grouped.items()
    ]
    sessions.sort(key=lambda s: s.start)
    return Dataset(tuple(sessions), catalog, split_point)


def from_sessions(sessions: Iterable[Sequence[Hashable]], start: int = 0) -> Dataset:
    """Build a dataset from plain item sequences; session i occupies timestamps after session i-1."""
    rows = []
    ts = start
    for i, items in enumerate(sessions):
        for key in items:
            rows.append((str(i), key, ts, len(rows)))
            ts += 1
    return _build(rows)


def ingest(path: str | Path) -> Dataset:
    path = Path(path)
    rows: list[tuple[str, str, int, int]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != HEADER:
            raise DatasetError(f"{path}: line 1: expected header {','.join(HEADER)}, got {','.join(header)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise DatasetError(f"{path}: line {line}: expected 3 columns, got {len(row)}")
            sid, key, ts = (c.strip() for c in row)
            if not sid or not key or not ts:
                raise DatasetError(f"{path}: line {line}: empty field")
            try:
                stamp = int(ts)
            except ValueError:
                raise DatasetError(f"{path}: line {line}: timestamp {ts!r} is not an integer") from None
            if stamp < 0:
                raise DatasetError(f"{path}: line {line}: negative timestamp")
            rows.append((sid, key, stamp, len(rows)))
    if not rows:
        raise EmptyDatasetError(f"{path}: no events")
    return _build(rows)


def write_csv(d: Dataset, path: str | Path) -> None:
    """Write sessions in dataset order, events in session order."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for s in d.sessions:
            for item, ts in zip(s.items, s.timestamps):
                w.writerow((s.id, d.catalog.key_of(item), ts))


def _rows(d: Dataset, sessions: Iterable[Session]) -> list[tuple[str, Hashable, int, int]]:
    return [
        (s.id, d.catalog.key_of(item), ts, seq)
        for s in sessions
        for item, ts, seq in zip(s.items, s.timestamps, s.seqs)
    ]


def _dedup(s: Session, mode: str) -> Session:
    keep = []
    seen: set[int] = set()
    for i, item in enumerate(s.items):
        if mode == "consecutive":
            if i and s.items[i - 1] == item:
                continue
        elif mode == "all":
            if item in seen:
                continue
            seen.add(item)
        else:
            raise ValueError(f"unknown dedup mode {mode!r}")
        keep.append(i)
    return Session(s.id, tuple(s.items[i] for i in keep), tuple(s.timestamps[i] for i in keep),
                   tuple(s.seqs[i] for i in keep))


def preprocess(d: Dataset, min_session_len: int = 3, min_item_views: int = 0,
               dedup_within_session: bool = False, dedup_mode: str = "all") -> Dataset:
    """Drop repeats, rare items and short sessions.

    Item filtering and session-length filtering alternate until neither
    removes anything.
    """
    sessions = list(d.sessions)
    if dedup_within_session:
        sessions = [_dedup(s, dedup_mode) for s in sessions]
    while True:
        changed = False
        if min_item_views > 0:
            views = Counter(item for s in sessions for item in s.items)
            rare = {item for item, n in views.items() if n < min_item_views}
            if rare:
                changed = True
                pruned = []
                for s in sessions:
                    keep = [i for i, item in enumerate(s.items) if item not in rare]
                    if keep:
                        pruned.append(Session(s.id, tuple(s.items[i] for i in keep),
                                              tuple(s.timestamps[i] for i in keep),
                                              tuple(s.seqs[i] for i in keep)))
                sessions = pruned
        long_enough = [s for s in sessions if len(s) >= min_session_len]
        if len(long_enough) != len(sessions):
            changed = True
            sessions = long_enough
        if not changed:
            break
    if not sessions:
        raise EmptyDatasetError("preprocessing removed every session")
    return _build(_rows(d, sessions))


def split_static(d: Dataset, boundary: int) -> tuple[Dataset, Dataset]:
    """Sessions starting before ``boundary`` train; the rest test, restricted to train items.

    Both halves share the parent catalog.
    """
    lo, hi = d.time_range()
    if not lo <= boundary <= hi:
        raise DatasetError(f"boundary {boundary} outside dataset time range [{lo}, {hi}]")
    train = [s for s in d.sessions if s.timestamps[0] < boundary]
    if not train:
        raise DatasetError("split leaves the training set empty")
    known = set()
    for s in train:
        known.update(s.items)
    test = [s for s in d.sessions if s.timestamps[0] >= boundary and known.issuperset(s.items)]
    return (Dataset(tuple(train), d.catalog, boundary),
            Dataset(tuple(test), d.catalog, boundary))


def last_day_boundary(d: Dataset, span: int = DAY_MS) -> int:
    return d.time_range()[1] - span


def convert_rsc15(src: str | Path, dst: str | Path, limit: int | None = None) -> int:
    """Map a raw RecSys'15 clicks file (session,ISO time,item,category; no header) to ingest format.

    Returns the number of events written.
    """
    from datetime import datetime, timedelta, timezone

    epoch = datetime(1970, 1, 1, tzinfo=timezone.utc)
    n = 0
    with Path(src).open(newline="", encoding="utf-8") as fin, \
            Path(dst).open("w", newline="", encoding="utf-8") as fout:
        w = csv.writer(fout, lineterminator="\n")
        w.writerow(HEADER)
        for row in csv.reader(fin):
            if limit is not None and n >= limit:
                break
            if len(row) < 3:
                continue
            stamp = datetime.strptime(row[1], "%Y-%m-%dT%H:%M:%S.%fZ").replace(tzinfo=timezone.utc)
            w.writerow((row[0], row[2], (stamp - epoch) // timedelta(milliseconds=1)))
            n += 1
    return n


def stats_json(d: Dataset) -> str:
    return json.dumps(d.stats(), sort_keys=True)
