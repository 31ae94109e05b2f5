"""Context-tree recommender.

Each node of the tree stands for the set of histories ending in a given
suffix; the path root -> n1 -> n3 is the context <n3, n1> (most recent item
first). Every node carries a Dirichlet-multinomial count table (its expert)
and a mixing weight. Predictions blend the experts along the matched path,
shallow to deep:

    q_0 = P_root
    q_i = w_i * P_i + (1 - w_i) * q_{i-1}

and after an item ``x`` is consumed each weight becomes the posterior
``w_i * P_i(x) / q_i(x)``.
"""

from __future__ import annotations

import hashlib
import heapq
import json
from bisect import insort
from pathlib import Path
from typing import Sequence

from sortedcontainers import SortedList

from .base import RankedList, Recommender


SNAPSHOT_FORMAT = "ctrec-snapshot"
SNAPSHOT_VERSION = 1

# supports larger than this keep a count-ordered index for top-k queries
RANKED_MIN_SUPPORT = 48


class SnapshotError(ValueError):
    pass


class ChecksumError(SnapshotError):
    pass


class Expert:
    """Sparse count table with a symmetric Dirichlet prior."""

    __slots__ = ("counts", "total", "ranked")

    def __init__(self, counts: dict[int, int] | None = None):
        self.counts: dict[int, int] = {}
        self.total = 0
        self.ranked: SortedList | None = None
        for item, n in (counts or {}).items():
            self.add(item, n)

    def add(self, item: int, n: int = 1) -> None:
        counts = self.counts
        old = counts.get(item, 0)
        counts[item] = old + n
        self.total += n
        ranked = self.ranked
        if ranked is not None:
            if old:
                ranked.remove((-old, item))
            ranked.add((-old - n, item))
        elif len(counts) > RANKED_MIN_SUPPORT:
            self.ranked = SortedList((-c, i) for i, c in counts.items())

    def denominator(self, catalog_size: int, alpha0: float, literal: bool = False) -> float:
        return self.total + (alpha0 if literal else catalog_size * alpha0)

    def prob(self, item: int, catalog_size: int, alpha0: float, literal: bool = False) -> float:
        return (self.counts.get(item, 0) + alpha0) / self.denominator(catalog_size, alpha0, literal)

    def predict(self, catalog: Sequence[int], alpha0: float = 1.0, literal: bool = False) -> dict[int, float]:
        return expert_predict(self, len(catalog), alpha0, literal, catalog)


def expert_predict(e: Expert, catalog_size: int, alpha0: float = 1.0, literal: bool = False,
                   items: Sequence[int] | None = None) -> dict[int, float]:
    """Posterior predictive ``(count_x + alpha0) / (total + |N| * alpha0)``.

    ``items`` defaults to ``range(catalog_size)``. With ``literal`` the
    denominator is ``total + alpha0`` and the result does not sum to one.
    """
    if catalog_size < 1:
        raise ValueError("catalog must hold at least one item")
    if items is None:
        items = range(catalog_size)
    den = e.denominator(catalog_size, alpha0, literal)
    counts = e.counts
    return {x: (counts.get(x, 0) + alpha0) / den for x in items}


class CtNode(Expert):
    __slots__ = ("symbol", "parent", "children", "weight", "depth")

    def __init__(self, symbol: int | None = None, parent: CtNode | None = None, weight: float = 0.5):
        super().__init__()
        self.symbol = symbol
        self.parent = parent
        self.children: dict[int, CtNode] = {}
        self.weight = weight
        self.depth = 0 if parent is None else parent.depth + 1

    def context(self) -> tuple[int, ...]:
        """Suffix this node represents, oldest item first."""
        out = []
        node = self
        while node.parent is not None:
            out.append(node.symbol)
            node = node.parent
        return tuple(out)


def mix(path: Sequence[CtNode], catalog: Sequence[int], alpha0: float = 1.0,
        literal: bool = False) -> dict[int, float]:
    """Blend the experts on ``path`` (root first) into one distribution over ``catalog``."""
    n = len(catalog)
    q = expert_predict(path[0], n, alpha0, literal, catalog)
    for node in path[1:]:
        w = node.weight
        den = node.denominator(n, alpha0, literal)
        counts = node.counts
        q = {x: w * ((counts.get(x, 0) + alpha0) / den) + (1.0 - w) * qx for x, qx in q.items()}
    return q


def update_weights(path: Sequence[CtNode], observed: int, catalog_size: int, alpha0: float = 1.0,
                   literal: bool = False) -> float:
    """Bayes update of every non-root weight on ``path``; returns q at the deepest node."""
    q = path[0].prob(observed, catalog_size, alpha0, literal)
    for node in path[1:]:
        w = node.weight
        p = node.prob(observed, catalog_size, alpha0, literal)
        qi = w * p + (1.0 - w) * q
        assert qi > 0.0, "mixture assigned zero mass to an observed item"
        node.weight = w * p / qi
        q = qi
    return q


class ContextTree:
    """Incrementally grown context tree over integer item ids.

    ``growth='one'`` adds at most one node per observation below the deepest
    match; ``growth='full'`` materialises the whole suffix down to
    ``max_depth``. ``normalization='literal'`` swaps in the unnormalised
    ``total + alpha0`` expert denominator.
    """

    def __init__(self, max_depth: int = 50, alpha0: float = 1.0, initial_weight: float = 0.1,
                 growth: str = "one", normalization: str = "dirichlet"):
        if max_depth < 1:
            raise ValueError("max_depth must be positive")
        if alpha0 <= 0:
            raise ValueError("alpha0 must be positive")
        if not 0.0 <= initial_weight <= 1.0:
            raise ValueError("initial_weight must lie in [0, 1]")
        if growth not in ("one", "full"):
            raise ValueError(f"unknown growth policy {growth!r}")
        if normalization not in ("dirichlet", "literal"):
            raise ValueError(f"unknown normalization {normalization!r}")
        self.max_depth = max_depth
        self.alpha0 = float(alpha0)
        self.initial_weight = float(initial_weight)
        self.growth = growth
        self.normalization = normalization
        self._literal = normalization == "literal"
        self.root = CtNode(weight=1.0)
        self.items: set[int] = set()
        self._sorted_items: list[int] = []
        self.node_count = 1
        self.n_observed = 0
        self.last_visits = 0

    @property
    def catalog_size(self) -> int:
        return len(self.items)

    def params(self) -> dict:
        return {
            "max_depth": self.max_depth,
            "alpha0": self.alpha0,
            "initial_weight": self.initial_weight,
            "growth": self.growth,
            "normalization": self.normalization,
        }

    def register(self, item: int) -> None:
        if item not in self.items:
            self.items.add(item)
            insort(self._sorted_items, item)

    def match(self, context: Sequence[int]) -> list[CtNode]:
        """Root plus every existing node along the reversed context. Read-only."""
        node = self.root
        path = [node]
        limit = min(len(context), self.max_depth)
        for depth in range(1, limit + 1):
            node = node.children.get(context[-depth])
            if node is None:
                break
            path.append(node)
        self.last_visits = len(path)
        return path

    def _grow(self, path: list[CtNode], context: Sequence[int]) -> None:
        limit = min(len(context), self.max_depth)
        node = path[-1]
        depth = node.depth
        while depth < limit:
            depth += 1
            symbol = context[-depth]
            child = CtNode(symbol, node, self.initial_weight)
            node.children[symbol] = child
            self.node_count += 1
            path.append(child)
            node = child
            if self.growth == "one":
                break

    def observe(self, context: Sequence[int], item: int) -> float:
        """Learn that ``item`` followed ``context``.

        Returns the probability the model gave ``item`` beforehand, i.e.
        the value ``recommend`` would have ranked by.
        """
        self.register(item)
        n = len(self.items)
        a0 = self.alpha0
        literal = self._literal
        path = self.match(context)
        matched = len(path)
        self._grow(path, context)
        # predict -> update weights -> update counts
        q = path[0].prob(item, n, a0, literal)
        q_pred = q
        for i in range(1, len(path)):
            node = path[i]
            w = node.weight
            p = (node.counts.get(item, 0) + a0) / node.denominator(n, a0, literal)
            qi = w * p + (1.0 - w) * q
            assert qi > 0.0, "mixture assigned zero mass to an observed item"
            node.weight = w * p / qi
            q = qi
            if i < matched:
                q_pred = qi
        for node in path:
            node.add(item)
        self.n_observed += 1
        self.last_visits = len(path)
        return q_pred

    def distribution(self, context: Sequence[int]) -> dict[int, float]:
        if not self.items:
            return {}
        return mix(self.match(context), self._sorted_items, self.alpha0, self._literal)

    def prob(self, context: Sequence[int], item: int) -> float:
        """Mixture probability of one item; zero for items outside the catalog."""
        if item not in self.items:
            return 0.0
        path = self.match(context)
        n = len(self.items)
        a0 = self.alpha0
        lit = self._literal
        q = path[0].prob(item, n, a0, lit)
        for node in path[1:]:
            q = node.weight * node.prob(item, n, a0, lit) + (1.0 - node.weight) * q
        return q

    def recommend(self, context: Sequence[int], k: int) -> RankedList:
        """Top-``k`` items of the mixture for ``context``; ties go to the smaller id."""
        if k < 1:
            raise ValueError("k must be positive")
        if not self.items:
            return []
        path = self.match(context)
        n = len(self.items)
        a0 = self.alpha0
        lit = self._literal
        dens = [node.denominator(n, a0, lit) for node in path]
        weights = [node.weight for node in path]
        # q_D = sum_i coef_i * P_i with coef_i = w_i * prod_{j>i} (1 - w_j); the
        # count-driven part of that sum selects candidates, the recursion ranks them
        factors = [0.0] * len(path)
        tail = 1.0
        for i in range(len(path) - 1, 0, -1):
            factors[i] = weights[i] * tail / dens[i]
            tail *= 1.0 - weights[i]
        factors[0] = tail / dens[0]

        scores: dict[int, float] = {}
        big = []
        for f, node in zip(factors, path):
            if f <= 0.0:
                continue
            if node.ranked is None:
                get = scores.get
                for x, c in node.counts.items():
                    scores[x] = get(x, 0.0) + f * c
            else:
                big.append((f, node))
        if big:
            big_counts = [(f, node.counts) for f, node in big]
            for x in scores:
                for f, counts in big_counts:
                    c = counts.get(x)
                    if c:
                        scores[x] += f * c
            # threshold algorithm over the count-ordered lists of large experts
            cursors = [iter(node.ranked) for _, node in big]
            heads = [next(it, None) for it in cursors]
            while True:
                threshold = 0.0
                live = False
                for (f, _), head in zip(big, heads):
                    if head is not None:
                        threshold -= f * head[0]
                        live = True
                if not live:
                    break
                if len(scores) >= k and heapq.nlargest(k, scores.values())[-1] > threshold * (1.0 + 1e-9):
                    break
                for j, it in enumerate(cursors):
                    for _ in range(k):
                        head = heads[j]
                        if head is None:
                            break
                        x = head[1]
                        if x not in scores:
                            s = 0.0
                            for f, counts in big_counts:
                                c = counts.get(x)
                                if c:
                                    s += f * c
                            scores[x] = s
                        heads[j] = next(it, None)
        if len(scores) > k:
            cut = heapq.nlargest(k, scores.values())[-1] * (1.0 - 1e-9)
            candidates = [x for x, s in scores.items() if s >= cut]
        else:
            candidates = list(scores)

        root_get = path[0].counts.get
        den0 = dens[0]
        # same arithmetic as mix(), so rankings agree with distribution() exactly
        deeper = [(path[i].counts.get, weights[i], 1.0 - weights[i], dens[i]) for i in range(1, len(path))]

        def exact(x: int) -> float:
            q = (root_get(x, 0) + a0) / den0
            for get, w, rest, den in deeper:
                q = w * ((get(x, 0) + a0) / den) + rest * q
            return q

        ranked = sorted((-exact(x), x) for x in candidates)[:k]
        out = [(x, -neg) for neg, x in ranked]
        if len(out) < k:
            base = exact(-1)
            for x in self._sorted_items:
                if x not in scores:
                    out.append((x, base))
                    if len(out) == k:
                        break
        return out

    # snapshots

    def nodes(self) -> list[CtNode]:
        """Nodes in depth-first pre-order, children in insertion order."""
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            out.append(node)
            stack.extend(reversed(node.children.values()))
        return out

    def to_dict(self) -> dict:
        index: dict[int, int] = {}
        rows = []
        for i, node in enumerate(self.nodes()):
            index[id(node)] = i
            parent = -1 if node.parent is None else index[id(node.parent)]
            rows.append([parent, node.symbol, node.weight, [[x, c] for x, c in node.counts.items()]])
        return {
            "params": self.params(),
            "items": list(self._sorted_items),
            "n_observed": self.n_observed,
            "nodes": rows,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> ContextTree:
        tree = cls(**payload["params"])
        tree.items = set(payload["items"])
        tree._sorted_items = sorted(tree.items)
        tree.n_observed = payload["n_observed"]
        nodes: list[CtNode] = []
        for parent, symbol, weight, counts in payload["nodes"]:
            if parent < 0:
                if nodes:
                    raise SnapshotError("snapshot has more than one root")
                node = tree.root
                node.weight = weight
            else:
                if not 0 <= parent < len(nodes):
                    raise SnapshotError(f"node refers to unknown parent {parent}")
                up = nodes[parent]
                node = CtNode(symbol, up, weight)
                up.children[symbol] = node
            for x, c in counts:
                node.add(x, c)
            nodes.append(node)
        if not nodes:
            raise SnapshotError("snapshot has no nodes")
        tree.node_count = len(nodes)
        return tree

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload["extra"] = extra
        body = _canonical(payload)
        doc = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "sha256": hashlib.sha256(body.encode()).hexdigest(),
            "payload": payload,
        }
        Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> ContextTree:
        tree, _ = load_snapshot(path)
        return tree


def _canonical(payload: dict) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"))


def load_snapshot(path: str | Path) -> tuple[ContextTree, dict]:
    """Read a snapshot; returns the tree and any extra metadata stored with it."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable snapshot ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != SNAPSHOT_FORMAT:
        raise SnapshotError(f"{path}: not a context-tree snapshot")
    if doc.get("version") != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: unsupported snapshot version {doc.get('version')}")
    payload = doc.get("payload")
    if not isinstance(payload, dict) or hashlib.sha256(_canonical(payload).encode()).hexdigest() != doc.get("sha256"):
        raise ChecksumError(f"{path}: checksum mismatch")
    return ContextTree.from_dict(payload), payload.get("extra", {})


class CTRecommender(Recommender):
    name = "ct"

    def __init__(self, tree: ContextTree | None = None, **params):
        self.tree = tree if tree is not None else ContextTree(**params)

    def update(self, session_id: str, context: Sequence[int], item: int) -> None:
        self.tree.observe(context, item)

    def recommend(self, session_id: str, context: Sequence[int], k: int) -> RankedList:
        return self.tree.recommend(context, k)

    def state(self) -> str:
        return _canonical(self.tree.to_dict())
