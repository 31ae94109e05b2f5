"""Command line: ``ctrec {stats,eval,sweep,snapshot,restore,convert-rsc15}``.

Exit codes: 0 success, 1 runtime failure, 2 usage, configuration or input error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

from .base import Recommender
from .ctree import CTRecommender, SnapshotError, load_snapshot
from .data import Dataset, DatasetError, convert_rsc15, ingest, last_day_boundary, preprocess, split_static
from .evaluation import EvaluationError, evaluate_adaptive, evaluate_static, write_report
from .heuristics import FreshRec, PopularRec, RandomRec
from .knn import SKNN, SSKNN, ItemKNN

MODELS = ("ct", "itemknn", "sknn", "ssknn", "popular", "fresh", "random")
PROTOCOLS = ("static", "adaptive")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dataset: str = ""
    model: str = "ct"
    protocol: str = "adaptive"
    out: str = "reports"
    # preprocessing
    min_session_len: int = 3
    min_item_views: int = 0
    dedup: str = "none"
    # static split; boundary defaults to one test_span before the last event
    boundary: int | None = None
    test_span_ms: int = 86_400_000
    # context tree
    max_depth: int = 50
    alpha0: float = 1.0
    initial_weight: float = 0.1
    growth: str = "one"
    normalization: str = "dirichlet"
    # neighbourhood; None picks the per-model default
    k_neighbors: int | None = None
    capacity: int | None = None
    exclude_current: bool = False
    # heuristics
    window: int = 100
    seed: int = 0
    # evaluation
    ks: list[int] = field(default_factory=lambda: [5, 20])
    tail_exclude: int = 20
    tail_mode: str = "target"
    buckets: int = 10

    def validate(self) -> RunConfig:
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unknown protocol {self.protocol!r}")
        if not self.dataset:
            raise ConfigError("a dataset path is required")
        for name in ("min_session_len", "max_depth", "window", "buckets", "test_span_ms"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("k_neighbors", "capacity"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ConfigError(f"{name} must be positive")
        if self.alpha0 <= 0:
            raise ConfigError("alpha0 must be positive")
        if not 0 <= self.initial_weight <= 1:
            raise ConfigError("initial_weight must lie in [0, 1]")
        if self.min_item_views < 0 or self.tail_exclude < 0:
            raise ConfigError("min_item_views and tail_exclude must be non-negative")
        if not self.ks or min(self.ks) < 1:
            raise ConfigError("ks must be positive integers")
        if self.dedup not in ("none", "consecutive", "all"):
            raise ConfigError(f"unknown dedup mode {self.dedup!r}")
        if self.growth not in ("one", "full") or self.normalization not in ("dirichlet", "literal"):
            raise ConfigError("growth must be one|full and normalization dirichlet|literal")
        if self.tail_mode not in ("target", "candidates"):
            raise ConfigError(f"unknown tail mode {self.tail_mode!r}")
        return self

    def model_params(self) -> dict:
        if self.model == "ct":
            return {"max_depth": self.max_depth, "alpha0": self.alpha0, "initial_weight": self.initial_weight,
                    "growth": self.growth, "normalization": self.normalization}
        if self.model in ("sknn", "ssknn"):
            k_default, cap_default = (500, 1000) if self.model == "sknn" else (100, 500)
            return {"k_neighbors": self.k_neighbors or k_default, "capacity": self.capacity or cap_default,
                    "exclude_current": self.exclude_current}
        if self.model in ("popular", "random"):
            params = {"window": self.window}
            if self.model == "random":
                params["seed"] = self.seed
            return params
        return {}


def build_model(cfg: RunConfig) -> Recommender:
    params = cfg.model_params()
    return {
        "ct": CTRecommender,
        "itemknn": ItemKNN,
        "sknn": SKNN,
        "ssknn": SSKNN,
        "popular": PopularRec,
        "fresh": FreshRec,
        "random": RandomRec,
    }[cfg.model](**params)


def load_dataset(cfg: RunConfig) -> Dataset:
    d = ingest(cfg.dataset)
    return preprocess(d, min_session_len=cfg.min_session_len, min_item_views=cfg.min_item_views,
                      dedup_within_session=cfg.dedup != "none",
                      dedup_mode=cfg.dedup if cfg.dedup != "none" else "all")


def run(cfg: RunConfig) -> Path:
    """Evaluate one configuration and write its report directory."""
    cfg.validate()
    d = load_dataset(cfg)
    model = build_model(cfg)
    kwargs = dict(ks=cfg.ks, tail_exclude=cfg.tail_exclude, tail_mode=cfg.tail_mode, buckets=cfg.buckets)
    if cfg.protocol == "static":
        boundary = cfg.boundary if cfg.boundary is not None else last_day_boundary(d, cfg.test_span_ms)
        train, test = split_static(d, boundary)
        report = evaluate_static(model, train, test, **kwargs)
        report.meta["boundary"] = boundary
    else:
        report = evaluate_adaptive(model, d, **kwargs)
    report.meta["config"] = {k: v for k, v in asdict(cfg).items() if k != "out"}
    report.meta["model_params"] = cfg.model_params()
    return write_report(report, Path(cfg.out) / cfg.model / cfg.protocol)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, value):
    if name not in _FIELDS:
        raise ConfigError(f"unknown config key {name!r}")
    default = getattr(RunConfig(), name)
    if value is None:
        return None
    if name == "ks":
        if isinstance(value, str):
            value = [v for v in value.split(",") if v.strip()]
        return [int(v) for v in value]
    if name == "exclude_current":
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    try:
        if name in ("boundary", "k_neighbors", "capacity") or isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {value!r} for {name}") from None
    return str(value)


def config_from(args: argparse.Namespace) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold one flat JSON object")
        for key, value in doc.items():
            values[key.replace("-", "_")] = _coerce(key.replace("-", "_"), value)
    for key, value in vars(args).items():
        if key in _FIELDS:
            values[key] = _coerce(key, value)
    return RunConfig(**values)


def _add_run_flags(p: argparse.ArgumentParser, dataset_positional: bool = False) -> None:
    S = argparse.SUPPRESS
    p.add_argument("--config", help="flat JSON object of run settings; flags override it")
    p.add_argument("--dataset", default=S, help="session_id,item_key,timestamp CSV")
    p.add_argument("--model", choices=MODELS, default=S)
    p.add_argument("--protocol", choices=PROTOCOLS, default=S)
    p.add_argument("--out", default=S, help="report root (default: reports)")
    g = p.add_argument_group("preprocessing")
    g.add_argument("--min-session-len", type=int, default=S)
    g.add_argument("--min-item-views", type=int, default=S)
    g.add_argument("--dedup", choices=("none", "consecutive", "all"), default=S)
    g.add_argument("--boundary", type=int, default=S, help="static split timestamp")
    g.add_argument("--test-span-ms", type=int, default=S)
    g = p.add_argument_group("models")
    g.add_argument("--max-depth", type=int, default=S)
    g.add_argument("--alpha0", type=float, default=S)
    g.add_argument("--initial-weight", type=float, default=S)
    g.add_argument("--growth", choices=("one", "full"), default=S)
    g.add_argument("--normalization", choices=("dirichlet", "literal"), default=S)
    g.add_argument("--k-neighbors", type=int, default=S)
    g.add_argument("--capacity", type=int, default=S)
    g.add_argument("--exclude-current", action="store_true", default=S)
    g.add_argument("--window", type=int, default=S)
    g.add_argument("--seed", type=int, default=S)
    g = p.add_argument_group("evaluation")
    g.add_argument("--ks", default=S, help="comma separated cut-offs (default 5,20)")
    g.add_argument("--tail-exclude", type=int, default=S)
    g.add_argument("--tail-mode", choices=("target", "candidates"), default=S)
    g.add_argument("--buckets", type=int, default=S)


def _preprocess_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--min-session-len", type=int, default=3)
    p.add_argument("--min-item-views", type=int, default=0)
    p.add_argument("--dedup", choices=("none", "consecutive", "all"), default="none")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ctrec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="item/event/session counts as JSON")
    p.add_argument("dataset")
    _preprocess_flags(p)
    p.add_argument("--raw", action="store_true", help="skip preprocessing")
    p.add_argument("--split", action="store_true", help="also report the last-day train/test split")
    p.add_argument("--test-span-ms", type=int, default=86_400_000)

    p = sub.add_parser("eval", help="run one evaluation and write reports")
    _add_run_flags(p)

    p = sub.add_parser("sweep", help="evaluate once per value of one parameter")
    _add_run_flags(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma separated")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("snapshot", help="train a context tree on a dataset and save it")
    _add_run_flags(p)
    p.add_argument("--to", required=True, help="snapshot file to write")

    p = sub.add_parser("restore", help="load a snapshot and recommend for a context")
    p.add_argument("path")
    p.add_argument("--context", default="", help="comma separated raw item keys, oldest first")
    p.add_argument("-k", type=int, default=5)

    p = sub.add_parser("convert-rsc15", help="convert yoochoose-clicks.dat to the ingest CSV")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("--limit", type=int, default=None, help="keep only the first N events")
    return parser


def cmd_stats(args: argparse.Namespace) -> int:
    d = ingest(args.dataset)
    if not args.raw:
        d = preprocess(d, args.min_session_len, args.min_item_views, args.dedup != "none",
                       args.dedup if args.dedup != "none" else "all")
    out: dict = d.stats()
    if args.split:
        train, test = split_static(d, last_day_boundary(d, args.test_span_ms))
        out = {"full": out, "train": train.stats(), "test": test.stats()}
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    path = run(config_from(args))
    print(path)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    base = config_from(args)
    name = args.param.replace("-", "_")
    values = [_coerce(name, v) for v in args.values.split(",") if v.strip()]
    configs = [replace(base, **{name: v}, out=str(Path(base.out) / f"{name}={raw.strip()}"))
               for v, raw in zip(values, [r for r in args.values.split(",") if r.strip()])]
    for cfg in configs:
        cfg.validate()
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            paths = list(pool.map(run, configs))
    else:
        paths = [run(cfg) for cfg in configs]
    for p in paths:
        print(p)
    return 0


def cmd_snapshot(args: argparse.Namespace) -> int:
    cfg = replace(config_from(args), model="ct").validate()
    d = load_dataset(cfg)
    model = CTRecommender(**cfg.model_params())
    model.fit(d.sessions)
    model.tree.save(args.to, extra={"item_keys": list(d.catalog.keys)})
    print(json.dumps({"snapshot": args.to, "nodes": model.tree.node_count,
                      "items": model.tree.catalog_size}, sort_keys=True))
    return 0


def cmd_restore(args: argparse.Namespace) -> int:
    tree, extra = load_snapshot(args.path)
    keys = extra.get("item_keys", [])
    index = {str(k): i for i, k in enumerate(keys)}
    context = []
    for key in (c.strip() for c in args.context.split(",")):
        if not key:
            continue
        if key not in index:
            raise ConfigError(f"unknown item {key!r} in context")
        context.append(index[key])
    recs = tree.recommend(context, args.k)
    print(json.dumps({
        "nodes": tree.node_count,
        "items": tree.catalog_size,
        "recommendations": [[keys[x] if x < len(keys) else x, p] for x, p in recs],
    }))
    return 0


def cmd_convert(args: argparse.Namespace) -> int:
    n = convert_rsc15(args.src, args.dst, args.limit)
    print(json.dumps({"events": n}))
    return 0


COMMANDS = {
    "stats": cmd_stats,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "snapshot": cmd_snapshot,
    "restore": cmd_restore,
    "convert-rsc15": cmd_convert,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DatasetError, EvaluationError, FileNotFoundError) as exc:
        print(f"ctrec: error: {exc}", file=sys.stderr)
        if isinstance(exc, ConfigError):
            parser.print_usage(sys.stderr)
        return 2
    except (SnapshotError, OSError) as exc:
        print(f"ctrec: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
