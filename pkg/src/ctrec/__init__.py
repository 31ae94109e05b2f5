"""Context-tree session recommender, nearest-neighbour baselines and replay evaluation."""

from .base import RankedList, Recommender, top_k
from .ctree import ContextTree, CTRecommender, CtNode, Expert, expert_predict, load_snapshot, mix, update_weights
from .data import Dataset, DatasetError, EmptyDatasetError, ItemCatalog, Session, from_sessions, ingest, preprocess, split_static
from .evaluation import EvalReport, evaluate_adaptive, evaluate_static, freshness_curves, hit_and_rank
from .heuristics import FreshRec, PopularRec, RandomRec
from .knn import SKNN, SSKNN, ItemKNN, SessionStore

__version__ = "0.1.0"
