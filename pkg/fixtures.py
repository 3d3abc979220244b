"""
Shared builders for the test suites: small item catalogs, candidate sets and
fast run configurations.
"""

from typing import Dict, Tuple

import numpy as np

from config import RerankConfig
from domain_model import CandidateSet, ItemMeta, ObjectiveEvaluator


def make_meta(n_items: int = 40, n_categories: int = 5, feature_dim: int = 4,
              seed: int = 0) -> Dict[int, ItemMeta]:
    rng = np.random.default_rng(seed)
    meta = {}
    for item in range(n_items):
        cats = frozenset({item % n_categories, (item * 7 + 1) % n_categories})
        meta[item] = ItemMeta(item, cats, 1 + (item * 13) % 50, rng.normal(size=feature_dim))
    return meta


def make_candidates(meta: Dict[int, ItemMeta], n_users: int = 4, n_candidates: int = 20,
                    seed: int = 0) -> Dict[int, CandidateSet]:
    rng = np.random.default_rng(seed + 1000)
    items = sorted(meta)
    candidates = {}
    for user in range(n_users):
        pool = tuple(int(i) for i in rng.choice(items, size=n_candidates, replace=False))
        scores = tuple(float(s) for s in rng.uniform(0.0, 1.0, size=n_candidates))
        candidates[user] = CandidateSet(user, pool, scores, pool[0])
    return candidates


def make_world(n_users: int = 4, n_items: int = 40, n_categories: int = 5, n_candidates: int = 20,
               seed: int = 0) -> Tuple[Dict[int, ItemMeta], Dict[int, CandidateSet], ObjectiveEvaluator]:
    meta = make_meta(n_items, n_categories, seed=seed)
    candidates = make_candidates(meta, n_users, n_candidates, seed)
    return meta, candidates, ObjectiveEvaluator(meta, n_categories)


def small_config(**run) -> RerankConfig:
    """Settings small enough for unit tests to finish in seconds"""
    config = RerankConfig()
    config.update_from_dict({
        "evolution": {"pop_size": 12, "generations": 4, "list_length": 5,
                      "n_user_clusters": 2, "init_generations": 2},
        "builder": {"n_clusters": 3},
        "scorer": {"hidden1": 8, "hidden2": 4, "user_embedding_dim": 3,
                   "epochs": 2, "batch_size": 32, "learning_rate": 0.01},
        "transfer": {"interval": 2},
        "data": {"n_negatives": 19, "synthetic_users": 12, "synthetic_items": 150,
                 "synthetic_categories": 6},
        "run": dict({"threads": 1}, **run),
        "log_to_file": False,
        "enable_performance_monitoring": False,
    })
    return config
