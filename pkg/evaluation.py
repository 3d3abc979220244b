"""
Corpus-level metrics for re-ranked lists

HR@K, NDCG@K, Div@K, Nov@K, the F_beta trade-off and the 3-D hypervolume
indicator used by the ablation reports.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from pymoo.indicators.hv import HV

from domain_model import ItemId, ItemMeta, SolutionList, UserId, eval_diversity, eval_novelty
from error_handling import DataError

logger = logging.getLogger(__name__)


def _rank_of(items: Sequence[ItemId], positive: ItemId, k: int) -> Optional[int]:
    """1-based rank of the positive within the top k, or None"""
    for pos, item in enumerate(items[:k]):
        if item == positive:
            return pos + 1
    return None


def _require_users(lists: Mapping[UserId, SolutionList]):
    if not lists:
        raise DataError("No users to evaluate")


def hr_at_k(lists: Mapping[UserId, SolutionList], positives: Mapping[UserId, ItemId], k: int) -> float:
    """Fraction of users whose positive is in the top k"""
    _require_users(lists)
    hits = sum(1 for u, items in lists.items() if _rank_of(items, positives[u], k) is not None)
    return hits / len(lists)


def ndcg_at_k(lists: Mapping[UserId, SolutionList], positives: Mapping[UserId, ItemId], k: int) -> float:
    """Mean 1/log2(rank+1) of the positive, 0 when outside the top k"""
    _require_users(lists)
    total = 0.0
    for u, items in lists.items():
        rank = _rank_of(items, positives[u], k)
        if rank is not None:
            total += 1.0 / math.log2(rank + 1)
    return total / len(lists)


def div_at_k(lists: Mapping[UserId, SolutionList], meta: Mapping[ItemId, ItemMeta], k: int,
             total_categories: int) -> float:
    _require_users(lists)
    return float(np.mean([eval_diversity(items[:k], meta, total_categories) for items in lists.values()]))


def nov_at_k(lists: Mapping[UserId, SolutionList], meta: Mapping[ItemId, ItemMeta], k: int,
             mode: str = "normalized", max_pop: Optional[int] = None) -> float:
    _require_users(lists)
    return float(np.mean([eval_novelty(items[:k], meta, mode, max_pop) for items in lists.values()]))


def f_beta(hr: float, div: float, nov: float, beta: float = 1.0) -> float:
    """
    Three-way trade-off of accuracy against diversity and novelty

    (1 + 2 beta^2) hr div nov / (hr + beta^2 div + beta^2 nov); 0 when the
    denominator vanishes.
    """
    b2 = beta * beta
    denominator = hr + b2 * div + b2 * nov
    if denominator == 0:
        return 0.0
    return (1.0 + 2.0 * b2) * hr * div * nov / denominator


def hypervolume_3d(points, reference=(0.0, 0.0, 0.0)) -> float:
    """
    Exact volume dominated by a set of maximized objective vectors

    Raises:
        DataError: if any point lies below the reference on some objective
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    reference = np.asarray(reference, dtype=float)
    if len(points) == 0:
        return 0.0
    below = np.any(points < reference, axis=1)
    if below.any():
        raise DataError(f"{int(below.sum())} point(s) lie below the hypervolume reference {reference.tolist()}",
                        offenders=points[below].tolist())
    # zero-extent points add no volume
    points = points[np.all(points > reference, axis=1)]
    if len(points) == 0:
        return 0.0
    # pymoo minimizes; negate to flip orientation
    return float(HV(ref_point=-reference)(-np.unique(points, axis=0)))


def fbeta_key(beta: float) -> str:
    return f"f{beta:g}"


@dataclass
class MetricsReport:
    """Aggregate metrics per cutoff plus optional per-user rows"""
    values: Dict[int, Dict[str, float]]
    n_users: int
    seed: Optional[int] = None
    config_hash: Optional[str] = None
    method: str = "pareto"
    per_user: List[Dict[str, float]] = field(default_factory=list)

    def metric(self, name: str, k: int) -> float:
        return self.values[k][name]


def per_user_rows(lists: Mapping[UserId, SolutionList], positives: Mapping[UserId, ItemId],
                  meta: Mapping[ItemId, ItemMeta], cutoffs: Sequence[int], total_categories: int,
                  novelty_mode: str, max_pop: Optional[int], betas: Sequence[float]) -> List[Dict[str, float]]:
    """One row per user with hr/ndcg/div/nov/F_beta at every cutoff"""
    rows = []
    for user in sorted(lists):
        items = lists[user]
        row: Dict[str, float] = {"user": user}
        for k in cutoffs:
            rank = _rank_of(items, positives[user], k)
            hr = 1.0 if rank is not None else 0.0
            div = eval_diversity(items[:k], meta, total_categories)
            nov = eval_novelty(items[:k], meta, novelty_mode, max_pop)
            row[f"hr@{k}"] = hr
            row[f"ndcg@{k}"] = 1.0 / math.log2(rank + 1) if rank is not None else 0.0
            row[f"div@{k}"] = div
            row[f"nov@{k}"] = nov
            for beta in betas:
                row[f"{fbeta_key(beta)}@{k}"] = f_beta(hr, div, nov, beta)
        rows.append(row)
    return rows


def compute_report(lists: Mapping[UserId, SolutionList], positives: Mapping[UserId, ItemId],
                   meta: Mapping[ItemId, ItemMeta], total_categories: int,
                   cutoffs: Sequence[int] = (5, 10), betas: Sequence[float] = (1.0, 2.0),
                   novelty_mode: str = "normalized", max_pop: Optional[int] = None,
                   per_user_fbeta: bool = False, seed: Optional[int] = None,
                   config_hash: Optional[str] = None, method: str = "pareto") -> MetricsReport:
    """
    Metrics at every cutoff

    F_beta is computed from the corpus means of hr, div and nov unless
    per_user_fbeta is set, in which case per-user F_beta values are averaged.
    """
    _require_users(lists)
    rows = per_user_rows(lists, positives, meta, cutoffs, total_categories, novelty_mode, max_pop, betas)
    values: Dict[int, Dict[str, float]] = {}
    for k in cutoffs:
        entry = {
            "hr": hr_at_k(lists, positives, k),
            "ndcg": ndcg_at_k(lists, positives, k),
            "div": div_at_k(lists, meta, k, total_categories),
            "nov": nov_at_k(lists, meta, k, novelty_mode, max_pop),
        }
        for beta in betas:
            key = fbeta_key(beta)
            if per_user_fbeta:
                entry[key] = float(np.mean([row[f"{key}@{k}"] for row in rows]))
            else:
                entry[key] = f_beta(entry["hr"], entry["div"], entry["nov"], beta)
        values[k] = entry
    logger.info(f"Evaluated {len(lists)} users at cutoffs {list(cutoffs)}")
    return MetricsReport(values, len(lists), seed, config_hash, method, rows)


@dataclass
class PairedComparison:
    """Per-user comparison of one indicator between two runs"""
    wins: int
    ties: int
    losses: int
    mean_a: float
    mean_b: float

    @property
    def n_users(self) -> int:
        return self.wins + self.ties + self.losses

    @property
    def win_rate(self) -> float:
        return self.wins / self.n_users if self.n_users else 0.0


def paired_comparison(a: Mapping[UserId, float], b: Mapping[UserId, float],
                      tolerance: float = 1e-12) -> PairedComparison:
    """Wins, ties and losses of run a against run b over their common users"""
    users = sorted(set(a) & set(b))
    if not users:
        raise DataError("Runs share no users")
    diffs = np.array([a[u] - b[u] for u in users])
    return PairedComparison(
        wins=int(np.sum(diffs > tolerance)),
        ties=int(np.sum(np.abs(diffs) <= tolerance)),
        losses=int(np.sum(diffs < -tolerance)),
        mean_a=float(np.mean([a[u] for u in users])),
        mean_b=float(np.mean([b[u] for u in users])),
    )
