"""
Core domain types for the Pareto re-ranking engine
Identifiers, candidate sets, the three list objectives and Pareto dominance.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, Mapping, Optional, Sequence, Tuple

import numpy as np

from error_handling import DataError, InvalidSolutionError

ItemId = int
UserId = int
CategoryId = int
SolutionList = Tuple[ItemId, ...]


@dataclass(frozen=True, eq=False)
class ItemMeta:
    """Per-item metadata: categories, training popularity and feature vector"""
    item: ItemId
    categories: FrozenSet[CategoryId]
    pop_count: int
    feature: np.ndarray

    def __post_init__(self):
        if not self.categories:
            raise DataError(f"Item {self.item} has no categories", offenders=[self.item])
        if self.pop_count < 1:
            raise DataError(f"Item {self.item} has pop_count {self.pop_count} < 1",
                            offenders=[self.item])


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ordered pool of scored items for one user"""
    user: UserId
    items: Tuple[ItemId, ...]
    scores: Tuple[float, ...]
    positive_item: ItemId
    _position: Dict[ItemId, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise DataError(f"User {self.user}: {len(self.items)} items but {len(self.scores)} scores")
        position = {item: idx for idx, item in enumerate(self.items)}
        if len(position) != len(self.items):
            raise DataError(f"User {self.user}: duplicate items in candidate set")
        if self.positive_item not in position:
            raise DataError(f"User {self.user}: positive item {self.positive_item} not in candidates",
                            offenders=[(self.user, self.positive_item)])
        bad = [item for item, s in zip(self.items, self.scores) if not 0.0 <= s <= 1.0]
        if bad:
            raise DataError(f"User {self.user}: base scores outside [0, 1] for items {bad[:20]}",
                            offenders=[(self.user, item) for item in bad[:20]])
        object.__setattr__(self, "_position", position)

    def __len__(self) -> int:
        return len(self.items)

    def __contains__(self, item: ItemId) -> bool:
        return item in self._position

    def index_of(self, item: ItemId) -> int:
        return self._position[item]

    def score_of(self, item: ItemId) -> float:
        try:
            return self.scores[self._position[item]]
        except KeyError:
            raise InvalidSolutionError(f"Item {item} is not a candidate of user {self.user}",
                                       user=self.user, item=item) from None

    def with_scores(self, scores: Sequence[float]) -> 'CandidateSet':
        """Same pool with new base scores"""
        return CandidateSet(self.user, self.items, tuple(float(s) for s in scores), self.positive_item)

    def ranked_items(self) -> Tuple[ItemId, ...]:
        """Items by descending base score, ties by ascending id"""
        return tuple(sorted(self.items, key=lambda i: (-self.score_of(i), i)))


@dataclass(frozen=True)
class ObjectiveVector:
    """Accuracy, diversity and novelty of one list (all maximized)"""
    acc: float
    div: float
    nov: float

    def __iter__(self) -> Iterator[float]:
        return iter((self.acc, self.div, self.nov))

    def as_array(self) -> np.ndarray:
        return np.array([self.acc, self.div, self.nov], dtype=float)


def validate_solution(items: Sequence[ItemId], cand: CandidateSet, k: int) -> SolutionList:
    """Check length, uniqueness and membership; returns the list as a tuple"""
    items = tuple(items)
    if len(items) != k:
        raise InvalidSolutionError(f"List for user {cand.user} has length {len(items)}, expected {k}",
                                   user=cand.user)
    if len(set(items)) != k:
        raise InvalidSolutionError(f"List for user {cand.user} contains duplicates", user=cand.user)
    for item in items:
        if item not in cand:
            raise InvalidSolutionError(f"Item {item} is not a candidate of user {cand.user}",
                                       user=cand.user, item=item)
    return items


def _meta_for(item: ItemId, meta: Mapping[ItemId, ItemMeta]) -> ItemMeta:
    try:
        return meta[item]
    except KeyError:
        raise DataError(f"Missing metadata for item {item}", offenders=[item]) from None


def eval_accuracy(items: Sequence[ItemId], cand: CandidateSet) -> float:
    """Mean base score of the listed items"""
    return sum(cand.score_of(i) for i in items) / len(items)


def eval_diversity(items: Sequence[ItemId], meta: Mapping[ItemId, ItemMeta],
                   total_categories: int) -> float:
    """Share of all categories covered by the list"""
    if total_categories < 1:
        raise DataError("total_categories must be at least 1")
    covered = set()
    for item in items:
        covered.update(_meta_for(item, meta).categories)
    return len(covered) / total_categories


def eval_novelty(items: Sequence[ItemId], meta: Mapping[ItemId, ItemMeta], mode: str = "normalized",
                 max_pop: Optional[int] = None) -> float:
    """
    Long-tail preference of a list

    Args:
        mode: 'literal' averages 1/pop_count; 'normalized' averages 1 - pop_count/max_pop
        max_pop: run-wide maximum pop_count (defaults to the maximum over meta)
    """
    pops = [_meta_for(item, meta).pop_count for item in items]
    if mode == "literal":
        return sum(1.0 / p for p in pops) / len(pops)
    if mode == "normalized":
        if max_pop is None:
            max_pop = max(m.pop_count for m in meta.values())
        return sum(1.0 - p / max_pop for p in pops) / len(pops)
    raise ValueError(f"Unknown novelty mode: {mode}")


def evaluate(items: Sequence[ItemId], cand: CandidateSet, meta: Mapping[ItemId, ItemMeta],
             total_categories: int, novelty_mode: str = "normalized",
             max_pop: Optional[int] = None) -> ObjectiveVector:
    """All three objectives of one list"""
    return ObjectiveVector(
        acc=eval_accuracy(items, cand),
        div=eval_diversity(items, meta, total_categories),
        nov=eval_novelty(items, meta, novelty_mode, max_pop),
    )


class ObjectiveEvaluator:
    """Evaluates lists against fixed run-wide metadata"""

    def __init__(self, meta: Mapping[ItemId, ItemMeta], total_categories: int,
                 novelty_mode: str = "normalized"):
        if not meta:
            raise DataError("Item metadata is empty")
        self.meta = meta
        self.total_categories = total_categories
        self.novelty_mode = novelty_mode
        self.max_pop = max(m.pop_count for m in meta.values())

    def evaluate(self, items: Sequence[ItemId], cand: CandidateSet) -> ObjectiveVector:
        return evaluate(items, cand, self.meta, self.total_categories,
                        self.novelty_mode, self.max_pop)


def dominates(a: Iterable[float], b: Iterable[float]) -> bool:
    """True iff a is no worse everywhere and strictly better somewhere (maximization)"""
    a, b = tuple(a), tuple(b)
    return all(x >= y for x, y in zip(a, b)) and any(x > y for x, y in zip(a, b))
