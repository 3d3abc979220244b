"""
Turns a user's population into supervised examples for the scorer

The population is sorted by accuracy and split into equal-sized preference
regions; within a region, each item's occurrence count is softmax-normalized
into a soft label.
"""

from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from domain_model import CandidateSet, ItemId, ItemMeta, UserId
from error_handling import ConfigurationError, DataError, InvalidSolutionError, NumericalError
from evolution import Individual, Population

LABEL_SUM_TOLERANCE = 1e-9


@dataclass(frozen=True, eq=False)
class PreferenceExample:
    """One (user, region, item) training row; features are [x_i | one-hot(region)]"""
    user: UserId
    user_index: int
    cluster: int
    item: ItemId
    features: np.ndarray
    label: float


def partition_population(members: Sequence[Individual], n_clusters: int) -> List[List[Individual]]:
    """
    Accuracy-sorted contiguous split into n_clusters groups

    Sizes differ by at most one; the remainder goes to the earliest
    (highest-accuracy) groups.
    """
    members = list(members)
    if n_clusters < 1 or len(members) < n_clusters:
        raise ConfigurationError(
            f"Cannot split {len(members)} solutions into {n_clusters} clusters", key="builder.n_clusters")
    order = sorted(range(len(members)), key=lambda i: (-members[i].objectives.acc, i))
    base, extra = divmod(len(members), n_clusters)
    clusters, start = [], 0
    for c in range(n_clusters):
        size = base + (1 if c < extra else 0)
        clusters.append([members[i] for i in order[start:start + size]])
        start += size
    return clusters


def item_frequencies(cluster: Sequence[Individual]) -> Dict[ItemId, int]:
    """Number of solutions in the cluster containing each item"""
    counts = Counter()
    for ind in cluster:
        counts.update(set(ind.items))
    return {item: counts[item] for item in sorted(counts)}


def soft_labels(freqs: Mapping[ItemId, int]) -> Dict[ItemId, float]:
    """Softmax over occurrence counts (max-shifted)"""
    if not freqs:
        raise ValueError("soft_labels needs at least one item")
    items = list(freqs)
    counts = np.array([freqs[i] for i in items], dtype=float)
    weights = np.exp(counts - counts.max())
    labels = weights / weights.sum()
    return {item: float(label) for item, label in zip(items, labels)}


def one_hot(index: int, size: int) -> np.ndarray:
    vec = np.zeros(size)
    vec[index] = 1.0
    return vec


def build_examples(pop: Population, cand: CandidateSet, meta: Mapping[ItemId, ItemMeta],
                   n_clusters: int, user_index: int) -> List[PreferenceExample]:
    """Examples for every (region, unique item) pair, region-major and item-id-minor"""
    examples: List[PreferenceExample] = []
    for cluster_idx, cluster in enumerate(partition_population(pop.members, n_clusters)):
        labels = soft_labels(item_frequencies(cluster))
        region = one_hot(cluster_idx, n_clusters)
        for item, label in labels.items():
            if item not in cand:
                raise InvalidSolutionError(
                    f"Item {item} in population of user {pop.user} is not a candidate",
                    user=pop.user, item=item)
            try:
                x = meta[item].feature
            except KeyError:
                raise DataError(f"Missing feature for item {item}", offenders=[item]) from None
            examples.append(PreferenceExample(
                user=pop.user, user_index=user_index, cluster=cluster_idx, item=item,
                features=np.concatenate([x, region]), label=label))
    return examples


def label_sums(examples: Sequence[PreferenceExample]) -> Dict[Tuple[UserId, int], float]:
    """Soft-label mass per (user, region)"""
    sums: Dict[Tuple[UserId, int], float] = {}
    for ex in examples:
        key = (ex.user, ex.cluster)
        sums[key] = sums.get(key, 0.0) + ex.label
    return sums


def check_label_sums(examples: Sequence[PreferenceExample]) -> None:
    """Raise if any region's labels do not sum to one"""
    for (user, cluster), total in label_sums(examples).items():
        if abs(total - 1.0) > LABEL_SUM_TOLERANCE:
            raise NumericalError(f"Labels of user {user}, region {cluster} sum to {total!r}",
                                 diagnostic={"user": user, "cluster": cluster, "sum": total})


def stack_examples(examples: Sequence[PreferenceExample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(features, user indices, labels) arrays for training"""
    if not examples:
        raise ValueError("No examples to stack")
    features = np.vstack([ex.features for ex in examples])
    users = np.array([ex.user_index for ex in examples], dtype=np.int64)
    labels = np.array([ex.label for ex in examples], dtype=float)
    return features, users, labels
