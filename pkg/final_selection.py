"""
Final list selection: Pareto front extraction and angle-based matching of
front members to anchor objective vectors.
"""

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from domain_model import ObjectiveVector
from error_handling import ConfigurationError, InvalidSolutionError
from evaluation import f_beta
from evolution import Individual, Population, pareto_members
from knowledge_transfer import Anchor, AnchorSet
from preference_builder import partition_population


@dataclass
class Selection:
    """Per-region picks plus the designated default"""
    user: int
    per_cluster: Dict[int, Individual]
    default_cluster: int

    @property
    def default(self) -> Individual:
        return self.per_cluster[self.default_cluster]


def pareto_front(pop: Population) -> List[Individual]:
    """Exactly the rank-0 members"""
    return pareto_members(pop.members)


def angle(a, b) -> float:
    """Angle between two objective vectors; pi when a is the zero vector"""
    a = np.asarray(tuple(a), dtype=float)
    b = np.asarray(tuple(b), dtype=float)
    norm_b = np.linalg.norm(b)
    if norm_b == 0:
        raise ConfigurationError("Anchor objective vector has zero norm")
    norm_a = np.linalg.norm(a)
    if norm_a == 0:
        return math.pi
    cosine = float(np.dot(a, b) / (norm_a * norm_b))
    return math.acos(min(1.0, max(-1.0, cosine)))


def fallback_anchors(pop: Population, n_clusters: int) -> AnchorSet:
    """
    Anchors when no transfer round ran: mean objectives of each accuracy-sorted region
    """
    n_clusters = min(n_clusters, len(pop.members))
    anchors = []
    for cluster, members in enumerate(partition_population(pop.members, n_clusters)):
        mean = np.mean([m.objectives.as_array() for m in members], axis=0)
        anchors.append(Anchor(cluster, (), ObjectiveVector(*(float(x) for x in mean))))
    return AnchorSet(pop.user, anchors)


def select_final(front: Sequence[Individual], anchor_set: AnchorSet,
                 default_cluster: Optional[int] = None, beta: float = 1.0) -> Selection:
    """
    Closest front member (by angle) to every anchor

    Ties go to higher accuracy, then lower front index. The default region is
    the pinned one, else the anchor with the best F_beta of its objectives.
    """
    if not front:
        raise InvalidSolutionError(f"Empty Pareto front for user {anchor_set.user}", user=anchor_set.user)
    if not anchor_set.anchors:
        raise ConfigurationError(f"No anchors for user {anchor_set.user}")

    per_cluster: Dict[int, Individual] = {}
    for anchor in anchor_set.anchors:
        best = min(range(len(front)),
                   key=lambda j: (angle(front[j].objectives, anchor.objectives),
                                  -front[j].objectives.acc, j))
        per_cluster[anchor.cluster] = front[best]

    if default_cluster is None:
        default_cluster = min(
            anchor_set.anchors,
            key=lambda a: (-f_beta(a.objectives.acc, a.objectives.div, a.objectives.nov, beta), a.cluster),
        ).cluster
    elif default_cluster not in per_cluster:
        raise ConfigurationError(f"Pinned region {default_cluster} has no anchor",
                                 key="selection.default_lambda")
    return Selection(anchor_set.user, per_cluster, default_cluster)
