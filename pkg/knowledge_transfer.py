"""
Knowledge transfer from the shared scorer back into user populations
For every preference region the scorer's top-K candidates form one synthetic
list (an anchor); anchors are merged into the population without replacement.
"""

from dataclasses import dataclass
from typing import List, Mapping

import numpy as np

from domain_model import CandidateSet, ItemId, ItemMeta, ObjectiveEvaluator, ObjectiveVector, SolutionList, UserId
from evolution import Individual, Population
from pareto_net import ScorerParams, predict_scores


@dataclass(frozen=True)
class Anchor:
    """Synthetic list of one preference region and its objectives"""
    cluster: int
    items: SolutionList
    objectives: ObjectiveVector


@dataclass(frozen=True)
class AnchorSet:
    user: UserId
    anchors: List[Anchor]

    def __len__(self) -> int:
        return len(self.anchors)


def top_k(scores: Mapping[ItemId, float], k: int) -> SolutionList:
    """k highest scores, descending; ties by ascending item id"""
    items = np.fromiter(scores.keys(), dtype=np.int64, count=len(scores))
    values = np.fromiter(scores.values(), dtype=float, count=len(scores))
    order = np.lexsort((items, -values))[:k]
    return tuple(int(i) for i in items[order])


def synthesize_solution(params: ScorerParams, user_index: int, cluster: int, n_clusters: int,
                        cand: CandidateSet, meta: Mapping[ItemId, ItemMeta], k: int) -> SolutionList:
    """Top-k list under one (user, region) context"""
    return top_k(predict_scores(params, user_index, cluster, n_clusters, cand, meta), k)


def knowledge_transfer(params: ScorerParams, user_index: int, cand: CandidateSet,
                       evaluator: ObjectiveEvaluator, n_clusters: int, k: int) -> AnchorSet:
    """One evaluated anchor per preference region"""
    anchors = []
    for cluster in range(n_clusters):
        items = synthesize_solution(params, user_index, cluster, n_clusters, cand, evaluator.meta, k)
        anchors.append(Anchor(cluster, items, evaluator.evaluate(items, cand)))
    return AnchorSet(cand.user, anchors)


def merge(pop: Population, anchor_set: AnchorSet) -> Population:
    """Population plus anchors, exact-duplicate lists dropped; no truncation"""
    seen = {m.items for m in pop.members}
    members = list(pop.members)
    for anchor in anchor_set.anchors:
        if anchor.items not in seen:
            seen.add(anchor.items)
            members.append(Individual(anchor.items, anchor.objectives))
    return Population(pop.user, members, pop.capacity)
