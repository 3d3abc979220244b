"""
Re-ranking strategies for the Pareto re-ranking engine
Provides a common interface for the evolutionary knowledge-transfer loop and
the top-K / MMR baselines.
"""

import logging
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from config import RerankConfig
from domain_model import CandidateSet, ItemId, ItemMeta, ObjectiveEvaluator, SolutionList, UserId
from error_handling import ConfigurationError, StageMonitor, default_thread_count
from evaluation import hypervolume_3d
from evolution import (
    STREAM_EVOLVE, STREAM_SCORER, Individual, Population, evolve_generation,
    guided_init, objective_matrix, pareto_members, random_init, stream_rng,
)
from final_selection import Selection, fallback_anchors, pareto_front, select_final
from knowledge_transfer import AnchorSet, knowledge_transfer, merge
from pareto_net import ScorerParams, init_params, train
from preference_builder import PreferenceExample, build_examples, check_label_sums

HV_REFERENCE = (0.0, 0.0, 0.0)


@dataclass
class RerankResult:
    """Everything a re-ranking run produces"""
    method: str
    lists: Dict[UserId, SolutionList]
    selections: Dict[UserId, Selection] = field(default_factory=dict)
    fronts: Dict[UserId, List[Individual]] = field(default_factory=dict)
    anchors: Dict[UserId, AnchorSet] = field(default_factory=dict)
    hv_trace: List[Tuple[int, float]] = field(default_factory=list)
    loss_trace: List[Tuple[int, int, float]] = field(default_factory=list)
    examples: List[Tuple[int, List[PreferenceExample]]] = field(default_factory=list)
    transfer_rounds: List[int] = field(default_factory=list)
    params: Optional[ScorerParams] = None
    training_seconds: float = 0.0

    def front_hypervolumes(self) -> Dict[UserId, float]:
        return {u: front_hypervolume(front) for u, front in sorted(self.fronts.items())}

    def mean_hypervolume(self) -> float:
        values = list(self.front_hypervolumes().values())
        return float(np.mean(values)) if values else 0.0


def front_hypervolume(members: Sequence[Individual]) -> float:
    """Hypervolume of a front against the origin; a point below it is a DataError"""
    return hypervolume_3d(objective_matrix(members), HV_REFERENCE)


def order_by_score(items: Sequence[ItemId], cand: CandidateSet) -> SolutionList:
    """Descending base score, ties by ascending id"""
    return tuple(sorted(items, key=lambda i: (-cand.score_of(i), i)))


class RerankerBase(ABC):
    """Abstract base class for re-rankers"""

    method = "base"

    def __init__(self, config: RerankConfig):
        self.config = config
        self.logger = logging.getLogger(self.__class__.__name__)
        self.monitor = StageMonitor(config)
        self.threads = config.run.threads or default_thread_count()
        self._executor: Optional[ThreadPoolExecutor] = None
        self.logger.info(f"Initialized {self.__class__.__name__} ({self.threads} threads)")

    @abstractmethod
    def rerank(self, candidates: Mapping[UserId, CandidateSet], meta: Mapping[ItemId, ItemMeta],
               total_categories: int) -> RerankResult:
        """Produce one list per user"""
        pass

    def map(self, fn: Callable, items: Iterable) -> List:
        """Order-preserving map over the worker pool"""
        items = list(items)
        if self.threads <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        if self._executor is None:
            self._executor = ThreadPoolExecutor(max_workers=self.threads)
        return list(self._executor.map(fn, items))

    def cleanup(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None
        self.monitor.log_performance_summary()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()


class TopKReranker(RerankerBase):
    """Top-K by base score"""

    method = "topk"

    def rerank(self, candidates, meta, total_categories) -> RerankResult:
        k = self.config.evolution.list_length
        with self.monitor.stage("topk"):
            lists = {u: c.ranked_items()[:k] for u, c in sorted(candidates.items())}
        return RerankResult(self.method, lists)


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def mmr_select(cand: CandidateSet, meta: Mapping[ItemId, ItemMeta], k: int, lam: float) -> SolutionList:
    """
    Greedy maximal marginal relevance over category-Jaccard similarity

    Each step takes the argmax of lam * score - (1 - lam) * max similarity to
    the items already chosen; ties go to higher score, then lower id.
    """
    remaining = list(cand.ranked_items())
    selected: List[ItemId] = []
    while remaining and len(selected) < k:
        best_key, best_pos = None, None
        for pos, item in enumerate(remaining):
            rel = cand.score_of(item)
            redundancy = max((jaccard(meta[item].categories, meta[s].categories) for s in selected),
                             default=0.0)
            key = (-(lam * rel - (1.0 - lam) * redundancy), -rel, item)
            if best_key is None or key < best_key:
                best_key, best_pos = key, pos
        selected.append(remaining.pop(best_pos))
    return tuple(selected)


class MMRReranker(RerankerBase):
    """Maximal marginal relevance baseline"""

    method = "mmr"

    def __init__(self, config: RerankConfig, lam: Optional[float] = None):
        super().__init__(config)
        self.lam = config.evaluation.mmr_lambda if lam is None else lam

    def rerank(self, candidates, meta, total_categories) -> RerankResult:
        k = self.config.evolution.list_length
        users = sorted(candidates)
        with self.monitor.stage("mmr"):
            lists = self.map(lambda u: mmr_select(candidates[u], meta, k, self.lam), users)
        return RerankResult(self.method, dict(zip(users, lists)))


class ParetoTransferReranker(RerankerBase):
    """
    Per-user NSGA-II with periodic knowledge transfer from a shared scorer

    Every transfer.interval generations all populations are turned into
    preference examples, the scorer is trained on them, and each user's
    population receives one scorer-synthesized list per preference region.
    Final lists are picked from each user's front by angle to the anchors.
    """

    method = "pareto"

    def rerank(self, candidates, meta, total_categories) -> RerankResult:
        cfg = self.config
        evo, seed = cfg.evolution, cfg.run.seed
        interval, n_clusters = cfg.transfer.interval, cfg.builder.n_clusters
        users = sorted(candidates)
        if not users:
            raise ConfigurationError("No users to re-rank")
        user_index = {u: j for j, u in enumerate(users)}
        evaluator = ObjectiveEvaluator(meta, total_categories, evo.novelty_mode)
        rngs = {u: stream_rng(seed, STREAM_EVOLVE, u) for u in users}
        result = RerankResult(self.method, {})

        with self.monitor.stage("init"):
            if evo.guided_init:
                pops = guided_init(candidates, evo, evaluator, rngs, seed, mapper=self.map)
            else:
                pops = dict(zip(users, self.map(
                    lambda u: random_init(candidates[u], evo.pop_size, evo.list_length, evaluator, rngs[u]),
                    users)))
        result.hv_trace.append((0, self._mean_front_hv(pops)))

        params: Optional[ScorerParams] = None
        retained: List[PreferenceExample] = []
        anchors: Dict[UserId, AnchorSet] = {}
        for g in range(1, evo.generations + 1):
            with self.monitor.stage("evolve"):
                current = pops
                pops = dict(zip(users, self.map(
                    lambda u: evolve_generation(current[u], candidates[u], evo, evaluator, rngs[u]), users)))

            if interval is not None and g % interval == 0:
                params, anchors, pops, retained = self._transfer_round(
                    g, pops, candidates, meta, evaluator, user_index, params, retained, result)

            hv = self._mean_front_hv(pops)
            result.hv_trace.append((g, hv))
            self.logger.info(f"Generation {g}/{evo.generations}: mean front hypervolume {hv:.6f}")

        with self.monitor.stage("select"):
            def choose(u: UserId) -> Tuple[List[Individual], AnchorSet, Selection]:
                front = pareto_front(pops[u])
                anchor_set = anchors.get(u) or fallback_anchors(pops[u], n_clusters)
                return front, anchor_set, select_final(front, anchor_set, cfg.selection.default_lambda,
                                                       cfg.selection.beta)

            for u, (front, anchor_set, selection) in zip(users, self.map(choose, users)):
                result.fronts[u] = front
                result.anchors[u] = anchor_set
                result.selections[u] = selection
                items = selection.default.items
                if cfg.selection.order_by_base_score:
                    items = order_by_score(items, candidates[u])
                result.lists[u] = items

        result.params = params
        result.training_seconds = self.monitor.total("train")
        if not result.transfer_rounds:
            self.logger.info("No transfer round ran; anchors are region means of the final populations")
        return result

    def _transfer_round(self, g, pops, candidates, meta, evaluator, user_index, params, retained, result):
        cfg = self.config
        users = sorted(pops)
        n_clusters, k = cfg.builder.n_clusters, cfg.evolution.list_length

        with self.monitor.stage("build"):
            per_user = self.map(
                lambda u: build_examples(pops[u], candidates[u], meta, n_clusters, user_index[u]), users)
            examples = [ex for batch in per_user for ex in batch]
            check_label_sums(examples)
        if cfg.builder.dump_examples:
            result.examples.append((g, examples))

        pool = retained + examples if cfg.scorer.retain_examples else examples
        with self.monitor.stage("train"):
            start = time.perf_counter()
            if params is None or not cfg.scorer.warm_start:
                feature_dim = len(examples[0].features)
                params = init_params(len(users), feature_dim, cfg.scorer,
                                     stream_rng(cfg.run.seed, STREAM_SCORER, 0))
            params, trace = train(params, pool, cfg.scorer, stream_rng(cfg.run.seed, STREAM_SCORER, g))
            elapsed = time.perf_counter() - start
        result.loss_trace.extend((g, epoch, loss) for epoch, loss in enumerate(trace))
        final_loss = f"{trace[-1]:.6f}" if trace else "n/a"
        self.logger.info(f"Transfer round at generation {g}: {len(pool)} examples, "
                         f"{elapsed:.2f}s training, final loss {final_loss}")

        with self.monitor.stage("transfer"):
            anchor_sets = self.map(
                lambda u: knowledge_transfer(params, user_index[u], candidates[u], evaluator, n_clusters, k),
                users)
            anchors = dict(zip(users, anchor_sets))
            pops = {u: merge(pops[u], anchors[u]) for u in users}
        result.transfer_rounds.append(g)
        retained = pool if cfg.scorer.retain_examples else []
        return params, anchors, pops, retained

    def _mean_front_hv(self, pops: Mapping[UserId, Population]) -> float:
        users = sorted(pops)
        values = self.map(lambda u: front_hypervolume(pareto_members(pops[u].members)), users)
        return float(np.mean(values)) if values else 0.0


def create_reranker(config: RerankConfig, method: str = "pareto") -> RerankerBase:
    """
    Factory function to create a re-ranker

    Args:
        config: Run configuration
        method: 'pareto', 'topk' or 'mmr'

    Returns:
        Re-ranker instance
    """
    method = method.lower()
    if method == "pareto":
        return ParetoTransferReranker(config)
    elif method == "topk":
        return TopKReranker(config)
    elif method == "mmr":
        return MMRReranker(config)
    else:
        raise ConfigurationError(f"Unknown method: {method}. Use 'pareto', 'topk' or 'mmr'")
