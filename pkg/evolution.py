"""
Per-user evolutionary search over fixed-length recommendation lists
NSGA-II style: initialization (random or guided), list-level crossover with
repair, swap/replacement mutation, non-dominated sorting, crowding distance
and elitist environmental selection.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pymoo.util.nds.non_dominated_sorting import NonDominatedSorting
from sklearn.cluster import KMeans

from config import EvolutionConfig
from domain_model import (
    CandidateSet, ItemId, ItemMeta, ObjectiveEvaluator, ObjectiveVector,
    SolutionList, UserId,
)
from error_handling import ConfigurationError

logger = logging.getLogger(__name__)

# RNG stream namespaces; every stream is keyed by (seed, namespace, key)
STREAM_EVOLVE = 0
STREAM_INIT = 1
STREAM_SCORER = 2
STREAM_SAMPLING = 3

Mapper = Callable[[Callable, Iterable], Iterable]


def stream_rng(seed: int, namespace: int, key: int) -> np.random.Generator:
    """Independent generator for one (namespace, key) pair"""
    return np.random.default_rng([int(seed), int(namespace), int(key)])


@dataclass
class Individual:
    """One list with its cached objectives and NSGA-II bookkeeping"""
    items: SolutionList
    objectives: ObjectiveVector
    rank: Optional[int] = None
    crowding: float = 0.0


@dataclass
class Population:
    """All individuals of one user"""
    user: UserId
    members: List[Individual]
    capacity: int

    def __len__(self) -> int:
        return len(self.members)

    def objective_matrix(self) -> np.ndarray:
        return objective_matrix(self.members)


def objective_matrix(members: Sequence[Individual]) -> np.ndarray:
    """(n, 3) array of acc, div, nov"""
    if not members:
        return np.zeros((0, 3))
    return np.array([tuple(m.objectives) for m in members], dtype=float)


def make_individual(items: Sequence[ItemId], cand: CandidateSet,
                    evaluator: ObjectiveEvaluator) -> Individual:
    items = tuple(items)
    return Individual(items, evaluator.evaluate(items, cand))


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def random_list(cand: CandidateSet, k: int, rng: np.random.Generator) -> SolutionList:
    picks = rng.choice(len(cand), size=k, replace=False)
    return tuple(cand.items[int(p)] for p in picks)


def random_init(cand: CandidateSet, n: int, k: int, evaluator: ObjectiveEvaluator,
                rng: np.random.Generator, capacity: Optional[int] = None) -> Population:
    """n evaluated random K-lists drawn from the candidate set"""
    if len(cand) < k:
        raise ConfigurationError(
            f"User {cand.user}: {len(cand)} candidates cannot fill lists of length {k}")
    members = [make_individual(random_list(cand, k, rng), cand, evaluator) for _ in range(n)]
    return Population(cand.user, members, capacity if capacity is not None else n)


def project_solution(items: Sequence[ItemId], cand: CandidateSet) -> Tuple[SolutionList, int]:
    """
    Map a list onto another user's candidate set

    Items absent from the candidate set are replaced, position by position, by
    the user's highest-scoring candidates not already in the list.

    Returns:
        (projected list, number of replacements)
    """
    kept = [item if item in cand else None for item in items]
    present = {item for item in kept if item is not None}
    holes = sum(1 for item in kept if item is None)
    if holes == 0:
        return tuple(items), 0
    fillers = iter([i for i in cand.ranked_items() if i not in present][:holes])
    projected = tuple(item if item is not None else next(fillers) for item in kept)
    return projected, holes


def category_profiles(users: Sequence[UserId], candidate_sets: Mapping[UserId, CandidateSet],
                      meta: Mapping[ItemId, ItemMeta]) -> np.ndarray:
    """Per-user category-frequency distribution over the candidate pool"""
    categories = sorted({c for m in meta.values() for c in m.categories})
    column = {c: j for j, c in enumerate(categories)}
    profiles = np.zeros((len(users), len(categories)))
    for row, user in enumerate(users):
        for item in candidate_sets[user].items:
            for c in meta[item].categories:
                profiles[row, column[c]] += 1.0
        total = profiles[row].sum()
        if total > 0:
            profiles[row] /= total
    return profiles


def cluster_users(users: Sequence[UserId], profiles: np.ndarray, n_clusters: int,
                  seed: int) -> Dict[UserId, List[UserId]]:
    """
    k-means over category profiles

    Returns:
        representative user (nearest its centroid) -> member users
    """
    n_distinct = len(np.unique(profiles, axis=0))
    k = max(1, min(n_clusters, n_distinct))
    model = KMeans(n_clusters=k, n_init=10, random_state=seed).fit(profiles)

    clusters: Dict[UserId, List[UserId]] = {}
    for label in range(k):
        rows = np.flatnonzero(model.labels_ == label)
        if rows.size == 0:
            continue
        dists = np.linalg.norm(profiles[rows] - model.cluster_centers_[label], axis=1)
        representative = users[int(rows[int(np.argmin(dists))])]
        clusters[representative] = [users[int(r)] for r in rows]
    return clusters


def guided_init(candidate_sets: Mapping[UserId, CandidateSet], config: EvolutionConfig,
                evaluator: ObjectiveEvaluator, rngs: Mapping[UserId, np.random.Generator],
                seed: int, mapper: Mapper = map) -> Dict[UserId, Population]:
    """
    Seed every user's population from a pre-optimized cluster representative

    Users are clustered by candidate-pool category profile; the user nearest each
    centroid is optimized with plain NSGA-II for init_generations, and its final
    front is projected onto every member's candidate set. The rest of each
    population is random.
    """
    users = sorted(candidate_sets)
    if not users:
        raise ConfigurationError("guided initialization needs at least one user")
    k = config.list_length

    profiles = category_profiles(users, candidate_sets, evaluator.meta)
    clusters = cluster_users(users, profiles, config.n_user_clusters, seed)
    logger.info(f"Guided init: {len(users)} users in {len(clusters)} clusters")

    def optimize_representative(rep: UserId) -> List[SolutionList]:
        rng = stream_rng(seed, STREAM_INIT, rep)
        pop = random_init(candidate_sets[rep], config.pop_size, k, evaluator, rng)
        pop = run_nsga2(pop, candidate_sets[rep], config, evaluator, rng, config.init_generations)
        return [m.items for m in pareto_members(pop.members)]

    representatives = sorted(clusters)
    fronts = dict(zip(representatives, mapper(optimize_representative, representatives)))
    seeds_for: Dict[UserId, List[SolutionList]] = {}
    for rep in representatives:
        for user in clusters[rep]:
            seeds_for[user] = fronts[rep]

    def seed_user(user: UserId) -> Population:
        cand = candidate_sets[user]
        rng = rngs[user]
        seeds: List[SolutionList] = []
        seen = set()
        for items in seeds_for.get(user, []):
            projected, _ = project_solution(items, cand)
            if projected not in seen:
                seen.add(projected)
                seeds.append(projected)
        seeds = seeds[:config.pop_size]
        if not seeds:
            logger.warning(f"User {user}: empty cluster seed, falling back to random init")
        members = [make_individual(items, cand, evaluator) for items in seeds]
        rest = random_init(cand, config.pop_size - len(members), k, evaluator, rng)
        return Population(user, members + rest.members, config.pop_size)

    return dict(zip(users, mapper(seed_user, users)))


# ---------------------------------------------------------------------------
# Variation
# ---------------------------------------------------------------------------

def repair(raw: Sequence[ItemId], cand: CandidateSet, rng: np.random.Generator) -> SolutionList:
    """Keep first occurrences; refill vacated positions with unused random candidates"""
    seen = set()
    slots: List[Optional[ItemId]] = []
    for item in raw:
        if item in seen:
            slots.append(None)
        else:
            seen.add(item)
            slots.append(item)
    holes = [idx for idx, item in enumerate(slots) if item is None]
    if not holes:
        return tuple(slots)
    pool = [item for item in cand.items if item not in seen]
    picks = rng.choice(len(pool), size=len(holes), replace=False)
    for idx, pick in zip(holes, picks):
        slots[idx] = pool[int(pick)]
    return tuple(slots)


def crossover(parent_a: Individual, parent_b: Individual, cand: CandidateSet,
              evaluator: ObjectiveEvaluator, rng: np.random.Generator,
              cut: Optional[Tuple[int, int]] = None) -> Tuple[Individual, Individual]:
    """Two-point subsequence exchange followed by repair"""
    a, b = parent_a.items, parent_b.items
    k = len(a)
    if cut is None:
        i, j = sorted(rng.choice(k + 1, size=2, replace=False))
    else:
        i, j = cut
    raw_a = a[:i] + b[i:j] + a[j:]
    raw_b = b[:i] + a[i:j] + b[j:]
    child_a = repair(raw_a, cand, rng)
    child_b = repair(raw_b, cand, rng)
    return make_individual(child_a, cand, evaluator), make_individual(child_b, cand, evaluator)


def swap_mutation(items: Sequence[ItemId], rng: np.random.Generator) -> SolutionList:
    items = list(items)
    if len(items) < 2:
        return tuple(items)
    i, j = rng.choice(len(items), size=2, replace=False)
    items[i], items[j] = items[j], items[i]
    return tuple(items)


def replacement_mutation(items: Sequence[ItemId], cand: CandidateSet,
                         rng: np.random.Generator) -> SolutionList:
    items = list(items)
    present = set(items)
    pool = [item for item in cand.items if item not in present]
    if not pool:
        return tuple(items)
    pos = int(rng.integers(len(items)))
    items[pos] = pool[int(rng.integers(len(pool)))]
    return tuple(items)


def mutate(ind: Individual, cand: CandidateSet, p_m: float, evaluator: ObjectiveEvaluator,
           rng: np.random.Generator) -> Individual:
    """With probability p_m apply swap or replacement (equal odds), then repair"""
    if rng.random() >= p_m:
        return ind
    if rng.random() < 0.5:
        raw = swap_mutation(ind.items, rng)
    else:
        raw = replacement_mutation(ind.items, cand, rng)
    return make_individual(repair(raw, cand, rng), cand, evaluator)


# ---------------------------------------------------------------------------
# Sorting and selection
# ---------------------------------------------------------------------------

def fast_nondominated_sort(objs: np.ndarray) -> List[List[int]]:
    """Successive non-dominated fronts as ascending index lists"""
    objs = np.asarray(objs, dtype=float)
    if len(objs) == 0:
        return []
    # pymoo minimizes
    fronts = NonDominatedSorting().do(-objs.reshape(len(objs), -1))
    return [sorted(int(i) for i in front) for front in fronts]


def crowding_distance(objs: np.ndarray) -> np.ndarray:
    """Crowding distance of every row of one front"""
    objs = np.asarray(objs, dtype=float)
    n, m = objs.shape if objs.ndim == 2 else (len(objs), 0)
    distance = np.zeros(n)
    if n <= 2:
        distance[:] = np.inf
        return distance
    for col in range(m):
        order = np.argsort(objs[:, col], kind="stable")
        values = objs[order, col]
        distance[order[0]] = np.inf
        distance[order[-1]] = np.inf
        span = values[-1] - values[0]
        if span <= 0:
            continue
        distance[order[1:-1]] += (values[2:] - values[:-2]) / span
    return distance


def assign_rank_and_crowding(members: Sequence[Individual]) -> List[List[int]]:
    """Sets rank and crowding on every member; returns the fronts"""
    objs = objective_matrix(members)
    fronts = fast_nondominated_sort(objs)
    for rank, front in enumerate(fronts):
        crowd = crowding_distance(objs[front])
        for idx, dist in zip(front, crowd):
            members[idx].rank = rank
            members[idx].crowding = float(dist)
    return fronts


def pareto_members(members: Sequence[Individual]) -> List[Individual]:
    """Rank-0 members in population order"""
    if not members:
        return []
    fronts = fast_nondominated_sort(objective_matrix(members))
    return [members[i] for i in fronts[0]]


def _select_by_rank(members: List[Individual], capacity: int) -> List[Individual]:
    fronts = assign_rank_and_crowding(members)
    chosen: List[int] = []
    for front in fronts:
        if len(chosen) + len(front) <= capacity:
            chosen.extend(front)
            continue
        front = np.asarray(front)
        crowd = np.array([members[i].crowding for i in front])
        order = np.lexsort((front, -crowd))
        chosen.extend(front[order[:capacity - len(chosen)]].tolist())
        break
    return [members[i] for i in chosen]


def environmental_selection(members: Sequence[Individual], capacity: int,
                            user: UserId) -> Population:
    """
    Elitist survivor selection by (rank, crowding)

    Exact-duplicate lists are set aside first (first occurrence kept); they only
    fill slots when fewer than capacity unique lists exist.
    """
    members = list(members)
    seen = set()
    unique: List[Individual] = []
    duplicates: List[Individual] = []
    for ind in members:
        if ind.items in seen:
            duplicates.append(ind)
        else:
            seen.add(ind.items)
            unique.append(ind)

    if len(unique) >= capacity:
        survivors = _select_by_rank(unique, capacity)
    else:
        survivors = unique + duplicates[:capacity - len(unique)]
        assign_rank_and_crowding(survivors)
    return Population(user, survivors, capacity)


def tournament(members: Sequence[Individual], rng: np.random.Generator) -> int:
    """Binary tournament on (lower rank, higher crowding, lower index)"""
    i, j = (int(x) for x in rng.integers(len(members), size=2))
    a, b = members[i], members[j]
    key_a = (a.rank, -a.crowding, i)
    key_b = (b.rank, -b.crowding, j)
    return i if key_a <= key_b else j


def evolve_generation(pop: Population, cand: CandidateSet, config: EvolutionConfig,
                      evaluator: ObjectiveEvaluator, rng: np.random.Generator) -> Population:
    """One generation: tournament, crossover, mutation, selection over parents and offspring"""
    members = pop.members
    assign_rank_and_crowding(members)
    offspring: List[Individual] = []
    while len(offspring) < pop.capacity:
        pa = members[tournament(members, rng)]
        pb = members[tournament(members, rng)]
        if rng.random() < config.crossover_prob:
            ca, cb = crossover(pa, pb, cand, evaluator, rng)
        else:
            ca = Individual(pa.items, pa.objectives)
            cb = Individual(pb.items, pb.objectives)
        offspring.append(mutate(ca, cand, config.mutation_prob, evaluator, rng))
        offspring.append(mutate(cb, cand, config.mutation_prob, evaluator, rng))
    offspring = offspring[:pop.capacity]
    return environmental_selection(members + offspring, pop.capacity, pop.user)


def run_nsga2(pop: Population, cand: CandidateSet, config: EvolutionConfig,
              evaluator: ObjectiveEvaluator, rng: np.random.Generator,
              generations: int) -> Population:
    """Plain NSGA-II without knowledge transfer"""
    for _ in range(generations):
        pop = evolve_generation(pop, cand, config, evaluator, rng)
    return pop
