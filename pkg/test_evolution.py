#!/usr/bin/env python3
"""
Tests for the per-user evolutionary search: sorting, crowding, variation
operators, selection and initialization
"""

import unittest

import numpy as np
from hypothesis import given, settings, strategies as st

from config import EvolutionConfig
from domain_model import ObjectiveVector, dominates, validate_solution
from error_handling import ConfigurationError
from evaluation import hypervolume_3d
from evolution import (
    Individual, Population, assign_rank_and_crowding, crossover, crowding_distance,
    environmental_selection, evolve_generation, fast_nondominated_sort, guided_init,
    make_individual, mutate, objective_matrix, pareto_members, project_solution, random_init,
    repair, run_nsga2, stream_rng, STREAM_EVOLVE,
)
from fixtures import make_world


def _ind(items, acc, div, nov):
    return Individual(tuple(items), ObjectiveVector(acc, div, nov))


def _naive_fronts(objs):
    n = len(objs)
    dom = [[dominates(objs[j], objs[i]) for j in range(n)] for i in range(n)]
    remaining = list(range(n))
    fronts = []
    while remaining:
        front = [i for i in remaining if not any(dom[i][j] for j in remaining)]
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def _rank_and_crowding(objs):
    """Reference (rank, crowding) per row, computed independently of selection"""
    rank = np.zeros(len(objs), dtype=int)
    crowd = np.zeros(len(objs))
    for r, front in enumerate(_naive_fronts(objs.tolist())):
        rank[front] = r
        crowd[front] = crowding_distance(objs[front])
    return rank, crowd


def _front_volume(members):
    return hypervolume_3d(objective_matrix(pareto_members(members)))


class TestNondominatedSort(unittest.TestCase):
    """Front assignment against a quadratic reference"""

    def test_matches_naive_sort(self):
        """Test fronts equal the pairwise-dominance oracle on 1000 populations"""
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 65))
            # coarse grid so ties and duplicates are common
            objs = rng.integers(0, 6, size=(n, 3)).astype(float)
            self.assertEqual(fast_nondominated_sort(objs), _naive_fronts(objs.tolist()))

    def test_identical_and_chained_points(self):
        """Test identical vectors share one front and a chain gives singletons"""
        self.assertEqual(fast_nondominated_sort(np.ones((4, 3))), [[0, 1, 2, 3]])
        chain = np.array([[1.0, 1.0, 1.0], [3.0, 3.0, 3.0], [2.0, 2.0, 2.0]])
        self.assertEqual(fast_nondominated_sort(chain), [[1], [2], [0]])

    def test_empty(self):
        """Test an empty population has no fronts"""
        self.assertEqual(fast_nondominated_sort(np.zeros((0, 3))), [])


class TestCrowdingDistance(unittest.TestCase):

    def test_three_point_front(self):
        """Test the interior point of a three-point front gets 2.0"""
        objs = np.array([[1.0, 3.0, 0.0], [2.0, 2.0, 0.0], [3.0, 1.0, 0.0]])
        dist = crowding_distance(objs)
        self.assertTrue(np.isinf(dist[0]))
        self.assertTrue(np.isinf(dist[2]))
        self.assertAlmostEqual(dist[1], 2.0)

    def test_small_fronts_are_infinite(self):
        """Test fronts of size two or less are all boundary points"""
        self.assertTrue(np.all(np.isinf(crowding_distance(np.ones((2, 3))))))

    def test_interior_duplicates_get_zero(self):
        """Test repeated vectors between boundaries add no crowding"""
        dist = crowding_distance(np.ones((4, 3)))
        self.assertTrue(np.isinf(dist[0]) and np.isinf(dist[3]))
        self.assertEqual(dist[1], 0.0)
        self.assertEqual(dist[2], 0.0)

        objs = np.array([[0.0] * 3, [1.0] * 3, [1.0] * 3, [1.0] * 3, [2.0] * 3])
        dist = crowding_distance(objs)
        self.assertEqual(dist[2], 0.0)
        self.assertAlmostEqual(dist[1], 1.5)
        self.assertAlmostEqual(dist[3], 1.5)


class TestVariation(unittest.TestCase):
    """Crossover, repair and mutation always yield valid lists"""

    @classmethod
    def setUpClass(cls):
        cls.meta, cls.candidates, cls.evaluator = make_world(n_users=1, n_candidates=12)
        cls.cand = cls.candidates[0]

    def test_repair_refills_duplicates(self):
        """Test repair keeps first occurrences and refills repeated slots"""
        rng = np.random.default_rng(1)
        items = self.cand.items
        raw = (items[0], items[1], items[0], items[1], items[2])
        fixed = repair(raw, self.cand, rng)
        self.assertEqual(fixed[:2], raw[:2])
        self.assertEqual(fixed[4], raw[4])
        validate_solution(fixed, self.cand, 5)

    def test_crossover_with_fixed_cut(self):
        """Test two-point exchange of the middle segment"""
        rng = np.random.default_rng(2)
        items = self.cand.items
        pa = make_individual(items[:5], self.cand, self.evaluator)
        pb = make_individual(items[5:10], self.cand, self.evaluator)
        ca, cb = crossover(pa, pb, self.cand, self.evaluator, rng, cut=(1, 3))
        self.assertEqual(ca.items, (items[0], items[6], items[7], items[3], items[4]))
        self.assertEqual(cb.items, (items[5], items[1], items[2], items[8], items[9]))
        self.assertEqual(ca.objectives, self.evaluator.evaluate(ca.items, self.cand))

    def test_operators_preserve_validity(self):
        """Test 10,000 crossover and mutation results are valid lists"""
        rng = np.random.default_rng(3)
        _, candidates, evaluator = make_world(n_users=5, n_candidates=8, seed=3)
        pops = {u: random_init(c, 8, 5, evaluator, rng) for u, c in candidates.items()}
        for _ in range(5000):
            user = int(rng.integers(len(candidates)))
            cand, members = candidates[user], pops[user].members
            i, j = rng.integers(len(members), size=2)
            ca, cb = crossover(members[i], members[j], cand, evaluator, rng)
            for child in (ca, cb):
                child = mutate(child, cand, 1.0, evaluator, rng)
                validate_solution(child.items, cand, 5)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2 ** 32 - 1), i=st.integers(0, 5), j=st.integers(0, 5))
    def test_crossover_any_cut_is_valid(self, seed, i, j):
        """Test every cut position yields valid children"""
        rng = np.random.default_rng(seed)
        pa = make_individual(random_init(self.cand, 1, 5, self.evaluator, rng).members[0].items,
                             self.cand, self.evaluator)
        pb = make_individual(random_init(self.cand, 1, 5, self.evaluator, rng).members[0].items,
                             self.cand, self.evaluator)
        for child in crossover(pa, pb, self.cand, self.evaluator, rng, cut=tuple(sorted((i, j)))):
            validate_solution(child.items, self.cand, 5)

    def test_mutation_probability_zero_is_identity(self):
        """Test mutation with probability zero returns the same individual"""
        rng = np.random.default_rng(4)
        ind = make_individual(self.cand.items[:5], self.cand, self.evaluator)
        self.assertIs(mutate(ind, self.cand, 0.0, self.evaluator, rng), ind)


class TestSelection(unittest.TestCase):
    """Elitist environmental selection"""

    def test_keeps_whole_first_front_when_it_fits(self):
        """Test a first front smaller than capacity survives intact"""
        members = [
            _ind((1,), 3, 0, 0), _ind((2,), 0, 3, 0), _ind((3,), 0, 0, 3),
            _ind((4,), 1, 0, 0), _ind((5,), 0, 1, 0), _ind((6,), 0, 0, 0),
        ]
        pop = environmental_selection(members, 4, user=0)
        kept = {m.items for m in pop.members}
        self.assertTrue({(1,), (2,), (3,)} <= kept)
        self.assertEqual(len(pop), 4)

    def test_duplicates_only_fill_missing_slots(self):
        """Test repeated lists survive only when unique lists run out"""
        a, b = _ind((1,), 1, 0, 0), _ind((2,), 0, 1, 0)
        dup = _ind((1,), 1, 0, 0)
        pop = environmental_selection([a, dup, b, _ind((3,), 0.5, 0.5, 0)], 3, user=0)
        self.assertEqual(sorted(m.items for m in pop.members), [(1,), (2,), (3,)])
        pop = environmental_selection([a, dup, b], 3, user=0)
        self.assertEqual(len(pop), 3)

    def test_repeated_best_list_yields_to_next_front(self):
        """Test a copy of a rank-0 list gives its slot to a distinct list"""
        members = [_ind((1,), 1, 1, 1), _ind((1,), 1, 1, 1), _ind((2,), .5, .5, .5), _ind((3,), .2, .2, .2)]
        pop = environmental_selection(members, 2, user=0)
        self.assertEqual([m.items for m in pop.members], [(1,), (2,)])

    def test_selection_respects_rank_then_crowding(self):
        """Test every kept list outranks every rejected one on random instances"""
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(2, 31))
            objs = rng.integers(0, 5, size=(n, 3)).astype(float)
            members = [Individual((j,), ObjectiveVector(*row)) for j, row in enumerate(objs)]
            capacity = int(rng.integers(1, n + 1))
            rank, crowd = _rank_and_crowding(objs)

            kept = {m.items[0] for m in environmental_selection(members, capacity, user=0).members}
            self.assertEqual(len(kept), capacity)
            for s in kept:
                for r in set(range(n)) - kept:
                    self.assertTrue(rank[s] < rank[r] or (rank[s] == rank[r] and crowd[s] >= crowd[r]),
                                    f"kept {s} {rank[s], crowd[s]} vs rejected {r} {rank[r], crowd[r]}")

    def test_kept_front_never_dominated_by_rejected(self):
        """Test rank-0 survivors are not strictly dominated by any input vector"""
        rng = np.random.default_rng(6)
        for _ in range(300):
            n = int(rng.integers(2, 31))
            pool = rng.uniform(0.0, 1.0, size=(max(2, n // 2), 3)).round(1)
            # repeated list ids carry repeated vectors
            picks = rng.integers(len(pool), size=n)
            members = [Individual((int(p),), ObjectiveVector(*pool[p])) for p in picks]
            capacity = int(rng.integers(1, n + 1))

            survivors = environmental_selection(members, capacity, user=0).members
            self.assertEqual(len(survivors), capacity)
            for best in pareto_members(survivors):
                for other in members:
                    self.assertFalse(dominates(tuple(other.objectives), tuple(best.objectives)))

    def test_rank_and_crowding_are_assigned(self):
        """Test ranks are written back onto the members"""
        members = [_ind((1,), 1, 0, 0), _ind((2,), 0, 1, 0), _ind((3,), 0, 0, 0)]
        fronts = assign_rank_and_crowding(members)
        self.assertEqual(fronts, [[0, 1], [2]])
        self.assertEqual([m.rank for m in members], [0, 0, 1])

    def test_pareto_members(self):
        """Test rank-0 extraction keeps population order and equal vectors"""
        members = [_ind((1,), 1, 1, 1), _ind((2,), 0, 0, 0), _ind((3,), 1, 1, 1)]
        self.assertEqual([m.items for m in pareto_members(members)], [(1,), (3,)])


class TestEvolutionLoop(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.meta, cls.candidates, cls.evaluator = make_world(n_users=3)
        cls.config = EvolutionConfig(pop_size=10, generations=3, list_length=5,
                                     n_user_clusters=2, init_generations=2)

    def test_generation_keeps_capacity_and_validity(self):
        """Test each generation keeps N_pop valid lists"""
        cand = self.candidates[0]
        rng = stream_rng(7, STREAM_EVOLVE, 0)
        pop = random_init(cand, 10, 5, self.evaluator, rng)
        for _ in range(5):
            pop = evolve_generation(pop, cand, self.config, self.evaluator, rng)
            self.assertEqual(len(pop), 10)
            for m in pop.members:
                validate_solution(m.items, cand, 5)

    def test_front_never_regresses_when_it_fits(self):
        """Test every old front point stays weakly dominated by the new front"""
        cand = self.candidates[2]
        rng = stream_rng(5, STREAM_EVOLVE, 2)
        pop = random_init(cand, 10, 5, self.evaluator, rng)
        for _ in range(10):
            old_front = [m.objectives.as_array() for m in pareto_members(pop.members)]
            pop = evolve_generation(pop, cand, self.config, self.evaluator, rng)
            new_front = [m.objectives.as_array() for m in pareto_members(pop.members)]
            if len(new_front) < pop.capacity:
                for point in old_front:
                    self.assertTrue(any(np.all(q >= point) for q in new_front))

    def test_front_hypervolume_never_drops(self):
        """Test one generation never lowers the rank-0 hypervolume over 100 seeds"""
        config = EvolutionConfig(pop_size=16, list_length=5)
        checked = 0
        for seed in range(100):
            cand = self.candidates[seed % 3]
            rng = stream_rng(seed, STREAM_EVOLVE, cand.user)
            pop = random_init(cand, 16, 5, self.evaluator, rng)
            before = _front_volume(pop.members)
            pop = evolve_generation(pop, cand, config, self.evaluator, rng)
            # a truncated first front is crowding-thinned and may lose volume
            if len(pareto_members(pop.members)) < pop.capacity:
                checked += 1
                self.assertGreaterEqual(_front_volume(pop.members), before - 1e-12)
        self.assertGreaterEqual(checked, 50)

    def test_no_variation_keeps_population(self):
        """Test zero crossover and mutation probabilities leave the set unchanged"""
        config = EvolutionConfig(pop_size=10, list_length=5, crossover_prob=0.0, mutation_prob=0.0)
        for user, cand in self.candidates.items():
            rng = stream_rng(13, STREAM_EVOLVE, user)
            pop = random_init(cand, 10, 5, self.evaluator, rng)
            for _ in range(3):
                nxt = evolve_generation(pop, cand, config, self.evaluator, rng)
                self.assertEqual({m.items for m in nxt.members}, {m.items for m in pop.members})
                pop = nxt

    def test_same_seed_same_population(self):
        """Test identical seeds give identical trajectories"""
        cand = self.candidates[1]

        def run():
            rng = stream_rng(11, STREAM_EVOLVE, 1)
            pop = random_init(cand, 10, 5, self.evaluator, rng)
            return [m.items for m in run_nsga2(pop, cand, self.config, self.evaluator, rng, 3).members]

        self.assertEqual(run(), run())

    def test_random_init_rejects_short_pool(self):
        """Test lists longer than the candidate pool are refused"""
        with self.assertRaises(ConfigurationError):
            random_init(self.candidates[0], 5, 50, self.evaluator, np.random.default_rng(0))

    def test_project_solution(self):
        """Test foreign items are replaced and in-pool lists pass through"""
        cand = self.candidates[0]
        foreign = [i for i in self.meta if i not in cand][:2]
        projected, replaced = project_solution((cand.items[0], foreign[0], cand.items[1], foreign[1]), cand)
        self.assertEqual(replaced, 2)
        validate_solution(projected, cand, 4)
        self.assertEqual(project_solution(cand.items[:3], cand), (cand.items[:3], 0))

    def test_guided_init_fills_every_population(self):
        """Test clustered seeding fills every user's population with valid lists"""
        rngs = {u: stream_rng(3, STREAM_EVOLVE, u) for u in self.candidates}
        pops = guided_init(self.candidates, self.config, self.evaluator, rngs, seed=3)
        self.assertEqual(sorted(pops), sorted(self.candidates))
        for user, pop in pops.items():
            self.assertIsInstance(pop, Population)
            self.assertEqual(len(pop), self.config.pop_size)
            for m in pop.members:
                validate_solution(m.items, self.candidates[user], 5)


if __name__ == "__main__":
    unittest.main()
