#!/usr/bin/env python3
"""
Tests for ingestion, splitting, candidate sampling, scores, features,
prepared artifacts and the synthetic generator
"""

import json
import shutil
import tempfile
import unittest
from collections import Counter
from pathlib import Path

import numpy as np

from config import DataConfig
from data_pipeline import (
    Interaction, assemble_features, build_candidates, generate_synthetic, item_catalog,
    leave_one_out, load_embeddings, load_interactions, load_prepared, load_scores,
    prepare_dataset, save_prepared, uniform_scores, write_synthetic,
)
from error_handling import ConfigurationError, DataError


def _interactions():
    rows = []
    for user in range(6):
        for j in range(6):
            item = (user * 3 + j) % 30
            rows.append(Interaction(user, item, 10 * j, frozenset({item % 4})))
    # a heavy user widens the catalog
    rows.extend(Interaction(99, item, item, frozenset({item % 4, (item + 1) % 4})) for item in range(30, 60))
    return rows


class TempDirTestCase(unittest.TestCase):

    def setUp(self):
        self.temp_dir = Path(tempfile.mkdtemp())

    def tearDown(self):
        shutil.rmtree(self.temp_dir)

    def write(self, name, text):
        path = self.temp_dir / name
        path.write_text(text, encoding="utf-8")
        return path


class TestLoadInteractions(TempDirTestCase):
    """Parsing, duplicates and malformed rows"""

    def test_header_and_duplicates(self):
        """Test header skipping and duplicate-row removal"""
        path = self.write("i.tsv", "user_id\titem_id\ttimestamp\tcategories\n"
                                   "1\t10\t5\t0|2\n1\t10\t5\t0|2\n1\t11\t6\t1\n")
        rows = load_interactions(path)
        self.assertEqual(len(rows), 2)
        self.assertEqual(rows[0].categories, frozenset({0, 2}))

    def test_malformed_rows_within_tolerance(self):
        """Test malformed rows are skipped up to the tolerance and listed beyond it"""
        path = self.write("i.tsv", "1\t10\t5\t0\n1\tx\t6\t1\n1\t12\t7\t1\n1\t13\t8\n")
        self.assertEqual(len(load_interactions(path, tolerance=0.5)), 2)
        with self.assertRaises(DataError) as ctx:
            load_interactions(path, tolerance=0.1)
        self.assertEqual(ctx.exception.offenders, [2, 4])
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_malformed_first_row_is_not_a_header(self):
        """Test a malformed first row counts as malformed, not as a header"""
        path = self.write("i.tsv", "x\t10\t5\t0\n1\t11\t6\t1\n1\t12\t7\t1\n")
        self.assertEqual([r.item for r in load_interactions(path, tolerance=0.5)], [11, 12])
        with self.assertRaises(DataError) as ctx:
            load_interactions(path, tolerance=0.1)
        self.assertEqual(ctx.exception.offenders, [1])

    def test_empty_file_and_missing_file(self):
        """Test an empty file loads as nothing and a missing one fails"""
        self.assertEqual(load_interactions(self.write("empty.tsv", "")), [])
        with self.assertRaises(DataError):
            load_interactions(self.temp_dir / "nope.tsv")


class TestSplitAndCandidates(unittest.TestCase):
    """Leave-one-out split and negative sampling"""

    def setUp(self):
        self.rows = _interactions()
        self.split = leave_one_out(self.rows, min_history=3)
        self.catalog = item_catalog(self.rows)

    def test_last_is_test_second_last_validation(self):
        """Test leave-one-out holds out the last and second-last interactions"""
        self.assertEqual(self.split.test[0], 5)
        self.assertEqual(self.split.validation[0], 4)
        self.assertEqual(len([r for r in self.split.train if r.user == 0]), 4)
        self.assertEqual(self.split.users, [0, 1, 2, 3, 4, 5, 99])

    def test_short_histories_dropped_and_ties_keep_file_order(self):
        """Test short histories are dropped and equal timestamps keep file order"""
        rows = [Interaction(1, 1, 0, frozenset({0})), Interaction(1, 2, 0, frozenset({0})),
                Interaction(1, 3, 0, frozenset({0})), Interaction(2, 1, 0, frozenset({0}))]
        split = leave_one_out(rows)
        self.assertEqual(split.test, {1: 3})
        self.assertEqual(split.validation, {1: 2})

    def test_candidates_exclude_history(self):
        """Test sampled negatives never come from the user's history"""
        candidates = build_candidates(self.split, self.catalog, seed=1, n_negatives=10)
        for user, cand in candidates.items():
            self.assertEqual(len(cand), 11)
            self.assertIn(self.split.test[user], cand)
            others = set(cand.items) - {cand.positive_item}
            self.assertFalse(others & self.split.histories[user])

    def test_sampling_is_deterministic_per_split(self):
        """Test negative sampling repeats for the same seed and split"""
        a = build_candidates(self.split, self.catalog, seed=1, n_negatives=10)
        b = build_candidates(self.split, self.catalog, seed=1, n_negatives=10)
        self.assertEqual({u: c.items for u, c in a.items()}, {u: c.items for u, c in b.items()})
        val = build_candidates(self.split, self.catalog, seed=1, n_negatives=10, target="validation")
        self.assertEqual(val[0].positive_item, self.split.validation[0])

    def test_pool_too_small(self):
        """Test asking for more negatives than the catalog holds"""
        with self.assertRaises(DataError):
            build_candidates(self.split, self.catalog, seed=1, n_negatives=200)

    def test_uniform_scores(self):
        """Test the reciprocal-rank fallback scores"""
        candidates = uniform_scores(build_candidates(self.split, self.catalog, seed=1, n_negatives=3))
        self.assertEqual(candidates[0].scores, (1.0, 0.5, 1 / 3, 0.25))


class TestScoresAndFeatures(TempDirTestCase):

    def setUp(self):
        super().setUp()
        self.rows = _interactions()
        self.split = leave_one_out(self.rows)
        self.catalog = item_catalog(self.rows)
        self.candidates = build_candidates(self.split, self.catalog, seed=2, n_negatives=5)

    def test_scores_attached(self):
        """Test base scores are attached to candidate pools"""
        lines = ["user_id\titem_id\tscore"]
        lines += [f"{u}\t{i}\t{0.01 * i}" for u, c in self.candidates.items() for i in c.items]
        scored = load_scores(self.write("s.tsv", "\n".join(lines) + "\n"), self.candidates)
        cand = scored[0]
        self.assertAlmostEqual(cand.score_of(cand.items[0]), 0.01 * cand.items[0])

    def test_missing_scores_reported(self):
        """Test missing scores are listed, at most twenty"""
        path = self.write("s.tsv", "0\t0\t0.5\n")
        with self.assertRaises(DataError) as ctx:
            load_scores(path, self.candidates)
        self.assertLessEqual(len(ctx.exception.offenders), 20)
        self.assertGreater(len(ctx.exception.offenders), 0)

    def test_scores_outside_unit_interval(self):
        """Test a base score above one is rejected with its user and item"""
        lines = [f"{u}\t{i}\t0.5" for u, c in self.candidates.items() for i in c.items]
        first = self.candidates[0].items[0]
        lines[0] = f"0\t{first}\t1.5"
        with self.assertRaises(DataError) as ctx:
            load_scores(self.write("s.tsv", "\n".join(lines) + "\n"), self.candidates)
        self.assertEqual(ctx.exception.offenders, [(0, first)])

    def test_scores_header_must_name_columns(self):
        """Test an unparsable first score row is an error, not a skipped header"""
        lines = [f"{u}\t{i}\t0.5" for u, c in self.candidates.items() for i in c.items]
        scored = load_scores(self.write("h.tsv", "\n".join(["USER_ID\tITEM_ID\tSCORE"] + lines) + "\n"),
                             self.candidates)
        self.assertEqual(scored[0].scores[0], 0.5)
        with self.assertRaises(DataError) as ctx:
            load_scores(self.write("g.tsv", "\n".join(["u\tx\t0.5"] + lines) + "\n"), self.candidates)
        self.assertIn(":1:", str(ctx.exception))

    def test_no_scores_file(self):
        """Test a missing scores file needs the uniform fallback"""
        with self.assertRaises(ConfigurationError):
            load_scores(None, self.candidates)
        self.assertEqual(load_scores(None, self.candidates, uniform_fallback=True)[0].scores[0], 1.0)

    def test_feature_layout(self):
        """Test item feature layout for both diversity modes"""
        meta = assemble_features(self.catalog, self.split.train)
        feature = meta[0].feature
        self.assertEqual(len(feature), 4 + 2)
        self.assertEqual(max(m.feature[4] for m in meta.values()), 1.0)
        self.assertTrue(all(m.pop_count >= 1 for m in meta.values()))
        rarity = assemble_features(self.catalog, self.split.train, diversity_mode="category_rarity")
        self.assertTrue(all(0.0 <= m.feature[-1] <= 1.0 for m in rarity.values()))

    def test_embeddings_replace_category_vector(self):
        """Test item embeddings replace the category one-hot"""
        lines = [f"{item}\t{item}\t1.5" for item in self.catalog]
        meta = assemble_features(self.catalog, self.split.train, self.write("e.tsv", "\n".join(lines)))
        np.testing.assert_allclose(meta[3].feature[:2], [3.0, 1.5])
        self.assertEqual(len(meta[3].feature), 4)

    def test_embedding_width_mismatch(self):
        """Test embeddings of unequal width are rejected"""
        with self.assertRaises(DataError):
            load_embeddings(self.write("e.tsv", "1\t0.5\t0.5\n2\t0.5\n"))

    def test_embeddings_header(self):
        """Test only an item_id header line is skipped in embeddings"""
        loaded = load_embeddings(self.write("e.tsv", "item_id\te0\te1\n1\t0.5\t0.5\n"))
        self.assertEqual(list(loaded), [1])
        with self.assertRaises(DataError):
            load_embeddings(self.write("bad.tsv", "item\t0.5\t0.5\n1\t0.5\t0.5\n"))


class TestPreparedArtifacts(TempDirTestCase):
    """prepare, save and load through the manifest"""

    def _prepared(self):
        dataset = generate_synthetic(20, 150, 6, seed=3, n_negatives=19)
        interactions, scores = write_synthetic(dataset, self.temp_dir / "i.tsv", self.temp_dir / "s.tsv")
        config = DataConfig(interactions_path=str(interactions), scores_path=str(scores), n_negatives=19)
        return prepare_dataset(config, seed=5)

    def test_round_trip(self):
        """Test prepared artifacts load back unchanged"""
        prepared = self._prepared()
        manifest = save_prepared(prepared, self.temp_dir / "prepared")
        self.assertEqual(json.loads(manifest.read_text())["n_users"], len(prepared.split.test))
        loaded = load_prepared(self.temp_dir / "prepared")
        for split in ("test", "validation"):
            for user, cand in prepared.target(split).items():
                self.assertEqual(loaded.target(split)[user].items, cand.items)
                self.assertEqual(loaded.target(split)[user].scores, cand.scores)
        self.assertEqual(loaded.total_categories, prepared.total_categories)
        item = next(iter(prepared.meta))
        np.testing.assert_array_equal(loaded.meta[item].feature, prepared.meta[item].feature)

    def test_same_seed_same_bytes(self):
        """Test preparing twice with one seed writes identical bytes"""
        save_prepared(self._prepared(), self.temp_dir / "a")
        save_prepared(self._prepared(), self.temp_dir / "b")
        for name in ("candidates.tsv", "item_features.tsv", "manifest.json"):
            self.assertEqual((self.temp_dir / "a" / name).read_bytes(), (self.temp_dir / "b" / name).read_bytes())

    def test_tampered_artifact(self):
        """Test a modified artifact fails the manifest checksum"""
        save_prepared(self._prepared(), self.temp_dir / "prepared")
        with open(self.temp_dir / "prepared" / "heldout.tsv", "a") as f:
            f.write("0\t0\t0\n")
        with self.assertRaises(DataError):
            load_prepared(self.temp_dir / "prepared")

    def test_missing_manifest(self):
        """Test loading a directory without a manifest"""
        with self.assertRaises(DataError):
            load_prepared(self.temp_dir / "nothing")


class TestSynthetic(TempDirTestCase):

    def test_deterministic(self):
        """Test synthetic generation repeats for a seed"""
        a = generate_synthetic(5, 130, 4, seed=1)
        b = generate_synthetic(5, 130, 4, seed=1)
        self.assertEqual(a.interactions, b.interactions)
        np.testing.assert_array_equal(a.scores, b.scores)

    def test_reference_dataset_shape(self):
        """Test the default synthetic dataset's score range, history lengths and popularity skew"""
        dataset = generate_synthetic(200, 500, 20, seed=7)
        self.assertGreaterEqual(dataset.scores.min(), 0.0)
        self.assertLessEqual(dataset.scores.max(), 1.0)
        per_user = Counter(r.user for r in dataset.interactions)
        self.assertEqual(len(per_user), 200)
        self.assertGreaterEqual(min(per_user.values()), 3)
        per_item = sorted(Counter(r.item for r in dataset.interactions).values(), reverse=True)
        top_decile = sum(per_item[:500 // 10])
        self.assertGreaterEqual(top_decile / len(dataset.interactions), 0.4)

    def test_infeasible(self):
        """Test impossible synthetic sizes are rejected"""
        with self.assertRaises(ConfigurationError):
            generate_synthetic(5, 50, 4, seed=1)
        with self.assertRaises(ConfigurationError):
            generate_synthetic(5, 200, 1, seed=1)

    def test_written_file_loads_back(self):
        """Test synthetic interactions survive a write and load"""
        dataset = generate_synthetic(4, 130, 4, seed=2)
        path, _ = write_synthetic(dataset, self.temp_dir / "i.tsv", self.temp_dir / "s.tsv")
        self.assertEqual(len(load_interactions(path)), len(dataset.interactions))
        self.assertGreaterEqual(len(dataset.interactions), 3 * 4)


if __name__ == "__main__":
    unittest.main()
