"""
Data pipeline for the Pareto re-ranking engine
Interaction ingestion, leave-one-out splitting, candidate sampling, base-score
loading, item feature assembly, prepared-artifact persistence and a synthetic
dataset generator for desk-scale experiments.
"""

import hashlib
import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Mapping, Sequence, Set, Tuple

import numpy as np

from config import DataConfig, TARGET_SPLITS
from domain_model import CandidateSet, CategoryId, ItemId, ItemMeta, UserId
from error_handling import ConfigurationError, DataError
from evolution import STREAM_SAMPLING, stream_rng

logger = logging.getLogger(__name__)

MAX_REPORTED_OFFENDERS = 20
PREPARED_ARTIFACTS = ("train.tsv", "heldout.tsv", "candidates.tsv", "item_features.tsv")
MANIFEST_NAME = "manifest.json"

INTERACTIONS_HEADER = ("user_id", "item_id", "timestamp", "categories")
SCORES_HEADER = ("user_id", "item_id", "score")
EMBEDDINGS_HEADER = ("item_id",)

# Synthetic generator shape
ZIPF_EXPONENT = 1.1
AFFINITY_CONCENTRATION = 0.3
MEAN_EXTRA_INTERACTIONS = 12
SCORE_NOISE = 0.05


@dataclass(frozen=True)
class Interaction:
    user: UserId
    item: ItemId
    timestamp: int
    categories: FrozenSet[CategoryId]


@dataclass
class DatasetSplit:
    """Leave-one-out split; histories hold every item each kept user touched"""
    train: List[Interaction]
    validation: Dict[UserId, ItemId]
    test: Dict[UserId, ItemId]
    histories: Dict[UserId, Set[ItemId]] = field(default_factory=dict)

    @property
    def users(self) -> List[UserId]:
        return sorted(self.test)

    def heldout(self, target: str) -> Dict[UserId, ItemId]:
        if target not in TARGET_SPLITS:
            raise ConfigurationError(f"Unknown split '{target}'", key="run.target_split")
        return self.test if target == "test" else self.validation


@dataclass
class PreparedData:
    """Everything a run needs: split, scored candidates per split, item metadata"""
    split: DatasetSplit
    candidates: Dict[str, Dict[UserId, CandidateSet]]
    meta: Dict[ItemId, ItemMeta]
    total_categories: int

    def target(self, split: str) -> Dict[UserId, CandidateSet]:
        try:
            return self.candidates[split]
        except KeyError:
            raise ConfigurationError(f"No candidates prepared for split '{split}'",
                                     key="run.target_split") from None

    def positives(self, split: str) -> Dict[UserId, ItemId]:
        return {u: c.positive_item for u, c in self.target(split).items()}


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------

def _read_lines(path) -> Iterator[Tuple[int, str]]:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\r\n")
                if line.strip():
                    yield lineno, line
    except OSError as e:
        raise DataError(f"Cannot read {path}: {e}", path=str(path)) from e
    except UnicodeDecodeError as e:
        raise DataError(f"{path} is not valid UTF-8: {e}", path=str(path)) from e


def _is_header(fields: Sequence[str], header: Sequence[str]) -> bool:
    """Only a line naming the expected leading columns counts as a header"""
    names = tuple(f.strip().lower() for f in fields)
    return names[:len(header)] == tuple(header)


def _parse_categories(text: str) -> FrozenSet[CategoryId]:
    cats = frozenset(int(c) for c in text.split("|") if c.strip())
    if not cats:
        raise ValueError("no categories")
    return cats


def _format_categories(cats: Iterable[CategoryId]) -> str:
    return "|".join(str(c) for c in sorted(cats))


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Interactions and splitting
# ---------------------------------------------------------------------------

def load_interactions(path, delimiter: str = "\t", tolerance: float = 0.01) -> List[Interaction]:
    """
    Parse (user_id, item_id, timestamp, pipe-separated categories) rows

    A header line is optional. Exact (user, item, timestamp) duplicates keep the
    first row. Malformed rows are logged with their line numbers and tolerated
    up to the given fraction of data rows.

    Raises:
        DataError: unreadable file or too many malformed rows
    """
    interactions: List[Interaction] = []
    seen: Set[Tuple[UserId, ItemId, int]] = set()
    malformed: List[Tuple[int, str]] = []
    n_rows = 0
    duplicates = 0

    for lineno, line in _read_lines(path):
        fields = line.split(delimiter)
        if n_rows == 0 and _is_header(fields, INTERACTIONS_HEADER):
            continue
        n_rows += 1
        try:
            if len(fields) != 4:
                raise ValueError(f"expected 4 fields, got {len(fields)}")
            row = Interaction(int(fields[0]), int(fields[1]), int(fields[2]), _parse_categories(fields[3]))
        except ValueError as e:
            malformed.append((lineno, str(e)))
            continue
        key = (row.user, row.item, row.timestamp)
        if key in seen:
            duplicates += 1
            continue
        seen.add(key)
        interactions.append(row)

    for lineno, reason in malformed[:MAX_REPORTED_OFFENDERS]:
        logger.warning(f"{path}:{lineno}: malformed row ({reason})")
    if malformed and len(malformed) > tolerance * n_rows:
        raise DataError(f"{len(malformed)} of {n_rows} rows in {path} are malformed",
                        path=str(path), offenders=[ln for ln, _ in malformed[:MAX_REPORTED_OFFENDERS]])
    if duplicates:
        logger.info(f"Dropped {duplicates} duplicate interactions")
    if not interactions:
        logger.warning(f"No interactions in {path}")
    logger.info(f"Loaded {len(interactions)} interactions from {path}")
    return interactions


def leave_one_out(interactions: Sequence[Interaction], min_history: int = 3) -> DatasetSplit:
    """
    Per user: last interaction by timestamp is test, second-last validation

    Timestamp ties keep file order; users with fewer than min_history
    interactions are dropped.
    """
    by_user: Dict[UserId, List[Interaction]] = defaultdict(list)
    for row in interactions:
        by_user[row.user].append(row)

    train: List[Interaction] = []
    validation: Dict[UserId, ItemId] = {}
    test: Dict[UserId, ItemId] = {}
    histories: Dict[UserId, Set[ItemId]] = {}
    dropped = 0
    for user in sorted(by_user):
        rows = sorted(by_user[user], key=lambda r: r.timestamp)
        if len(rows) < min_history:
            dropped += 1
            continue
        train.extend(rows[:-2])
        validation[user] = rows[-2].item
        test[user] = rows[-1].item
        histories[user] = {r.item for r in rows}

    if dropped:
        logger.info(f"Dropped {dropped} users with fewer than {min_history} interactions")
    return DatasetSplit(train, validation, test, histories)


def item_catalog(interactions: Iterable[Interaction]) -> Dict[ItemId, FrozenSet[CategoryId]]:
    """Every item seen with the union of its category labels"""
    cats: Dict[ItemId, Set[CategoryId]] = defaultdict(set)
    for row in interactions:
        cats[row.item].update(row.categories)
    return {item: frozenset(cats[item]) for item in sorted(cats)}


# ---------------------------------------------------------------------------
# Candidates and scores
# ---------------------------------------------------------------------------

def _sampling_key(user: UserId, target: str) -> int:
    return 2 * int(user) + (0 if target == "test" else 1)


def build_candidates(split: DatasetSplit, catalog: Iterable[ItemId], seed: int,
                     n_negatives: int = 99, target: str = "test") -> Dict[UserId, CandidateSet]:
    """
    Positive plus n_negatives uniform negatives from items the user never touched

    Candidate order is shuffled. Base scores are zero until load_scores.

    Raises:
        DataError: catalog too small for some user
    """
    catalog = sorted(set(catalog))
    positives = split.heldout(target)
    candidates: Dict[UserId, CandidateSet] = {}
    for user in sorted(positives):
        history = split.histories.get(user, set())
        pool = np.array([item for item in catalog if item not in history], dtype=np.int64)
        if len(pool) < n_negatives:
            raise DataError(
                f"User {user}: only {len(pool)} unseen items for {n_negatives} negatives",
                offenders=[user])
        rng = stream_rng(seed, STREAM_SAMPLING, _sampling_key(user, target))
        negatives = rng.choice(pool, size=n_negatives, replace=False)
        items = np.concatenate([[positives[user]], negatives])[rng.permutation(n_negatives + 1)]
        items = tuple(int(i) for i in items)
        candidates[user] = CandidateSet(user, items, (0.0,) * len(items), positives[user])
    logger.info(f"Built {target} candidates for {len(candidates)} users")
    return candidates


def uniform_scores(candidates: Mapping[UserId, CandidateSet]) -> Dict[UserId, CandidateSet]:
    """Rank-reciprocal scores from candidate order: the j-th candidate gets 1/(j+1)"""
    return {u: c.with_scores([1.0 / (j + 1) for j in range(len(c))]) for u, c in candidates.items()}


def load_scores(path, candidates: Mapping[UserId, CandidateSet], delimiter: str = "\t",
                uniform_fallback: bool = False) -> Dict[UserId, CandidateSet]:
    """
    Attach base scores from (user_id, item_id, score) rows

    Raises:
        DataError: unparsable row, any candidate without a score, or a score outside [0, 1]
    """
    if uniform_fallback:
        logger.warning("Using rank-reciprocal fallback scores")
        return uniform_scores(candidates)
    if path is None:
        raise ConfigurationError("No scores file configured and uniform fallback disabled",
                                 key="data.scores_path")

    wanted = {(u, i) for u, c in candidates.items() for i in c.items}
    scores: Dict[Tuple[UserId, ItemId], float] = {}
    first = True
    for lineno, line in _read_lines(path):
        fields = line.split(delimiter)
        if first and _is_header(fields, SCORES_HEADER):
            first = False
            continue
        first = False
        try:
            user, item, score = int(fields[0]), int(fields[1]), float(fields[2])
        except (ValueError, IndexError) as e:
            raise DataError(f"{path}:{lineno}: malformed score row ({e})", path=str(path)) from e
        if (user, item) in wanted:
            scores[(user, item)] = score

    missing = sorted(wanted - scores.keys())
    if missing:
        raise DataError(f"{len(missing)} candidate pairs have no base score, e.g. {missing[:MAX_REPORTED_OFFENDERS]}",
                        path=str(path), offenders=missing[:MAX_REPORTED_OFFENDERS])
    out_of_range = sorted(pair for pair, s in scores.items() if not 0.0 <= s <= 1.0)
    if out_of_range:
        raise DataError(f"{len(out_of_range)} base scores lie outside [0, 1], e.g. {out_of_range[:MAX_REPORTED_OFFENDERS]}",
                        path=str(path), offenders=out_of_range[:MAX_REPORTED_OFFENDERS])
    return {u: c.with_scores([scores[(u, i)] for i in c.items]) for u, c in candidates.items()}


# ---------------------------------------------------------------------------
# Item features
# ---------------------------------------------------------------------------

def popularity_counts(train: Iterable[Interaction]) -> Counter:
    return Counter(row.item for row in train)


def load_embeddings(path, delimiter: str = "\t") -> Dict[ItemId, np.ndarray]:
    """Rows of item_id followed by floats; every row must have the same width"""
    embeddings: Dict[ItemId, np.ndarray] = {}
    width = None
    for lineno, line in _read_lines(path):
        fields = line.split(delimiter)
        if not embeddings and _is_header(fields, EMBEDDINGS_HEADER):
            continue
        try:
            item = int(fields[0])
            vector = np.array([float(x) for x in fields[1:]], dtype=float)
        except ValueError as e:
            raise DataError(f"{path}:{lineno}: malformed embedding row ({e})", path=str(path)) from e
        if width is None:
            width = len(vector)
        elif len(vector) != width:
            raise DataError(f"{path}:{lineno}: embedding width {len(vector)}, expected {width}",
                            path=str(path), offenders=[item])
        embeddings[item] = vector
    return embeddings


def _diversity_signal(catalog: Mapping[ItemId, FrozenSet[CategoryId]], train: Sequence[Interaction],
                      total_categories: int, mode: str) -> Dict[ItemId, float]:
    if mode == "category_breadth":
        return {item: len(cats) / total_categories for item, cats in catalog.items()}
    if mode == "category_rarity":
        counts = Counter(c for row in train for c in catalog.get(row.item, row.categories))
        max_count = max(counts.values()) if counts else 0
        if max_count == 0:
            return {item: 1.0 for item in catalog}
        return {item: 1.0 - float(np.mean([counts[c] / max_count for c in sorted(cats)]))
                for item, cats in catalog.items()}
    raise ConfigurationError(f"Unknown diversity mode '{mode}'", key="data.diversity_mode")


def assemble_features(catalog: Mapping[ItemId, FrozenSet[CategoryId]], train: Sequence[Interaction],
                      embeddings_path=None, delimiter: str = "\t",
                      diversity_mode: str = "category_breadth") -> Dict[ItemId, ItemMeta]:
    """
    Item metadata with features [e_i | p_i | div_i]

    e_i comes from the embeddings file when given, else it is the category
    multi-hot vector; p_i is pop_count / max_pop. Items never seen in training
    get pop_count 1.
    """
    categories = sorted({c for cats in catalog.values() for c in cats})
    if not categories:
        raise DataError("Catalog has no categories")
    column = {c: j for j, c in enumerate(categories)}
    total_categories = len(categories)

    counts = popularity_counts(train)
    pop = {item: max(1, counts.get(item, 0)) for item in catalog}
    max_pop = max(pop.values())
    diversity = _diversity_signal(catalog, train, total_categories, diversity_mode)

    embeddings = load_embeddings(embeddings_path, delimiter) if embeddings_path else None
    if embeddings is not None:
        missing = [item for item in catalog if item not in embeddings]
        if missing:
            raise DataError(f"{len(missing)} items have no embedding", path=str(embeddings_path),
                            offenders=missing[:MAX_REPORTED_OFFENDERS])

    meta: Dict[ItemId, ItemMeta] = {}
    for item, cats in catalog.items():
        if embeddings is not None:
            e = embeddings[item]
        else:
            e = np.zeros(total_categories)
            e[[column[c] for c in cats]] = 1.0
        feature = np.concatenate([e, [pop[item] / max_pop, diversity[item]]])
        meta[item] = ItemMeta(item, cats, pop[item], feature)
    logger.info(f"Assembled {len(meta)} item features of width {len(next(iter(meta.values())).feature)}")
    return meta


def total_categories(meta: Mapping[ItemId, ItemMeta]) -> int:
    return len({c for m in meta.values() for c in m.categories})


def prepare_dataset(config: DataConfig, seed: int) -> PreparedData:
    """Load, split, sample and score; candidates are built for both held-out splits"""
    interactions = load_interactions(config.interactions_path, config.delimiter, config.malformed_tolerance)
    if not interactions:
        raise DataError(f"No interactions to prepare in {config.interactions_path}",
                        path=config.interactions_path)
    split = leave_one_out(interactions, config.min_history)
    if not split.test:
        raise DataError("No user has enough interactions for leave-one-out")
    catalog = item_catalog(interactions)
    candidates = {}
    for target in TARGET_SPLITS:
        built = build_candidates(split, catalog, seed, config.n_negatives, target)
        candidates[target] = load_scores(config.scores_path, built, config.delimiter, config.uniform_fallback)
    meta = assemble_features(catalog, split.train, config.embeddings_path, config.delimiter,
                             config.diversity_mode)
    return PreparedData(split, candidates, meta, total_categories(meta))


# ---------------------------------------------------------------------------
# Prepared artifacts
# ---------------------------------------------------------------------------

def _write_rows(path: Path, rows: Iterable[Sequence[str]]) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for row in rows:
            f.write("\t".join(row) + "\n")


def _floats(values: Iterable[float], sep: str = " ") -> str:
    return sep.join(f"{v:.17g}" for v in values)


def save_prepared(prepared: PreparedData, out_dir) -> Path:
    """
    Write the four prepared artifacts and a manifest with their SHA-256 digests

    Returns:
        Path of the manifest
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = prepared.split

    _write_rows(out_dir / "train.tsv",
                ((str(r.user), str(r.item), str(r.timestamp), _format_categories(r.categories))
                 for r in split.train))
    _write_rows(out_dir / "heldout.tsv",
                ((str(u), str(split.validation[u]), str(split.test[u])) for u in split.users))
    _write_rows(out_dir / "candidates.tsv",
                ((target, str(u), str(c.positive_item), "|".join(str(i) for i in c.items), _floats(c.scores, "|"))
                 for target in TARGET_SPLITS if target in prepared.candidates
                 for u, c in sorted(prepared.candidates[target].items())))
    _write_rows(out_dir / "item_features.tsv",
                ((str(m.item), _format_categories(m.categories), str(m.pop_count), _floats(m.feature))
                 for m in (prepared.meta[i] for i in sorted(prepared.meta))))

    manifest = {
        "artifacts": {name: _sha256(out_dir / name) for name in PREPARED_ARTIFACTS},
        "n_users": len(split.test),
        "n_items": len(prepared.meta),
        "total_categories": prepared.total_categories,
    }
    manifest_path = out_dir / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info(f"Prepared data written to {out_dir}")
    return manifest_path


def load_prepared(in_dir) -> PreparedData:
    """
    Inverse of save_prepared; artifact digests are checked against the manifest

    Raises:
        DataError: missing artifact or digest mismatch
    """
    in_dir = Path(in_dir)
    manifest_path = in_dir / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"Cannot read manifest {manifest_path}: {e}", path=str(manifest_path)) from e
    for name in PREPARED_ARTIFACTS:
        path = in_dir / name
        if not path.exists():
            raise DataError(f"Missing prepared artifact {path}", path=str(path))
        if _sha256(path) != manifest["artifacts"].get(name):
            raise DataError(f"Digest mismatch for {path}; re-run prepare", path=str(path))

    train = [Interaction(int(f[0]), int(f[1]), int(f[2]), _parse_categories(f[3]))
             for _, f in ((n, line.split("\t")) for n, line in _read_lines(in_dir / "train.tsv"))]
    validation, test = {}, {}
    for _, line in _read_lines(in_dir / "heldout.tsv"):
        user, val_item, test_item = (int(x) for x in line.split("\t"))
        validation[user], test[user] = val_item, test_item
    histories: Dict[UserId, Set[ItemId]] = {u: {validation[u], test[u]} for u in test}
    for row in train:
        histories[row.user].add(row.item)
    split = DatasetSplit(train, validation, test, histories)

    candidates: Dict[str, Dict[UserId, CandidateSet]] = defaultdict(dict)
    for _, line in _read_lines(in_dir / "candidates.tsv"):
        target, user, positive, items, scores = line.split("\t")
        items = tuple(int(i) for i in items.split("|"))
        scores = tuple(float(s) for s in scores.split("|"))
        candidates[target][int(user)] = CandidateSet(int(user), items, scores, int(positive))

    meta: Dict[ItemId, ItemMeta] = {}
    for _, line in _read_lines(in_dir / "item_features.tsv"):
        item, cats, pop, feature = line.split("\t")
        meta[int(item)] = ItemMeta(int(item), _parse_categories(cats), int(pop),
                                   np.array([float(x) for x in feature.split()], dtype=float))

    return PreparedData(split, dict(candidates), meta, int(manifest["total_categories"]))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

@dataclass
class SyntheticDataset:
    interactions: List[Interaction]
    scores: np.ndarray  # users x items
    n_categories: int


def generate_synthetic(n_users: int, n_items: int, n_categories: int, seed: int,
                       n_negatives: int = 99) -> SyntheticDataset:
    """
    Power-law popularity, latent user category affinity and noisy base scores

    Item popularity weights follow rank^-1.1 over a random ranking; every item
    carries 1-3 categories; each user draws a Dirichlet(0.3) affinity over
    categories and samples 3 + Poisson(12) distinct items with probability
    proportional to weight * (0.5 + match). Base scores are match * quality
    plus N(0, 0.05) noise, clipped to [0, 1].
    """
    if n_items < 120 or n_categories < 2 or n_users < 1:
        raise ConfigurationError(
            f"Infeasible synthetic dataset: {n_users} users, {n_items} items, {n_categories} categories "
            "(need users >= 1, items >= 120, categories >= 2)")
    rng = np.random.default_rng(seed)

    ranks = rng.permutation(n_items) + 1
    weights = ranks.astype(float) ** -ZIPF_EXPONENT
    membership = np.zeros((n_items, n_categories))
    for item in range(n_items):
        n_cats = int(rng.integers(1, 4))
        membership[item, rng.choice(n_categories, size=min(n_cats, n_categories), replace=False)] = 1.0
    quality = rng.uniform(0.3, 1.0, size=n_items)
    item_cats = [frozenset(int(c) for c in np.flatnonzero(membership[i])) for i in range(n_items)]

    max_history = n_items - n_negatives - 1
    interactions: List[Interaction] = []
    scores = np.zeros((n_users, n_items))
    for user in range(n_users):
        affinity = rng.dirichlet(np.full(n_categories, AFFINITY_CONCENTRATION))
        match = np.clip(membership @ affinity, 0.0, 1.0)
        prob = weights * (0.5 + match)
        prob /= prob.sum()
        n = min(3 + int(rng.poisson(MEAN_EXTRA_INTERACTIONS)), max_history)
        items = rng.choice(n_items, size=n, replace=False, p=prob)
        timestamps = 1_000_000 + np.cumsum(rng.integers(1, 1000, size=n))
        for item, ts in zip(items, timestamps):
            interactions.append(Interaction(user, int(item), int(ts), item_cats[int(item)]))
        scores[user] = np.clip(match * quality + rng.normal(0.0, SCORE_NOISE, size=n_items), 0.0, 1.0)

    logger.info(f"Generated {len(interactions)} synthetic interactions for {n_users} users")
    return SyntheticDataset(interactions, scores, n_categories)


def write_synthetic(dataset: SyntheticDataset, interactions_path, scores_path,
                    delimiter: str = "\t") -> Tuple[Path, Path]:
    """Interactions and the full user x item score matrix as delimited text"""
    interactions_path, scores_path = Path(interactions_path), Path(scores_path)
    for path in (interactions_path, scores_path):
        path.parent.mkdir(parents=True, exist_ok=True)

    with open(interactions_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(delimiter.join(INTERACTIONS_HEADER) + "\n")
        for r in dataset.interactions:
            f.write(delimiter.join((str(r.user), str(r.item), str(r.timestamp),
                                    _format_categories(r.categories))) + "\n")

    with open(scores_path, 'w', encoding='utf-8', newline='\n') as f:
        f.write(delimiter.join(SCORES_HEADER) + "\n")
        n_users, n_items = dataset.scores.shape
        for user in range(n_users):
            for item in range(n_items):
                f.write(f"{user}{delimiter}{item}{delimiter}{dataset.scores[user, item]:.6f}\n")

    logger.info(f"Synthetic data written to {interactions_path} and {scores_path}")
    return interactions_path, scores_path
