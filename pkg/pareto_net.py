"""
Preference-conditioned item scorer
Three dense layers over [item features | one-hot region | user embedding],
rectifier hidden units and a sigmoid output, trained with soft-target binary
cross-entropy and Adam. Gradients are derived analytically.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Sequence, Tuple

import numpy as np

from config import ScorerConfig
from domain_model import CandidateSet, ItemId, ItemMeta
from error_handling import ConfigurationError, DataError, NumericalError
from preference_builder import PreferenceExample, one_hot, stack_examples

logger = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_HEADER = "# pareto-scorer-checkpoint v1"
PARAM_NAMES = ("user_embeddings", "W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class ScorerParams:
    """All learnable parameters"""
    user_embeddings: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    @property
    def embedding_dim(self) -> int:
        return self.user_embeddings.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[0] - self.embedding_dim

    @property
    def n_users(self) -> int:
        return self.user_embeddings.shape[0]

    def as_dict(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> 'ScorerParams':
        return ScorerParams(**{name: value.copy() for name, value in self.as_dict().items()})

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())


def _glorot(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(n_users: int, feature_dim: int, config: ScorerConfig,
                rng: np.random.Generator) -> ScorerParams:
    """Glorot-uniform weights, zero biases"""
    d_u, h1, h2 = config.user_embedding_dim, config.hidden1, config.hidden2
    d_in = feature_dim + d_u
    return ScorerParams(
        user_embeddings=_glorot(n_users, d_u, rng),
        W1=_glorot(d_in, h1, rng), b1=np.zeros(h1),
        W2=_glorot(h1, h2, rng), b2=np.zeros(h2),
        W3=_glorot(h2, 1, rng), b3=np.zeros(1),
    )


def zero_params(n_users: int, feature_dim: int, config: ScorerConfig) -> ScorerParams:
    d_u, h1, h2 = config.user_embedding_dim, config.hidden1, config.hidden2
    return ScorerParams(
        user_embeddings=np.zeros((n_users, d_u)),
        W1=np.zeros((feature_dim + d_u, h1)), b1=np.zeros(h1),
        W2=np.zeros((h1, h2)), b2=np.zeros(h2),
        W3=np.zeros((h2, 1)), b3=np.zeros(1),
    )


def sigmoid(z: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -z))


def _check_inputs(params: ScorerParams, features: np.ndarray, users: np.ndarray):
    if features.ndim != 2 or features.shape[1] != params.feature_dim:
        raise ConfigurationError(
            f"Feature width {features.shape[-1]} does not match scorer width {params.feature_dim}")
    if features.shape[0] != users.shape[0]:
        raise ConfigurationError("features and users have different lengths")
    if users.size and (users.min() < 0 or users.max() >= params.n_users):
        raise ConfigurationError("user index outside the embedding table")


def _forward_cache(params: ScorerParams, features: np.ndarray, users: np.ndarray):
    x = np.hstack([features, params.user_embeddings[users]])
    z1 = x @ params.W1 + params.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ params.W2 + params.b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ params.W3 + params.b3)[:, 0]
    return x, z1, a1, z2, a2, sigmoid(z3)


def forward(params: ScorerParams, features: np.ndarray, users) -> np.ndarray:
    """Predicted probabilities for each row"""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    if users.size == 1 and features.shape[0] > 1:
        users = np.full(features.shape[0], int(users[0]), dtype=np.int64)
    _check_inputs(params, features, users)
    return _forward_cache(params, features, users)[-1]


def bce_loss(y_hat, y) -> float:
    """Mean soft-target binary cross-entropy with clamped probabilities"""
    p = np.clip(np.asarray(y_hat, dtype=float), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(params: ScorerParams, features: np.ndarray, users: np.ndarray,
             labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """
    Mean BCE over the batch and its exact gradient

    Returns:
        (loss, gradients keyed like ScorerParams); embedding rows of users
        absent from the batch are zero
    """
    features = np.asarray(features, dtype=float)
    users = np.asarray(users, dtype=np.int64)
    labels = np.asarray(labels, dtype=float)
    if len(labels) == 0:
        raise ValueError("backward needs a non-empty batch")
    _check_inputs(params, features, users)

    x, z1, a1, z2, a2, p = _forward_cache(params, features, users)
    loss = bce_loss(p, labels)
    n = len(labels)

    inside = (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)
    dz3 = (((p - labels) * inside) / n)[:, None]
    grads = {"W3": a2.T @ dz3, "b3": dz3.sum(axis=0)}
    dz2 = (dz3 @ params.W3.T) * (z2 > 0)
    grads["W2"] = a1.T @ dz2
    grads["b2"] = dz2.sum(axis=0)
    dz1 = (dz2 @ params.W2.T) * (z1 > 0)
    grads["W1"] = x.T @ dz1
    grads["b1"] = dz1.sum(axis=0)
    dx = dz1 @ params.W1.T
    d_emb = np.zeros_like(params.user_embeddings)
    np.add.at(d_emb, users, dx[:, params.feature_dim:])
    grads["user_embeddings"] = d_emb
    return loss, grads


class Adam:
    """Adam with lazy per-row updates of the embedding table"""

    def __init__(self, params: ScorerParams, config: ScorerConfig):
        self.lr = config.learning_rate
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.eps = config.eps
        self.t = 0
        self.m = {name: np.zeros_like(v) for name, v in params.as_dict().items()}
        self.v = {name: np.zeros_like(v) for name, v in params.as_dict().items()}

    def step(self, params: ScorerParams, grads: Mapping[str, np.ndarray], users: np.ndarray):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name in PARAM_NAMES:
            value, g = getattr(params, name), grads[name]
            m, v = self.m[name], self.v[name]
            if name == "user_embeddings":
                rows = np.unique(users)
                m[rows] = self.beta1 * m[rows] + (1.0 - self.beta1) * g[rows]
                v[rows] = self.beta2 * v[rows] + (1.0 - self.beta2) * g[rows] ** 2
                value[rows] -= self.lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + self.eps)
            else:
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g ** 2
                value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(params: ScorerParams, examples: Sequence[PreferenceExample], config: ScorerConfig,
          rng: np.random.Generator) -> Tuple[ScorerParams, List[float]]:
    """
    Mini-batch Adam over shuffled examples

    Returns:
        (trained copy of params, per-epoch mean loss)
    """
    if not examples:
        raise ValueError("train needs at least one example")
    features, users, labels = stack_examples(examples)
    params = params.copy()
    optimizer = Adam(params, config)
    n = len(labels)
    trace: List[float] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, grads = backward(params, features[batch], users[batch], labels[batch])
            if not np.isfinite(loss):
                raise NumericalError(
                    f"Non-finite loss at epoch {epoch}, batch starting {start}",
                    diagnostic={"epoch": epoch, "batch_start": start, "loss": loss})
            optimizer.step(params, grads, users[batch])
            total += loss * len(batch)
        trace.append(total / n)
        logger.debug(f"epoch {epoch}: loss {trace[-1]:.6f}")

    if not params.is_finite():
        raise NumericalError("Scorer parameters became non-finite during training")
    return params, trace


def predict_scores(params: ScorerParams, user_index: int, cluster: int, n_clusters: int,
                   cand: CandidateSet, meta: Mapping[ItemId, ItemMeta]) -> Dict[ItemId, float]:
    """Score every candidate under one (user, region) context"""
    region = one_hot(cluster, n_clusters)
    try:
        rows = [np.concatenate([meta[item].feature, region]) for item in cand.items]
    except KeyError as e:
        raise DataError(f"Missing feature for item {e.args[0]}", offenders=[e.args[0]]) from None
    scores = forward(params, np.vstack(rows), np.full(len(rows), user_index, dtype=np.int64))
    if not np.all(np.isfinite(scores)):
        raise NumericalError(f"Non-finite scores for user index {user_index}")
    return {item: float(s) for item, s in zip(cand.items, scores)}


def save_checkpoint(params: ScorerParams, path) -> Path:
    """Versioned text checkpoint with a dimensions header"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        CHECKPOINT_HEADER,
        (f"dims feature_dim={params.feature_dim} hidden1={params.W1.shape[1]} "
         f"hidden2={params.W2.shape[1]} embedding_dim={params.embedding_dim} users={params.n_users}"),
    ]
    for name in PARAM_NAMES:
        value = np.atleast_2d(getattr(params, name))
        lines.append(f"param {name} {value.shape[0]} {value.shape[1]}")
        lines.extend(" ".join(f"{x:.17g}" for x in row) for row in value)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_checkpoint(path) -> ScorerParams:
    """Inverse of save_checkpoint"""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}", path=str(path)) from e
    if not lines or lines[0] != CHECKPOINT_HEADER:
        raise DataError(f"{path} is not a scorer checkpoint", path=str(path))

    values: Dict[str, np.ndarray] = {}
    pos = 2
    while pos < len(lines):
        _, name, rows, cols = lines[pos].split()
        rows, cols = int(rows), int(cols)
        block = [[float(x) for x in line.split()] for line in lines[pos + 1:pos + 1 + rows]]
        array = np.array(block, dtype=float).reshape(rows, cols)
        values[name] = array[0] if name.startswith("b") else array
        pos += 1 + rows
    missing = set(PARAM_NAMES) - set(values)
    if missing:
        raise DataError(f"Checkpoint {path} lacks {sorted(missing)}", path=str(path))
    return ScorerParams(**values)
