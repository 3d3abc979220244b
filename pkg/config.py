"""
Configuration management for the Pareto re-ranking engine
Provides centralized settings with JSON serialization support.
"""

import hashlib
import json
from dataclasses import dataclass, asdict, field, fields, is_dataclass
from typing import Dict, List, Optional, Tuple
from pathlib import Path


NOVELTY_MODES = ("literal", "normalized")
DIVERSITY_MODES = ("category_breadth", "category_rarity")
TARGET_SPLITS = ("test", "validation")


@dataclass
class DataConfig:
    """Input files and candidate construction"""
    interactions_path: str = "data/interactions.tsv"
    scores_path: Optional[str] = "data/scores.tsv"
    embeddings_path: Optional[str] = None
    delimiter: str = "\t"
    uniform_fallback: bool = False
    n_negatives: int = 99
    min_history: int = 3
    diversity_mode: str = "category_breadth"
    malformed_tolerance: float = 0.01  # fraction of rows
    prepared_dir: str = "prepared"

    # Synthetic generator (the desk-scale reference dataset)
    synthetic_users: int = 200
    synthetic_items: int = 500
    synthetic_categories: int = 20
    synthetic_seed: int = 7


@dataclass
class EvolutionConfig:
    """Per-user evolutionary search"""
    pop_size: int = 50
    generations: int = 10
    crossover_prob: float = 0.9
    mutation_prob: float = 0.2
    list_length: int = 10  # K
    novelty_mode: str = "normalized"
    guided_init: bool = True
    n_user_clusters: int = 10
    init_generations: int = 10


@dataclass
class BuilderConfig:
    """Preference example construction"""
    n_clusters: int = 10
    dump_examples: bool = False


@dataclass
class ScorerConfig:
    """Preference-conditioned scorer and its training"""
    hidden1: int = 128
    hidden2: int = 64
    user_embedding_dim: int = 16
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warm_start: bool = True
    retain_examples: bool = False


@dataclass
class TransferConfig:
    """Knowledge transfer schedule"""
    interval: Optional[int] = 3  # None disables transfer
    dump_anchors: bool = True


@dataclass
class SelectionConfig:
    """Final list selection"""
    default_lambda: Optional[int] = None
    beta: float = 1.0
    order_by_base_score: bool = True


@dataclass
class EvaluationConfig:
    """Metrics and baselines"""
    cutoffs: List[int] = field(default_factory=lambda: [5, 10])
    betas: List[float] = field(default_factory=lambda: [1.0, 2.0])
    per_user_fbeta: bool = False
    mmr_lambda: float = 0.7


@dataclass
class RunConfig:
    """Run-wide settings"""
    seed: int = 7
    threads: Optional[int] = None  # None = available parallelism
    output_dir: str = "runs/latest"
    target_split: str = "test"


SECTIONS = {
    "data": DataConfig,
    "evolution": EvolutionConfig,
    "builder": BuilderConfig,
    "scorer": ScorerConfig,
    "transfer": TransferConfig,
    "selection": SelectionConfig,
    "evaluation": EvaluationConfig,
    "run": RunConfig,
}


@dataclass
class RerankConfig:
    """Centralized configuration for all re-ranking runs"""

    data: DataConfig = field(default_factory=DataConfig)
    evolution: EvolutionConfig = field(default_factory=EvolutionConfig)
    builder: BuilderConfig = field(default_factory=BuilderConfig)
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    run: RunConfig = field(default_factory=RunConfig)

    # Performance settings
    enable_performance_monitoring: bool = True

    # Logging settings
    log_level: str = "INFO"
    log_to_file: bool = True
    log_file_path: str = "rerank.log"
    max_log_size: int = 10 * 1024 * 1024  # 10MB

    @classmethod
    def load_from_file(cls, path: str = "rerank_config.json") -> 'RerankConfig':
        """Load configuration from JSON file"""
        config_path = Path(path)
        config = cls()

        if config_path.exists():
            try:
                with open(config_path, 'r', encoding='utf-8') as f:
                    data = json.load(f)

                config.update_from_dict(data)
                print(f"Configuration loaded from {path}")
                return config

            except (json.JSONDecodeError, TypeError, AttributeError) as e:
                print(f"Warning: Could not load config from {path}: {e}")
                print("Using default configuration")

        return config

    def save_to_file(self, path: str = "rerank_config.json") -> bool:
        """Save configuration to JSON file"""
        try:
            config_dict = asdict(self)

            with open(path, 'w', encoding='utf-8') as f:
                json.dump(config_dict, f, indent=2, ensure_ascii=False)

            print(f"Configuration saved to {path}")
            return True

        except OSError as e:
            print(f"Error saving config to {path}: {e}")
            return False

    def update_from_dict(self, updates: Dict) -> None:
        """Update configuration from a (possibly nested) dictionary"""
        for key, value in updates.items():
            if key in SECTIONS and isinstance(value, dict):
                section = getattr(self, key)
                known = {f.name for f in fields(section)}
                for sub_key, sub_value in value.items():
                    if sub_key in known:
                        setattr(section, sub_key, sub_value)
                    else:
                        print(f"Warning: Unknown config key '{key}.{sub_key}' ignored")
            elif hasattr(self, key) and not is_dataclass(getattr(self, key)):
                setattr(self, key, value)
            else:
                print(f"Warning: Unknown config key '{key}' ignored")

    def copy(self) -> 'RerankConfig':
        """Independent deep copy"""
        clone = RerankConfig()
        clone.update_from_dict(json.loads(json.dumps(asdict(self))))
        return clone

    def config_hash(self) -> str:
        """SHA-256 over every setting that can change results"""
        payload = asdict(self)
        payload["run"].pop("threads", None)
        payload["run"].pop("output_dir", None)
        for key in ("log_level", "log_to_file", "log_file_path", "max_log_size",
                    "enable_performance_monitoring"):
            payload.pop(key, None)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def validate(self) -> Tuple[bool, list]:
        """Validate configuration values and return (is_valid, errors)"""
        errors = []
        evo, sc = self.evolution, self.scorer

        if evo.pop_size < 2:
            errors.append("evolution.pop_size must be at least 2")
        if evo.list_length < 1:
            errors.append("evolution.list_length must be positive")
        if evo.generations < 0:
            errors.append("evolution.generations must be non-negative")
        for name in ("crossover_prob", "mutation_prob"):
            value = getattr(evo, name)
            if not (0.0 <= value <= 1.0):
                errors.append(f"evolution.{name} must be between 0 and 1")
        if evo.novelty_mode not in NOVELTY_MODES:
            errors.append(f"evolution.novelty_mode must be one of {NOVELTY_MODES}")
        if evo.n_user_clusters < 1:
            errors.append("evolution.n_user_clusters must be positive")

        if not (1 <= self.builder.n_clusters <= evo.pop_size):
            errors.append("builder.n_clusters must be between 1 and evolution.pop_size")

        if sc.learning_rate < 0:
            errors.append("scorer.learning_rate must be non-negative")
        if sc.batch_size < 1 or sc.epochs < 0:
            errors.append("scorer.batch_size must be positive and scorer.epochs non-negative")
        if min(sc.hidden1, sc.hidden2, sc.user_embedding_dim) < 1:
            errors.append("scorer hidden widths and user_embedding_dim must be positive")

        if self.transfer.interval is not None and self.transfer.interval < 1:
            errors.append("transfer.interval must be positive or null")

        if self.data.n_negatives < evo.list_length - 1:
            errors.append("data.n_negatives too small for evolution.list_length")
        if self.data.diversity_mode not in DIVERSITY_MODES:
            errors.append(f"data.diversity_mode must be one of {DIVERSITY_MODES}")
        if self.data.min_history < 3:
            errors.append("data.min_history must be at least 3 for leave-one-out")

        if not self.evaluation.cutoffs or min(self.evaluation.cutoffs) < 1:
            errors.append("evaluation.cutoffs must be positive")
        if not (0.0 <= self.evaluation.mmr_lambda <= 1.0):
            errors.append("evaluation.mmr_lambda must be between 0 and 1")
        if self.run.target_split not in TARGET_SPLITS:
            errors.append(f"run.target_split must be one of {TARGET_SPLITS}")
        if self.run.threads is not None and self.run.threads < 1:
            errors.append("run.threads must be positive")

        return len(errors) == 0, errors


def create_default_config_file(path: str = "rerank_config.json") -> bool:
    """Create default configuration file if it doesn't exist"""
    if not Path(path).exists():
        config = RerankConfig()
        config.save_to_file(path)
        print(f"Created default configuration file: {path}")
        return True
    return False
