"""Experiment configuration: flat key-value files, canonical text, fingerprints.

The on-disk format is one ``key = value`` pair per line, ``#`` comments
and blank lines ignored. Unknown keys are errors so a config file can
never silently drift from the code. The canonical serialization (sorted
keys, repr-formatted values) doubles as the fingerprint input and can be
parsed back into an identical config.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

from .data_fabric import POISON_MODES, DatasetSpec
from .fl_engine import TrainConfig
from .outlier_guard import GuardConfig
from .selector import SelectionConfig

__all__ = [
    "POLICIES",
    "ExperimentConfig",
    "default_config",
    "canonical_text",
    "config_fingerprint",
    "parse_config_text",
    "load_config_file",
]

POLICIES = ("fairequity", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run needs, with per-module sub-configs."""

    selection: SelectionConfig
    guard: GuardConfig
    train: TrainConfig
    data: DatasetSpec
    total_rounds: int = 100
    policy: str = "fairequity"
    seeds: tuple[int, ...] = (1,)
    availability: float = 1.0
    noisy_fraction: float = 0.0
    noise_level: float = 0.3
    num_poisoned: int = 0
    poison_mode: str = "update_negate"
    latency: float = 1.0
    latency_spread: float = 0.0
    accuracy_target: float = 0.85
    test_samples_per_class: int = 60

    def __post_init__(self):
        if self.total_rounds < 1:
            raise ValueError("total_rounds must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if not 0.0 <= self.availability <= 1.0:
            raise ValueError("availability must be in [0, 1]")
        if not 0.0 <= self.noisy_fraction <= 1.0:
            raise ValueError("noisy_fraction must be in [0, 1]")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ValueError("noise_level must be in [0, 1]")
        if not 0 <= self.num_poisoned <= self.selection.total_clients:
            raise ValueError("num_poisoned must be in [0, total_clients]")
        if self.poison_mode not in POISON_MODES:
            raise ValueError(f"poison_mode must be one of {POISON_MODES}")
        if self.latency <= 0:
            raise ValueError("latency must be positive")
        if not 0.0 <= self.latency_spread <= 1.0:
            raise ValueError("latency_spread must be in [0, 1]")
        if not 0.0 < self.accuracy_target <= 1.0:
            raise ValueError("accuracy_target must be in (0, 1]")
        if self.test_samples_per_class < 1:
            raise ValueError("test_samples_per_class must be >= 1")


def default_config() -> ExperimentConfig:
    """The stock scenario: 100 clients, 10 per round, 100 rounds,
    heterogeneous quality via 0.8 shard purity and 30% label noise on a
    fifth of the clients. Every client holds 24 small shards so class
    coverage is near-complete and quality differences come from noise,
    not shard luck; the guard uses two strikes with long suspensions and
    clean-round decay so recurrently degrading (noisy) clients sit out
    noticeably more than clean ones."""
    return ExperimentConfig(
        selection=SelectionConfig(
            total_clients=100,
            per_round=10,
            max_selections=11,
            min_selections=5,
            gap_min=1,
            gap_max=9,
            unutilized_interval=3,
            unutilized_cap=4,
            overlooked_cap=6,
            slots_fraction=1.0,
        ),
        guard=GuardConfig(strikes_to_suspend=2, suspension_rounds=25, decay_on_clean=True),
        train=TrainConfig(local_epochs=3, batch_size=16, local_lr=0.3, global_lr=1.0),
        data=DatasetSpec(
            num_classes=5,
            num_features=10,
            samples_per_class=2400,
            shards_per_client=24,
            shard_size=5,
            class_separation=1.2,
            shard_purity=0.8,
            seed=7,
        ),
        total_rounds=100,
        noisy_fraction=0.2,
        noise_level=0.3,
    )


def _parse_bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "1", "yes", "on"):
        return True
    if lowered in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_seeds(text: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in text.split(",") if part.strip())


# key -> (sub-config attribute or None for top level, field name, parser)
_KEYS: dict[str, tuple[str | None, str, object]] = {
    "policy": (None, "policy", str),
    "total_rounds": (None, "total_rounds", int),
    "seeds": (None, "seeds", _parse_seeds),
    "availability": (None, "availability", float),
    "noisy_fraction": (None, "noisy_fraction", float),
    "noise_level": (None, "noise_level", float),
    "num_poisoned": (None, "num_poisoned", int),
    "poison_mode": (None, "poison_mode", str),
    "latency": (None, "latency", float),
    "latency_spread": (None, "latency_spread", float),
    "accuracy_target": (None, "accuracy_target", float),
    "test_samples_per_class": (None, "test_samples_per_class", int),
    "total_clients": ("selection", "total_clients", int),
    "per_round": ("selection", "per_round", int),
    "max_selections": ("selection", "max_selections", int),
    "min_selections": ("selection", "min_selections", int),
    "gap_min": ("selection", "gap_min", int),
    "gap_max": ("selection", "gap_max", int),
    "unutilized_interval": ("selection", "unutilized_interval", int),
    "unutilized_cap": ("selection", "unutilized_cap", int),
    "overlooked_cap": ("selection", "overlooked_cap", int),
    "slots_fraction": ("selection", "slots_fraction", float),
    "acc_drop_pct": ("guard", "acc_drop_pct", float),
    "loss_rise_pct": ("guard", "loss_rise_pct", float),
    "strikes_to_suspend": ("guard", "strikes_to_suspend", int),
    "suspension_rounds": ("guard", "suspension_rounds", int),
    "decay_on_clean": ("guard", "decay_on_clean", _parse_bool),
    "local_epochs": ("train", "local_epochs", int),
    "batch_size": ("train", "batch_size", int),
    "local_lr": ("train", "local_lr", float),
    "global_lr": ("train", "global_lr", float),
    "train_seed": ("train", "seed", int),
    "poison_scale": ("train", "poison_scale", float),
    "num_classes": ("data", "num_classes", int),
    "num_features": ("data", "num_features", int),
    "samples_per_class": ("data", "samples_per_class", int),
    "shards_per_client": ("data", "shards_per_client", int),
    "shard_size": ("data", "shard_size", int),
    "class_separation": ("data", "class_separation", float),
    "shard_purity": ("data", "shard_purity", float),
    "data_seed": ("data", "seed", int),
}


def _flat_value(config: ExperimentConfig, key: str):
    section, field, _ = _KEYS[key]
    holder = config if section is None else getattr(config, section)
    return getattr(holder, field)


def canonical_text(config: ExperimentConfig) -> str:
    """Sorted ``key = value`` serialization; parses back to the same config."""
    lines = []
    for key in sorted(_KEYS):
        value = _flat_value(config, key)
        if key == "seeds":
            rendered = ",".join(str(s) for s in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def config_fingerprint(config: ExperimentConfig) -> str:
    """Platform-stable hash of the canonical serialization."""
    return hashlib.sha256(canonical_text(config).encode("utf-8")).hexdigest()


def parse_config_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply ``key = value`` lines on top of the defaults (or ``base``)."""
    config = base if base is not None else default_config()
    top: dict[str, object] = {}
    sections: dict[str, dict[str, object]] = {"selection": {}, "guard": {}, "train": {}, "data": {}}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, eq, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not eq or not key:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        if key not in _KEYS:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        section, field, parser = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from None
        if section is None:
            top[field] = parsed
        else:
            sections[section][field] = parsed

    return dataclasses.replace(
        config,
        selection=dataclasses.replace(config.selection, **sections["selection"]),
        guard=dataclasses.replace(config.guard, **sections["guard"]),
        train=dataclasses.replace(config.train, **sections["train"]),
        data=dataclasses.replace(config.data, **sections["data"]),
        **top,
    )


def load_config_file(path, base: ExperimentConfig | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as handle:
        return parse_config_text(handle.read(), base=base)
