"""Experiment configuration: JSON schema, validation, and defaults.

Configs are plain JSON with nested sections. Unknown keys are errors so a
typo can never silently fall back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

from .errors import ConfigError

AGGREGATIONS = ("avg", "krum", "coomed")
ATTACK_STRATEGIES = ("targeted_explicit", "targeted_implicit", "stealthy",
                     "alternating_min", "data_poison")


def _section(raw, name, defaults, required=()):
    """Apply defaults to one config section; reject unknown keys."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ConfigError(f"missing required keys in {name!r}: {missing}")
    merged = dict(defaults)
    merged.update(raw)
    return merged


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    train_size: int = 600
    val_size: int = 500
    stratified: bool = True
    # synthetic
    classes: int = 10
    dim: int = 20
    per_class: int = 110
    spread: float = 0.6
    # idx
    images: str | None = None
    labels: str | None = None
    # tabular
    path: str | None = None
    label_column: str | None = None
    categorical_columns: tuple = ()
    numeric_columns: tuple = ()
    label_values: tuple | None = None
    delimiter: str = ","


@dataclass(frozen=True)
class FederationConfig:
    num_agents: int = 10
    selected_per_round: int | None = None
    max_rounds: int = 20
    early_stop_accuracy: float | None = None  # percent

    @property
    def per_round(self) -> int:
        return self.num_agents if self.selected_per_round is None else self.selected_per_round


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 1
    batch_size: int = 10
    optimizer: str = "sgd"
    learning_rate: float = 0.1


@dataclass(frozen=True)
class AuxConfig:
    count: int = 1
    source_class: int | None = 5
    target_class: int | None = 7
    mixed: bool = False


@dataclass(frozen=True)
class AttackSection:
    strategy: str
    malicious_agent: int = 0
    boost_factor: float = 10.0
    distance_weight: float = 0.0
    malicious_epochs: int = 5
    stealth_steps: int = 10
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    stealth_learning_rate: float | None = None
    batch_size: int | None = None
    estimation: str = "none"
    correction: str = "pre"
    literal_history_delta: bool = False
    copies: int = 0
    noise_amplitude: float = 0.05
    aux: AuxConfig = field(default_factory=AuxConfig)


@dataclass(frozen=True)
class DetectionConfig:
    accuracy_gap_threshold: float = 10.0  # percentage points
    distance_range_threshold: float | str = "auto"  # number | "auto" | "inf"
    calibration_rounds: int = 5
    histogram_bins: int = 20
    histogram_range: tuple[float, float] = (-0.25, 0.25)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    dataset: DatasetConfig
    model_layer_sizes: tuple[int, ...]
    federation: FederationConfig
    training: TrainingConfig
    attack: AttackSection | None
    aggregation: str
    krum_assumed_byzantine: int
    krum_squared_distances: bool
    detection: DetectionConfig
    output_dir: str | None

    def to_dict(self) -> dict:
        out = {
            "seed": self.seed,
            "output_dir": self.output_dir,
            "dataset": asdict(self.dataset),
            "model": {"layer_sizes": list(self.model_layer_sizes)},
            "federation": asdict(self.federation),
            "training": asdict(self.training),
            "attack": asdict(self.attack) if self.attack is not None else None,
            "aggregation": self.aggregation,
            "krum": {"assumed_byzantine": self.krum_assumed_byzantine,
                     "squared_distances": self.krum_squared_distances},
            "detection": asdict(self.detection),
        }
        for section in ("dataset", "federation", "training", "attack", "detection"):
            if isinstance(out[section], dict):
                out[section] = {k: (list(v) if isinstance(v, tuple) else v)
                                for k, v in out[section].items()}
        return out


_TOP_DEFAULTS = {
    "seed": None, "output_dir": None, "dataset": None, "model": None,
    "federation": None, "training": None, "attack": None, "aggregation": "avg",
    "krum": None, "detection": None,
}


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a raw JSON object and fill in every default."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    top = _section(raw, "config", _TOP_DEFAULTS, required=("seed", "model"))
    if not isinstance(top["seed"], int):
        raise ConfigError("seed must be an integer")

    ds = DatasetConfig(**_normalize_lists(
        _section(top["dataset"], "dataset", _defaults_of(DatasetConfig)),
        ("categorical_columns", "numeric_columns", "label_values")))
    if ds.source not in ("synthetic", "idx", "tabular"):
        raise ConfigError(f"unknown dataset source {ds.source!r}")
    if ds.source == "idx" and (ds.images is None or ds.labels is None):
        raise ConfigError("idx dataset needs 'images' and 'labels' paths")
    if ds.source == "tabular" and (ds.path is None or ds.label_column is None):
        raise ConfigError("tabular dataset needs 'path' and 'label_column'")
    if ds.train_size < 1 or ds.val_size < 1:
        raise ConfigError("train_size and val_size must be >= 1")

    model = _section(top["model"], "model", {"layer_sizes": None},
                     required=("layer_sizes",))
    sizes = model["layer_sizes"]
    if (not isinstance(sizes, list) or len(sizes) < 2
            or any(not isinstance(s, int) or s < 1 for s in sizes)):
        raise ConfigError("model.layer_sizes must be a list of >= 2 positive integers")

    fed = FederationConfig(**_section(top["federation"], "federation",
                                      _defaults_of(FederationConfig)))
    if fed.num_agents < 1 or fed.max_rounds < 0:
        raise ConfigError("num_agents must be >= 1 and max_rounds >= 0")
    if fed.per_round < 1 or fed.per_round > fed.num_agents:
        raise ConfigError(f"selected_per_round must lie in [1, {fed.num_agents}]")

    training = TrainingConfig(**_section(top["training"], "training",
                                         _defaults_of(TrainingConfig)))
    if training.optimizer not in ("sgd", "adam"):
        raise ConfigError(f"unknown optimizer {training.optimizer!r}")
    if training.epochs < 0 or training.batch_size < 1 or training.learning_rate < 0:
        raise ConfigError("training settings out of range")

    attack = None
    if top["attack"] is not None:
        attack_raw = _section(top["attack"], "attack", _defaults_of(AttackSection),
                              required=("strategy",))
        aux = AuxConfig(**_section(attack_raw.pop("aux"), "attack.aux",
                                   _defaults_of(AuxConfig)))
        attack = AttackSection(aux=aux, **attack_raw)
        if attack.strategy not in ATTACK_STRATEGIES:
            raise ConfigError(f"unknown attack strategy {attack.strategy!r}")
        if not 0 <= attack.malicious_agent < fed.num_agents:
            raise ConfigError("attack.malicious_agent out of range")
        if attack.boost_factor <= 0:
            raise ConfigError("attack.boost_factor must be > 0")
        if attack.estimation not in ("none", "previous_step"):
            raise ConfigError(f"unknown estimation mode {attack.estimation!r}")
        if attack.correction not in ("pre", "post"):
            raise ConfigError(f"unknown correction mode {attack.correction!r}")
        if aux.count < 1:
            raise ConfigError("attack.aux.count must be >= 1")
        if not aux.mixed:
            if aux.source_class is None or aux.target_class is None:
                raise ConfigError("single-source aux needs source_class and target_class")
            if aux.source_class == aux.target_class:
                raise ConfigError("aux.target_class must differ from source_class")

    aggregation = top["aggregation"]
    if aggregation not in AGGREGATIONS:
        raise ConfigError(f"unknown aggregation {aggregation!r}")
    krum = _section(top["krum"], "krum",
                    {"assumed_byzantine": 1, "squared_distances": False})

    det_raw = _section(top["detection"], "detection", _defaults_of(DetectionConfig))
    if isinstance(det_raw["histogram_range"], list):
        det_raw["histogram_range"] = tuple(det_raw["histogram_range"])
    detection = DetectionConfig(**det_raw)
    kappa = detection.distance_range_threshold
    if isinstance(kappa, str):
        if kappa not in ("auto", "inf"):
            raise ConfigError("distance_range_threshold must be a number, 'auto' or 'inf'")
    elif not isinstance(kappa, (int, float)):
        raise ConfigError("distance_range_threshold must be a number, 'auto' or 'inf'")
    if detection.histogram_bins < 1:
        raise ConfigError("histogram_bins must be >= 1")
    lo, hi = detection.histogram_range
    if not lo < hi:
        raise ConfigError("histogram_range must be increasing")

    return ExperimentConfig(
        seed=top["seed"], dataset=ds, model_layer_sizes=tuple(sizes),
        federation=fed, training=training, attack=attack, aggregation=aggregation,
        krum_assumed_byzantine=int(krum["assumed_byzantine"]),
        krum_squared_distances=bool(krum["squared_distances"]),
        detection=detection, output_dir=top["output_dir"])


def _defaults_of(cls) -> dict:
    from dataclasses import MISSING, fields as dc_fields
    out = {}
    for f in dc_fields(cls):
        if f.default is not MISSING:
            out[f.name] = f.default
        elif f.default_factory is not MISSING:  # type: ignore[misc]
            out[f.name] = f.default_factory()  # type: ignore[misc]
        else:
            out[f.name] = None
    return out


def _normalize_lists(section: dict, keys) -> dict:
    for key in keys:
        if isinstance(section.get(key), list):
            section[key] = tuple(section[key])
    return section


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(raw)


def resolved_range_threshold(detection: DetectionConfig) -> float | None:
    """Numeric threshold, math.inf for the sentinel, or None for 'auto'."""
    kappa = detection.distance_range_threshold
    if kappa == "inf":
        return math.inf
    if kappa == "auto":
        return None
    return float(kappa)
