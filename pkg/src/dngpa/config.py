"""Run configuration: one JSON document with a block per pipeline stage.

Every block maps onto a dataclass whose defaults are the published model
parameters.  Unknown keys anywhere are collected and reported together.
"""

from __future__ import annotations

import json
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

from .models.assembly import KINDS, ModelConfig
from .models.training import TrainConfig
from .signal import RegionSpec
from .simgen import DatasetSpec, SimConfig


class ConfigError(ValueError):
    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.problems))


@dataclass(frozen=True)
class DatasetOptions:
    id_grid: tuple[float, float, float] = (2900.0, 4000.0, 100.0)
    ood_grid: tuple[float, float, float] = (2500.0, 2800.0, 100.0)
    n_train: int = 1382
    split_seed: int = 0
    lulu_window: int = 1
    clean: bool = True


@dataclass(frozen=True)
class MetricsOptions:
    n_levels: int = 100
    pair_fraction: float = 1.0
    distance_layer: str = "extractor"
    distance_rows: int = 0  # 0 = whole train split

    def __post_init__(self):
        if self.n_levels < 2:
            raise ValueError("n_levels must be >= 2")
        if not 0.0 < self.pair_fraction <= 1.0:
            raise ValueError("pair_fraction must be in (0, 1]")
        if self.distance_layer not in ("extractor", "latent"):
            raise ValueError("distance_layer must be 'extractor' or 'latent'")
        if self.distance_rows < 0:
            raise ValueError("distance_rows must be >= 0")


@dataclass(frozen=True)
class Seeds:
    model: int = 0
    ensemble_base: int = 0
    pairs: int = 0


@dataclass(frozen=True)
class Paths:
    data: str | None = None
    out: str | None = None


@dataclass(frozen=True)
class RunConfig:
    kind: str = "svd_dngpa"
    simgen: SimConfig = field(default_factory=SimConfig)
    region: RegionSpec = field(default_factory=RegionSpec)
    dataset: DatasetOptions = field(default_factory=DatasetOptions)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    metrics: MetricsOptions = field(default_factory=MetricsOptions)
    seeds: Seeds = field(default_factory=Seeds)
    paths: Paths = field(default_factory=Paths)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(region=self.region, **asdict(self.dataset))

    def with_kind(self, kind: str) -> "RunConfig":
        if kind not in KINDS:
            raise ConfigError([f"model.kind: unknown kind {kind!r}; expected one of {list(KINDS)}"])
        return replace(self, kind=kind)

    def to_dict(self) -> dict:
        """Every resolved value, including the per-kind training defaults."""
        model = {"kind": self.kind, **self.model.to_dict()}
        return {
            "simgen": self.simgen.to_dict(),
            "region": self.region.to_dict(),
            "dataset": _jsonable(asdict(self.dataset)),
            "model": model,
            "training": self.training.resolved(self.kind).to_dict(),
            "metrics": asdict(self.metrics),
            "seeds": asdict(self.seeds),
            "paths": asdict(self.paths),
        }


BLOCKS = {
    "simgen": SimConfig,
    "region": RegionSpec,
    "dataset": DatasetOptions,
    "model": ModelConfig,
    "training": TrainConfig,
    "metrics": MetricsOptions,
    "seeds": Seeds,
    "paths": Paths,
}


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(cls, block: str, raw: dict, problems: list[str]):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            problems.append(f"{block}.{key}: unknown key")
            continue
        f = known[key]
        default = f.default if f.default is not MISSING else None
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)) or len(value) != len(default):
                problems.append(f"{block}.{key}: expected a list of {len(default)} numbers")
                continue
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                problems.append(f"{block}.{key}: expected true or false")
                continue
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                problems.append(f"{block}.{key}: expected a number")
                continue
            if isinstance(default, int) and isinstance(value, float) and not value.is_integer():
                problems.append(f"{block}.{key}: expected an integer")
                continue
            value = type(default)(value)
        kwargs[key] = value
    return kwargs


def parse_config(doc: dict | None) -> RunConfig:
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])
    problems: list[str] = []
    for key in doc:
        if key not in BLOCKS:
            problems.append(f"{key}: unknown block")
    parsed = {}
    kind = "svd_dngpa"
    for block, cls in BLOCKS.items():
        raw = doc.get(block, {})
        if not isinstance(raw, dict):
            problems.append(f"{block}: expected an object")
            continue
        raw = dict(raw)
        if block == "model":
            kind = raw.pop("kind", kind)
            if kind not in KINDS:
                problems.append(f"model.kind: unknown kind {kind!r}; expected one of {list(KINDS)}")
        parsed[block] = _coerce(cls, block, raw, problems)
    if problems:
        raise ConfigError(problems)
    built = {}
    for block, cls in BLOCKS.items():
        try:
            built[block] = cls(**parsed[block])
        except (ValueError, TypeError) as e:
            problems.append(f"{block}: {e}")
    if problems:
        raise ConfigError(problems)
    return RunConfig(kind=kind, **built)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as e:
        raise ConfigError([f"config file not found: {path}"]) from e
    except json.JSONDecodeError as e:
        raise ConfigError([f"config is not valid JSON: {e}"]) from e
    return parse_config(doc)
