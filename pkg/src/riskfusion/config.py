"""Pipeline configuration: one nested YAML file over built-in defaults."""

from __future__ import annotations

import dataclasses
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigError
from .synthcity import SynthSpec
from .training import TrainConfig

MODEL_KINDS = ("fcn", "feature_dfnn", "model_dfnn", "cnne")
INPUTS = ("uv", "u", "v", "vu")


@dataclass
class PathsConfig:
    workdir: str = "work"
    # raw sources; ``None`` means the file the synth stage writes under workdir/raw
    gps: str | None = None
    poi: str | None = None
    osm: str | None = None
    tiles: str | None = None
    cnn: str | None = None
    accidents: str | None = None


@dataclass
class GridConfig:
    # [lat_min, lat_max, lon_min, lon_max]; ``None`` takes the synth stage's grid
    bbox: list[float] | None = None
    rows: int | None = None
    cols: int | None = None
    cell_km: float = 1.0


@dataclass
class FeatureConfig:
    d_tra: int = 48
    d_poi: int = 16
    d_con: int = 3
    d_wid: int = 4
    d_fra: int = 8
    d_cnn: int = 45
    patches_per_tile: int = 16
    cnn: bool = True

    @property
    def d_u(self) -> int:
        return self.d_tra + self.d_poi + self.d_con + self.d_wid

    @property
    def d_v(self) -> int:
        return self.d_fra + self.d_cnn


@dataclass
class ModelConfig:
    kind: str = "model_dfnn"
    inputs: str = "uv"


@dataclass
class EvalConfig:
    folds: int = 5
    models: list[str] = field(default_factory=lambda: ["fcn", "cnne", "feature_dfnn",
                                                       "model_dfnn"])
    features: list[str] = field(default_factory=lambda: ["uv", "u", "v"])


@dataclass
class AttributeConfig:
    steps: int = 50
    # cells to explain as [row, col]; empty means every cell predicted high risk
    cells: list[list[int]] = field(default_factory=list)
    max_cells: int = 20


@dataclass
class PipelineConfig:
    seed: int = 42
    paths: PathsConfig = field(default_factory=PathsConfig)
    grid: GridConfig = field(default_factory=GridConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    attribute: AttributeConfig = field(default_factory=AttributeConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)

    @property
    def workdir(self) -> Path:
        return Path(self.paths.workdir)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)


def _build(cls, data: Any, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<root>", f"expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        path = f"{prefix}.{key}" if prefix else str(key)
        if key not in known:
            raise ConfigError(path, "unknown key")
        default = getattr(cls(), key) if cls is not SynthSpec else getattr(SynthSpec(), key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, path)
        else:
            kwargs[key] = _coerce(value, default, path)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(prefix or "<root>", str(exc)) from exc


def _coerce(value, default, path: str):
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, list) and not isinstance(value, list):
        raise ConfigError(path, f"expected a list, got {value!r}")
    return value


def validate(cfg: PipelineConfig) -> PipelineConfig:
    if cfg.model.kind not in MODEL_KINDS:
        raise ConfigError("model.kind", f"must be one of {', '.join(MODEL_KINDS)}")
    if cfg.model.inputs not in INPUTS:
        raise ConfigError("model.inputs", f"must be one of {', '.join(INPUTS)}")
    for name in ("d_tra", "d_poi", "d_con", "d_wid", "d_fra", "d_cnn", "patches_per_tile"):
        if getattr(cfg.features, name) <= 0:
            raise ConfigError(f"features.{name}", "must be positive")
    for k in cfg.eval.models:
        if k not in MODEL_KINDS:
            raise ConfigError("eval.models", f"unknown model kind {k!r}")
    for f in cfg.eval.features:
        if f not in INPUTS:
            raise ConfigError("eval.features", f"unknown feature set {f!r}")
    if cfg.eval.folds < 2:
        raise ConfigError("eval.folds", "need at least 2 folds")
    if cfg.attribute.steps < 1:
        raise ConfigError("attribute.steps", "must be at least 1")
    g = cfg.grid
    if g.bbox is not None and len(g.bbox) != 4:
        raise ConfigError("grid.bbox", "expected [lat_min, lat_max, lon_min, lon_max]")
    for name in ("rows", "cols"):
        v = getattr(g, name)
        if v is not None and v <= 0:
            raise ConfigError(f"grid.{name}", "must be positive")
    if g.cell_km <= 0:
        raise ConfigError("grid.cell_km", "must be positive")
    if cfg.seed < 0:
        raise ConfigError("seed", "must be non-negative")
    return cfg


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Defaults, then the YAML file at ``path`` (if any), then ``overrides``."""
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError("--config", f"no such file {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError("--config", f"invalid YAML: {exc}") from exc
        data = loaded or {}
    for key, value in (overrides or {}).items():
        node = data
        *parents, leaf = key.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    return validate(_build(PipelineConfig, data, ""))
