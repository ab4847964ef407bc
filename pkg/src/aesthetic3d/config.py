"""Pipeline configuration: nested dataclasses stored as YAML."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .btrank import DEFAULT_LAMBDA
from .forest import DEFAULT_GRID


class ConfigError(ValueError):
    pass


@dataclass
class PathsConfig:
    mesh_dir: str = "meshes"
    comparisons: str = "comparisons.csv"
    output_dir: str = "out"


@dataclass
class FeatureParams:
    k: int = 20
    n_points: int = 5000
    sample_mode: str = "surface"
    resolution: int = 64
    n_planes: int = 8
    n_views: int = 8
    skeleton_method: str = "zhang-suen"
    normalize: bool = True
    category_scale: float = 1.0


@dataclass
class BTParams:
    lam: float = DEFAULT_LAMBDA
    tol: float = 1e-8
    max_iter: int = 100


@dataclass
class ForestParams:
    grid: dict = field(default_factory=lambda: copy.deepcopy(DEFAULT_GRID))
    cv_folds: int = 5
    weighted: bool = True
    # fixed hyperparameters skip the grid search when set
    hyperparams: dict | None = None


@dataclass
class ExplainParams:
    method: str = "path"
    pdp_grid: int = 20
    pdp_features: list | None = None


@dataclass
class CrosscatParams:
    categories: list = field(default_factory=list)
    statistic: str = "wilks"


@dataclass
class SynthParams:
    n_shapes: int = 40
    kinds: list = field(default_factory=lambda: ["box", "cylinder", "lathe", "prong-union", "cavity-box"])
    corpus_seed: int = 0
    weights: dict = field(default_factory=lambda: {"surface_to_volume_ratio": 1.5})
    interactions: list = field(default_factory=list)   # [feature_a, feature_b, weight]
    noise: float = 0.0
    comparisons_per_shape: int = 40
    hyperparams: dict = field(default_factory=lambda: {"n_trees": 100, "max_depth": None, "min_samples_leaf": 1})
    test_fraction: float = 0.25


@dataclass
class PipelineConfig:
    category: str = "default"
    seed: int = 42
    paths: PathsConfig = field(default_factory=PathsConfig)
    features: FeatureParams = field(default_factory=FeatureParams)
    bt: BTParams = field(default_factory=BTParams)
    forest: ForestParams = field(default_factory=ForestParams)
    explain: ExplainParams = field(default_factory=ExplainParams)
    crosscat: CrosscatParams = field(default_factory=CrosscatParams)
    synth: SynthParams = field(default_factory=SynthParams)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        return _build(cls, data or {}, "config")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    @classmethod
    def from_yaml(cls, text: str) -> "PipelineConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path) as fh:
                return cls.from_yaml(fh.read())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None

    def sha256(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = fields[name].type
        sub = _NESTED.get(ftype)
        if sub is not None:
            kwargs[name] = _build(sub, value, f"{where}.{name}")
        else:
            kwargs[name] = _check_scalar(value, fields[name], f"{where}.{name}")
    return cls(**kwargs)


def _check_scalar(value, f, where):
    kind = f.type
    if kind == "int" and (isinstance(value, bool) or not isinstance(value, int)):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if kind == "float":
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a dot, like 1e-8, as strings
            try:
                value = float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind == "bool" and not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    if kind == "str" and not isinstance(value, str):
        raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


_NESTED = {
    "PathsConfig": PathsConfig, "FeatureParams": FeatureParams, "BTParams": BTParams,
    "ForestParams": ForestParams, "ExplainParams": ExplainParams, "CrosscatParams": CrosscatParams,
    "SynthParams": SynthParams,
}
