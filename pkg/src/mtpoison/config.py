"""Experiment configuration: YAML validated against a strict schema before any work starts."""
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainBlock(_Strict):
    lo: Union[float, List[float]] = 0.0
    hi: Union[float, List[float]] = 1.0


class SyntheticBlock(_Strict):
    kind: Literal["two_gaussians", "subpop_blobs"]
    n: int = Field(200, ge=2)
    seed: int = 0


class DatasetBlock(_Strict):
    path: Optional[str] = None
    format: Optional[Literal["csv", "libsvm", "idx-pair"]] = None
    labels_path: Optional[str] = None
    test_path: Optional[str] = None
    test_labels_path: Optional[str] = None
    label_map: Optional[Dict[str, int]] = None
    label_column: Optional[str] = None
    dim: Optional[int] = Field(None, ge=1)
    normalize: Literal["minmax", "none"] = "minmax"
    domain: Optional[DomainBlock] = None
    synthetic: Optional[SyntheticBlock] = None

    @model_validator(mode="after")
    def _source(self):
        if (self.path is None) == (self.synthetic is None):
            raise ValueError("dataset needs exactly one of 'path' or 'synthetic'")
        if self.path is not None and self.format is None:
            raise ValueError("dataset.format is required with dataset.path")
        if self.label_map is not None and any(v not in (-1, 1) for v in self.label_map.values()):
            raise ValueError("label_map values must be -1 or 1")
        return self


class ModelBlock(_Strict):
    loss: Literal["hinge", "logistic"] = "hinge"
    c_r: float = Field(0.01, ge=0.0)
    use_bias: bool = True
    tolerance: float = Field(1e-8, gt=0.0)
    max_iters: int = Field(100_000, ge=1)


class SubpopBlock(_Strict):
    k: int = Field(..., ge=1)
    label_filter: Literal[-1, 1]
    top_m: int = Field(3, ge=0)
    cluster_rank: int = Field(0, ge=0)  # which selected cluster is attacked


class IndiscriminateBlock(_Strict):
    error: float = Field(..., ge=0.0, le=1.0)


class ScenarioBlock(_Strict):
    subpop: Optional[SubpopBlock] = None
    indiscriminate: Optional[IndiscriminateBlock] = None

    @model_validator(mode="after")
    def _one(self):
        if (self.subpop is None) == (self.indiscriminate is None):
            raise ValueError("scenario needs exactly one of 'subpop' or 'indiscriminate'")
        return self


class TargetBlock(_Strict):
    path: Optional[str] = None
    clean: bool = False  # use the clean model as the target
    quantiles: Optional[List[float]] = None
    copies: Optional[List[int]] = None
    adaptive: bool = False
    required_error: Optional[float] = Field(None, ge=0.0, le=1.0)


class AccuracyStop(_Strict):
    scope: Literal["overall", "subpop"]
    threshold: float = Field(..., ge=0.0, le=1.0)


class StopBlock(_Strict):
    budget: Optional[int] = Field(None, ge=1)
    epsilon: Optional[float] = Field(None, gt=0.0)
    accuracy: Optional[AccuracyStop] = None

    @model_validator(mode="after")
    def _one(self):
        if sum(v is not None for v in (self.budget, self.epsilon, self.accuracy)) != 1:
            raise ValueError("stop needs exactly one of 'budget', 'epsilon' or 'accuracy'")
        return self


class OracleBlock(_Strict):
    mode: Literal["exact", "approx"] = "exact"
    restarts: int = Field(10, ge=1)
    steps: int = Field(1000, ge=1)
    lr: float = Field(0.01, gt=0.0)


class AttackBlock(_Strict):
    stop: StopBlock
    copies_per_iter: int = Field(1, ge=1)
    oracle: OracleBlock = OracleBlock()
    max_iterations: int = Field(100_000, ge=1)


class BaselineBlock(_Strict):
    budget: Optional[int] = Field(None, ge=0)  # None: take n_p from the attack summary


class CertifyBlock(_Strict):
    eps: Optional[float] = Field(None, ge=0.0)
    r: Optional[float] = Field(None, gt=0.0)
    q: Optional[float] = Field(None, gt=0.0)
    r_star: Optional[float] = Field(None, ge=0.0)


class OutputBlock(_Strict):
    dir: str = "out"


class ExperimentConfig(_Strict):
    schema_version: int
    seed: int = 0
    dataset: DatasetBlock
    model: ModelBlock = ModelBlock()
    scenario: Optional[ScenarioBlock] = None
    target: TargetBlock = TargetBlock()
    attack: Optional[AttackBlock] = None
    baseline: BaselineBlock = BaselineBlock()
    certify: CertifyBlock = CertifyBlock()
    output: OutputBlock = OutputBlock()

    @model_validator(mode="after")
    def _version(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version} (expected {SCHEMA_VERSION})")
        return self


def _short(err):
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(raw, base_dir=None):
    """Validate a mapping; relative dataset paths resolve against ``base_dir``."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_short(exc)) from None
    if base_dir is not None:
        ds = cfg.dataset
        fix = {}
        for key in ("path", "labels_path", "test_path", "test_labels_path"):
            v = getattr(ds, key)
            if v is not None and not Path(v).is_absolute():
                fix[key] = str(Path(base_dir) / v)
        if fix:
            cfg = cfg.model_copy(update={"dataset": ds.model_copy(update=fix)})
        if cfg.target.path is not None and not Path(cfg.target.path).is_absolute():
            cfg = cfg.model_copy(update={"target": cfg.target.model_copy(
                update={"path": str(Path(base_dir) / cfg.target.path)})})
    return cfg


def load_config(path):
    path = Path(path)
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({str(exc).splitlines()[0]})") from None
    return parse_config(raw, path.parent)
