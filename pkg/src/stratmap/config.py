"""Run configuration loaded from YAML."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .backtester import CostModel
from .feature_map import DEFAULT_RANGES, EQUITY_TAXONOMY, FeatureDimension, default_dimensions
from .generators.llm import EndpointConfig
from .market_data import EQUITY_SPLITS, FUTURES_SPLITS, SplitSpec
from .sampling import SamplingConfig


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SamplingSection(_Strict):
    alpha: float = Field(0.5, ge=0, le=1)
    sigma_d: float = Field(1.0, gt=0)
    k_bf: Optional[int] = Field(None, ge=0)
    n_best: int = Field(2, ge=0)
    n_diverse: int = Field(3, ge=0)
    n_random: int = Field(2, ge=0)
    attempts_per_diverse: int = Field(10, ge=1)

    def build(self) -> SamplingConfig:
        return SamplingConfig(**self.model_dump())


class FeatureSection(_Strict):
    bins: int = Field(16, ge=1)
    use_category: bool = True
    ranges: dict[str, tuple[float, float]] = Field(default_factory=dict)

    @field_validator("ranges")
    @classmethod
    def _known(cls, v):
        unknown = set(v) - set(DEFAULT_RANGES)
        if unknown:
            raise ValueError(f"unknown feature dimensions {sorted(unknown)}")
        return v


class CostSection(_Strict):
    per_share_cost: float = Field(0.0075, ge=0)
    min_trade_cost: float = Field(1.00, ge=0)
    slippage_impact: float = Field(0.1, ge=0)
    volume_limit: float = Field(0.025, gt=0, le=1)
    commission_mode: Literal["per_share", "percent"] = "per_share"
    percent_rate: float = Field(0.00075, ge=0)
    zero_cost: bool = False

    def build(self) -> CostModel:
        if self.zero_cost:
            return CostModel.zero()
        d = self.model_dump(exclude={"zero_cost"})
        return CostModel(**d)


class SplitSection(_Strict):
    preset: Optional[Literal["equity", "futures"]] = None
    train: Optional[tuple[str, str]] = None
    valid: Optional[tuple[str, str]] = None
    test: Optional[tuple[str, str]] = None

    @model_validator(mode="after")
    def _either(self):
        given = [x is not None for x in (self.train, self.valid, self.test)]
        if self.preset is None and not all(given):
            raise ValueError("give a preset or all of train, valid and test")
        if self.preset is not None and any(given):
            raise ValueError("preset and explicit ranges are mutually exclusive")
        return self

    def build(self) -> SplitSpec:
        if self.preset == "equity":
            return EQUITY_SPLITS
        if self.preset == "futures":
            return FUTURES_SPLITS
        return SplitSpec.from_strings(self.train, self.valid, self.test)


class EndpointSection(_Strict):
    base_url: str = "http://localhost:8000/v1"
    model: str = "default"
    temperature: float = 0.7
    api_key_env: str = "STRATMAP_API_KEY"
    timeout: float = Field(60.0, gt=0)
    max_retries: int = Field(2, ge=0)
    backoff: float = Field(1.0, ge=0)
    max_concurrency: int = Field(4, ge=1)

    def build(self) -> EndpointConfig:
        return EndpointConfig(**self.model_dump())


class GeneratorSection(_Strict):
    kind: Literal["mutational", "llm"] = "mutational"
    endpoint: EndpointSection = Field(default_factory=EndpointSection)
    prompts_dir: Optional[str] = None
    repair_budget: int = Field(3, ge=0)


class RunConfig(_Strict):
    name: str = "run"
    data: str
    splits: SplitSection
    taxonomy: list[str] = Field(default_factory=lambda: list(EQUITY_TAXONOMY))
    generations: int = Field(150, ge=0)
    migration_interval: int = Field(10, ge=1)
    migration_fraction: float = Field(0.10, gt=0, le=1)
    insight_interval: int = Field(50, ge=1)
    insight_max: int = Field(200, ge=1)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    features: FeatureSection = Field(default_factory=FeatureSection)
    cost: CostSection = Field(default_factory=CostSection)
    initial_capital: float = Field(1_000_000.0, gt=0)
    allow_short: bool = False
    fill_mode: Literal["close", "next_open"] = "close"
    benchmark: Literal["equal_weight", "buy_hold", "market_cap"] = "equal_weight"
    market_cap_shares: Optional[dict[str, float]] = None
    generator: GeneratorSection = Field(default_factory=GeneratorSection)
    param_bounds: dict[str, tuple[int, int]] = Field(default_factory=dict)
    kind_table: Optional[dict[str, str]] = None
    seeds: dict[str, str] = Field(default_factory=dict)
    seed: int = 0
    run_dir: str = "runs/default"
    parallel: bool = False
    workers: int = Field(4, ge=1)
    # directory the relative paths above resolve against; not part of the file format
    base_dir: str = Field(".", exclude=True)

    @field_validator("taxonomy")
    @classmethod
    def _taxonomy(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError("taxonomy must be non-empty with unique names")
        return v

    @model_validator(mode="after")
    def _benchmark(self):
        if self.benchmark == "market_cap" and not self.market_cap_shares:
            raise ValueError("benchmark market_cap needs market_cap_shares")
        return self

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def data_path(self) -> Path:
        return self.resolve(self.data)

    @property
    def run_path(self) -> Path:
        return self.resolve(self.run_dir)

    def dimensions(self) -> list[FeatureDimension]:
        return default_dimensions(self.taxonomy, self.features.bins, self.features.ranges,
                                  self.features.use_category)

    def config_hash(self) -> str:
        """Digest of every setting that changes the evolved database."""
        skip = {"generations", "run_dir", "parallel", "workers", "name"}
        doc = self.model_dump(mode="json", exclude=skip)
        doc["generator"].pop("prompts_dir", None)
        doc["generator"]["endpoint"].pop("max_concurrency", None)
        doc["generator"]["endpoint"].pop("timeout", None)
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def load_config(path: str | Path, **overrides) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    doc.update(overrides)
    doc["base_dir"] = str(path.resolve().parent)
    return parse_config(doc)


def parse_config(doc: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(doc)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid config: {problems}") from exc


__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]
