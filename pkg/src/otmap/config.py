"""
Experiment configuration: YAML files validated into pydantic models, plus env settings.

Each CLI command reads one YAML document into its model. ``--set dotted.key=value``
overrides are applied to the raw document before validation; the value is parsed as
YAML, so ``--set reg.epsilon=[0.025,0.1,1.0]`` declares a sweep.

Process-level switches come from the environment (prefix OTMAP_, .env honoured):

    OTMAP_OUTPUT_DIR      where command outputs go (default: outputs)
    OTMAP_DETERMINISTIC   strip wall-clock values from written artifacts (default: true)
    OTMAP_STRICT_CHECKS   failing acceptance checks exit with code 1 (default: false)
    OTMAP_CHECKS_PATH     alternative acceptance checks YAML

Usage:
    from otmap.config import SolveConfig, load_config

    cfg = load_config("configs/solve.yml", SolveConfig, ["reg.epsilon=0.05"])
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Literal, TypeVar

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from otmap.dual_solver import DualSolverConfig, Regularization
from otmap.exceptions import ConfigError
from otmap.map_learn import MapTrainConfig
from otmap.measures import CostFn
from otmap.nn import Activation

logger = logging.getLogger("otmap.config")

ModelT = TypeVar("ModelT", bound=BaseModel)

# Grids used for adaptation reports
SINKHORN_EPS_GRID = [0.01, 0.1, 0.5, 0.9, 2.0, 5.0, 10.0]
REG_GRID = [5.0, 2.0, 0.9, 0.5, 0.1, 0.05, 0.01]
LR_GRID = [2.0, 0.9, 0.1, 0.01, 0.001, 0.0001]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# =============================================================================
# Shared blocks
# =============================================================================


class MixtureComponentSpec(StrictModel):
    weight: float = Field(gt=0)
    mean: list[float]
    covariance: list[list[float]]


class MeasureSpec(StrictModel):
    """
    One marginal. ``samples`` turns a continuous law into an empirical measure of that
    many i.i.d. points; without it Gaussian and mixture sources stay continuous.
    """

    kind: Literal["csv", "gaussian", "mixture", "blobs", "ring", "fitted_gaussian"]
    path: Path | None = None
    has_weights: bool = False
    has_labels: bool = False
    mean: list[float] | None = None
    covariance: list[list[float]] | None = None
    components: list[MixtureComponentSpec] | None = None
    samples: int | None = Field(default=None, ge=1)
    seed: int | None = None
    # blobs / ring
    role: Literal["source", "target"] = "source"
    k: int = Field(default=3, ge=1)
    per_class: int = Field(default=100, ge=1)
    dim: int = Field(default=2, ge=1)
    shift: list[float] | None = None
    rotation_deg: float = 0.0
    radius: float = Field(default=4.0, gt=0)
    spread: float = Field(default=0.6, gt=0)
    ridge: float = Field(default=0.0, ge=0)

    @model_validator(mode="after")
    def _check_kind_fields(self) -> MeasureSpec:
        if self.kind == "csv" and self.path is None:
            raise ValueError("csv measures need a path")
        if self.kind == "gaussian" and (self.mean is None or self.covariance is None):
            raise ValueError("gaussian measures need mean and covariance")
        if self.kind == "mixture" and not self.components:
            raise ValueError("mixture measures need at least one component")
        if self.kind == "blobs" and self.k < 2:
            raise ValueError("blobs need k >= 2 classes")
        return self


class RegSpec(StrictModel):
    kind: Literal["entropy", "l2"] = "entropy"
    epsilon: float | list[float] = 0.1

    @field_validator("epsilon")
    @classmethod
    def _positive(cls, value):
        values = value if isinstance(value, list) else [value]
        if not values:
            raise ValueError("epsilon sweep must not be empty")
        if any(not v > 0 for v in values):
            raise ValueError("epsilon must be positive")
        return value

    @property
    def epsilons(self) -> list[float]:
        return list(self.epsilon) if isinstance(self.epsilon, list) else [self.epsilon]

    @property
    def is_sweep(self) -> bool:
        return isinstance(self.epsilon, list)

    def build(self, epsilon: float | None = None) -> Regularization:
        return Regularization(self.kind, self.epsilons[0] if epsilon is None else epsilon)


class CostSpec(StrictModel):
    kind: Literal["sqeuclidean", "euclidean"] = "sqeuclidean"
    normalize: Literal["none", "median"] = "none"
    scale: float = Field(default=1.0, gt=0)

    def build(self, scale: float | None = None) -> CostFn:
        return CostFn(self.kind, scale=self.scale if scale is None else scale)


class SolverSpec(StrictModel):
    batch_size: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=1.0, gt=0)
    iterations: int = Field(default=1000, ge=1)
    seed: int = 0
    log_every: int = Field(default=100, ge=1)
    lr_decay: float = Field(default=0.0, ge=0)
    averaging_start: int | None = Field(default=None, ge=1)
    vector_optimizer: Literal["sgd", "adam"] = "sgd"
    potential_hidden: list[int] = Field(default_factory=lambda: [1024, 1024])
    eval_batches: int = Field(default=4, ge=1)

    def build(self, **overrides: Any) -> DualSolverConfig:
        values = self.model_dump()
        values["potential_hidden"] = tuple(values["potential_hidden"])
        values.update(overrides)
        return DualSolverConfig(**values)


class MapSpec(StrictModel):
    batch_size: int = Field(default=256, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    iterations: int = Field(default=2000, ge=1)
    seed: int = 0
    log_every: int = Field(default=100, ge=1)
    hidden: list[int] = Field(default_factory=lambda: [200, 500])
    output_activation: Literal["identity", "tanh"] = "identity"
    normalize: bool = True
    projection_cost: Literal["sqeuclidean", "euclidean"] = "sqeuclidean"

    def build(self, **overrides: Any) -> MapTrainConfig:
        values: dict[str, Any] = self.model_dump()
        values["hidden"] = tuple(values["hidden"])
        values["output_activation"] = Activation(values["output_activation"])
        values["projection_cost"] = CostFn(values["projection_cost"])
        values.update(overrides)
        return MapTrainConfig(**values)


# =============================================================================
# Command configs
# =============================================================================


class SolveConfig(StrictModel):
    name: str = "solve"
    source: MeasureSpec
    target: MeasureSpec
    reg: RegSpec = Field(default_factory=RegSpec)
    cost: CostSpec = Field(default_factory=CostSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    sinkhorn_limit: int = Field(default=1_000_000, ge=0)
    export_plan: bool = False


class MapTrainConfigModel(StrictModel):
    name: str = "map"
    source: MeasureSpec
    target: MeasureSpec
    reg: RegSpec = Field(default_factory=RegSpec)
    cost: CostSpec = Field(default_factory=CostSpec)
    map: MapSpec = Field(default_factory=MapSpec)
    reverse: bool = False

    @field_validator("reg")
    @classmethod
    def _single_epsilon(cls, value: RegSpec) -> RegSpec:
        if value.is_sweep:
            raise ValueError("map training takes a single epsilon")
        return value


class GenerateConfig(StrictModel):
    name: str = "generate"
    source: MeasureSpec
    target: MeasureSpec | None = None
    samples: int = Field(default=100_000, ge=1)
    seed: int = 0
    histogram_bins: int = Field(default=100, ge=1)
    histogram_bounds: list[list[float]] | None = None
    displacement_grid: int | None = Field(default=20, ge=2)
    chunk_size: int = Field(default=50_000, ge=1)

    @model_validator(mode="after")
    def _fitted_needs_target(self) -> GenerateConfig:
        if self.source.kind == "fitted_gaussian" and self.target is None:
            raise ValueError("a fitted_gaussian source needs a target measure to fit")
        if self.histogram_bounds is not None and (
            len(self.histogram_bounds) != 2 or any(len(b) != 2 for b in self.histogram_bounds)
        ):
            raise ValueError("histogram_bounds must be [[xmin, xmax], [ymin, ymax]]")
        return self


class BlobSpec(StrictModel):
    k: int = Field(default=3, ge=2)
    per_class: int = Field(default=100, ge=1)
    dim: int = Field(default=2, ge=1)
    shift: list[float] | None = Field(default_factory=lambda: [0.0, -3.0])
    rotation_deg: float = 30.0
    radius: float = Field(default=4.0, gt=0)
    spread: float = Field(default=0.6, gt=0)


class DaConfig(StrictModel):
    name: str = "da"
    seed: int = 0
    blobs: BlobSpec = Field(default_factory=BlobSpec)
    source: MeasureSpec | None = None
    target: MeasureSpec | None = None
    cost: CostSpec = Field(default_factory=lambda: CostSpec(normalize="median"))
    sinkhorn_grid: list[float] = Field(default_factory=lambda: list(SINKHORN_EPS_GRID))
    reg_grid: list[float] = Field(default_factory=lambda: list(REG_GRID))
    lr_grid: list[float] = Field(default_factory=lambda: [0.001])
    methods: list[Literal["exact", "sinkhorn", "dual_bp", "map"]] = Field(
        default_factory=lambda: ["exact", "sinkhorn", "dual_bp", "map"]
    )
    reg_kinds: list[Literal["entropy", "l2"]] = Field(default_factory=lambda: ["entropy", "l2"])
    solver: SolverSpec = Field(default_factory=SolverSpec)
    map: MapSpec = Field(default_factory=MapSpec)
    oracle_selection: bool = False
    selection_epsilon: float = Field(default=0.1, gt=0)
    selection_learning_rate: float = Field(default=0.001, gt=0)

    @model_validator(mode="after")
    def _check(self) -> DaConfig:
        for name in ("sinkhorn_grid", "reg_grid", "lr_grid"):
            grid = getattr(self, name)
            if not grid or any(not g > 0 for g in grid):
                raise ValueError(f"{name} must be a non-empty list of positive values")
        if (self.source is None) != (self.target is None):
            raise ValueError("give both source and target measures, or neither")
        if self.source is not None and not (self.source.has_labels and self.target.has_labels):
            raise ValueError("adaptation measures need label columns (has_labels: true)")
        return self


class BenchmarkConfig(StrictModel):
    name: str = "benchmark"
    seed: int = 0
    sizes: list[int] = Field(default_factory=lambda: [1000, 10_000, 100_000])
    dim: int = Field(default=2, ge=1)
    batch_size: int = Field(default=100, ge=1)
    epsilons: list[float] = Field(default_factory=lambda: [0.025, 0.1, 1.0])
    timing_iterations: int = Field(default=100, ge=1)
    eval_batch_size: int = Field(default=1000, ge=1)
    iterations: int = Field(default=20_000, ge=1)
    log_every: int = Field(default=500, ge=1)
    dual_learning_rate: float = Field(default=1.0, gt=0)
    semi_dual_learning_rate: float = Field(default=1.0, gt=0)
    # Sinkhorn reference up to this many cost entries (rebuilt blockwise, never stored)
    sinkhorn_limit: int = Field(default=100_000_000, ge=0)
    sinkhorn_max_iters: int = Field(default=2_000, ge=1)
    sinkhorn_tol: float = Field(default=1e-6, gt=0)
    reach_tolerance: float = Field(default=1e-2, gt=0)
    curve_size: int | None = Field(default=10_000, ge=1)

    @field_validator("sizes")
    @classmethod
    def _sizes(cls, value: list[int]) -> list[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("sizes must be a non-empty list of positive integers")
        return value


class ConvergeConfig(StrictModel):
    name: str = "converge"
    seed: int = 0
    plan_sizes: list[int] = Field(default_factory=lambda: [8, 16])
    epsilons: list[float] = Field(default_factory=lambda: [1.0, 0.3, 0.1, 0.03, 0.01])
    assignment_n: int = Field(default=6, ge=2, le=8)
    assignment_epsilon: float = Field(default=0.01, gt=0)
    gaussian_sizes: list[int] = Field(default_factory=lambda: [256, 1024, 4096])
    gaussian_epsilon: float = Field(default=0.05, gt=0)
    gaussian_dim: int = Field(default=2, ge=1)
    sinkhorn_max_iters: int = Field(default=100_000, ge=1)
    gaussian_max_iters: int = Field(default=5_000, ge=1)
    crosscheck_instances: int = Field(default=20, ge=0)
    # learned map on the Gaussian pair, fitted from dual SGD potentials
    learned_map: bool = True
    learned_map_samples: int = Field(default=2048, ge=2)
    learned_map_holdout: int = Field(default=1000, ge=2)
    learned_map_epsilons: list[float] = Field(default_factory=lambda: [1.0, 0.1, 0.01])
    solver: SolverSpec = Field(
        default_factory=lambda: SolverSpec(
            batch_size=256, learning_rate=0.05, iterations=20_000, log_every=1000,
            averaging_start=10_000, vector_optimizer="adam",
        )
    )
    map: MapSpec = Field(
        default_factory=lambda: MapSpec(batch_size=256, iterations=5000, log_every=500)
    )

    @field_validator("learned_map_epsilons")
    @classmethod
    def _positive_epsilons(cls, value: list[float]) -> list[float]:
        if any(not e > 0 for e in value):
            raise ValueError("learned_map_epsilons must be positive")
        return value

    @field_validator("plan_sizes")
    @classmethod
    def _small(cls, value: list[int]) -> list[int]:
        if not value or any(n < 1 or n > 128 for n in value):
            raise ValueError("plan_sizes must lie in [1, 128]")
        return value


# =============================================================================
# Loading
# =============================================================================


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="OTMAP_", env_file=".env", extra="ignore")

    output_dir: Path = Path("outputs")
    deterministic: bool = True
    strict_checks: bool = False
    checks_path: Path | None = None


def apply_overrides(data: dict[str, Any], overrides: list[str] | None) -> dict[str, Any]:
    """Apply ``dotted.key=value`` assignments, values parsed as YAML."""
    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like dotted.key=value, got {item!r}")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse override value in {item!r}: {e}") from e
        parts = key.strip().split(".")
        node = data
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping at {part!r}")
            node = child
        node[parts[-1]] = value
        logger.debug(f"Override {key} = {value!r}")
    return data


def parse_config(data: dict[str, Any], model: type[ModelT]) -> ModelT:
    try:
        return model.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid {model.__name__}: {e}") from e


def load_config(path, model: type[ModelT], overrides: list[str] | None = None) -> ModelT:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        with open(path) as f:
            data = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a mapping at the top level")
    cfg = parse_config(apply_overrides(data, overrides), model)
    logger.info(f"Loaded {model.__name__} from {path}")
    return cfg
