"""
Run configuration: defaults, flat ``key = value`` config files and command-line
overrides, resolved into one RunConfig that is written next to every run's outputs.
"""

import io
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import psutil
from dotenv import dotenv_values
from dotenv.parser import parse_stream
from pydantic import Field, validator

from models.dataset import DEFAULT_THRESHOLDS, DatasetKind
from models.network import TrainConfig
from models.pipeline import (
    Aggregation,
    EvalConfig,
    FusionConfig,
    MorphologyOptions,
    MorphologyOrder,
    SamplingPolicy,
    SEShape,
    SweepGrid,
)
from models.schema import Schema
from utils.errors import ConfigError, DataIOError

logger = logging.getLogger("config")

WORKERS_ENV = "CRACK_WORKERS"
RESOLVED_NAME = "config.resolved"
LIST_FIELDS = {"n_grid", "t_grid"}
NONE_VALUES = {"", "none", "null"}


class RunConfig(Schema):
    """Every setting a command may use, flat so it maps one-to-one onto the config file"""

    # dataset
    dataset: DatasetKind = DatasetKind.CUSTOM
    root: Optional[str] = None
    split_file: Optional[str] = None
    split_seed: int = 0
    train_count: Optional[int] = Field(None, ge=0)
    test_count: Optional[int] = Field(None, ge=0)
    train_limit: Optional[int] = Field(None, ge=1)
    test_limit: Optional[int] = Field(None, ge=1)

    # outputs and models
    out: str = "out"
    model: Optional[str] = None
    seed: int = 0
    members: int = Field(3, ge=1)
    workers: Optional[int] = Field(None, ge=1)

    # training
    learning_rate: float = Field(0.001, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(256, ge=1)
    epochs: int = Field(20, ge=1)
    l2_beta: float = Field(5e-4, ge=0)
    dropout_rate: float = Field(0.5, ge=0, lt=1)
    max_positive_per_image: int = Field(2000, ge=1)
    negative_to_positive_ratio: float = Field(1.0, gt=0)
    empty_mask_negatives: int = Field(100, ge=0)

    # inference and fusion
    stride: int = 1
    member_count: Optional[int] = Field(None, ge=1)
    threshold: Optional[float] = Field(None, ge=0, le=1)

    # morphology and measurement
    morphology_order: MorphologyOrder = MorphologyOrder.CLOSE_OPEN
    se_shape: SEShape = SEShape.SQUARE
    se_size: int = 3
    min_area: int = Field(16, ge=0)
    connectivity: int = 8
    calibration: float = Field(1.0, gt=0)

    # evaluation and sweep
    tolerance_px: float = Field(2.0, ge=0)
    aggregation: Aggregation = Aggregation.MACRO
    evaluate_refined: bool = False
    n_grid: List[int] = [1, 3, 5, 7]
    t_grid: List[float] = [0.4, 0.5, 0.6, 0.7]

    class Config:
        extra = "forbid"
        validate_assignment = True

    @validator("stride")
    def known_stride(cls, value):
        if value not in (1, 5):
            raise ValueError(f"stride must be 1 or 5, got {value}")
        return value

    def train_config(self) -> TrainConfig:
        return TrainConfig.build(
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            batch_size=self.batch_size,
            epochs=self.epochs,
            l2_beta=self.l2_beta,
            dropout_rate=self.dropout_rate,
            rng_seed=self.seed,
        )

    def sampling_policy(self) -> SamplingPolicy:
        return SamplingPolicy.build(
            max_positive_per_image=self.max_positive_per_image,
            negative_to_positive_ratio=self.negative_to_positive_ratio,
            empty_mask_negatives=self.empty_mask_negatives,
        )

    def fusion_config(self, available: Optional[int] = None) -> FusionConfig:
        """Fusion settings; without an explicit member count, up to three of the ``available`` members"""
        return FusionConfig.build(
            member_count=self.member_count or min(3, available or self.members),
            threshold=self.threshold if self.threshold is not None else DEFAULT_THRESHOLDS[self.dataset],
        )

    def morphology_options(self) -> MorphologyOptions:
        return MorphologyOptions.build(
            order=self.morphology_order,
            se_shape=self.se_shape,
            se_size=self.se_size,
            min_area=self.min_area,
            connectivity=self.connectivity,
        )

    def eval_config(self) -> EvalConfig:
        return EvalConfig.build(tolerance_px=self.tolerance_px, aggregation=self.aggregation)

    def sweep_grid(self) -> SweepGrid:
        return SweepGrid.build(n_grid=self.n_grid, t_grid=self.t_grid, dataset=self.dataset.value)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    @property
    def model_path(self) -> Path:
        return Path(self.model) if self.model else self.out_dir / "models" / "ensemble.json"

    def to_text(self) -> str:
        lines = ["# resolved run configuration"]
        for key, value in self.dict().items():
            lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def _coerce(key: str, value: Optional[str]) -> Any:
    if value is None or value.strip().lower() in NONE_VALUES:
        return None
    if key in LIST_FIELDS:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value.strip()


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    """
    Parse ``key = value`` lines with python-dotenv; list fields take comma lists

    Args:
        text: File contents
        source: Name used in error messages

    Returns:
        Mapping of raw values (strings, lists of strings or None)
    """
    for binding in parse_stream(io.StringIO(text)):
        if binding.error or (binding.key is not None and binding.value is None):
            raise ConfigError(
                f"{source}:{binding.original.line}: expected 'key = value', got {binding.original.string.strip()!r}"
            )
    raw = dotenv_values(stream=io.StringIO(text), interpolate=False)
    return {key: _coerce(key, value) for key, value in raw.items()}


def load_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise DataIOError(f"Cannot read config file {path}: {e}") from e
    return parse_config_text(text, str(path))


def resolve_config(config_file: Optional[Union[str, Path]] = None, overrides: Dict[str, Any] = None) -> RunConfig:
    """Built-in defaults, then the config file, then non-None flag values"""
    values: Dict[str, Any] = {}
    if config_file:
        values.update({k: v for k, v in load_config_file(config_file).items() if v is not None})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    config = RunConfig.build(values)
    if config.threshold is None:
        config.threshold = DEFAULT_THRESHOLDS[config.dataset]
    return config


def write_resolved_config(config: RunConfig, out_dir: Union[str, Path] = None) -> Path:
    path = Path(out_dir or config.out_dir) / RESOLVED_NAME
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(config.to_text())
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    return path


def workers_from_env() -> int:
    """Worker count from CRACK_WORKERS, defaulting to the physical core count"""
    raw = os.getenv(WORKERS_ENV)
    if raw:
        try:
            workers = int(raw)
        except ValueError as e:
            raise ConfigError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from e
        if workers < 1:
            raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {workers}")
        return workers
    return psutil.cpu_count(logical=False) or 1
