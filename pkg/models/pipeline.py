import enum
from typing import List, Optional

from pydantic import Field, validator

from models.schema import Schema


class SamplingPolicy(Schema):
    """How training patches are drawn from one image/mask pair"""

    max_positive_per_image: int = Field(2000, ge=1)
    negative_to_positive_ratio: float = Field(1.0, gt=0)
    empty_mask_negatives: int = Field(100, ge=0)
    rng_seed: int = 0


class FusionConfig(Schema):
    member_count: int = Field(3, ge=1)
    threshold: float = Field(0.6, ge=0.0, le=1.0)


class MorphologyOrder(str, enum.Enum):
    CLOSE_OPEN = "close_open"
    OPEN_CLOSE = "open_close"


class SEShape(str, enum.Enum):
    SQUARE = "square"
    CROSS = "cross"
    DISK = "disk"


class MorphologyOptions(Schema):
    order: MorphologyOrder = MorphologyOrder.CLOSE_OPEN
    se_shape: SEShape = SEShape.SQUARE
    se_size: int = Field(3, ge=1)
    min_area: int = Field(16, ge=0)
    connectivity: int = 8

    @validator("se_size")
    def odd_size(cls, value):
        if value % 2 == 0:
            raise ValueError(f"structuring element size must be odd, got {value}")
        return value

    @validator("connectivity")
    def known_connectivity(cls, value):
        if value not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {value}")
        return value


class Aggregation(str, enum.Enum):
    MACRO = "macro"
    MICRO = "micro"


class EvalConfig(Schema):
    tolerance_px: float = Field(2.0, ge=0)
    aggregation: Aggregation = Aggregation.MACRO


class SweepGrid(Schema):
    n_grid: List[int] = [1, 3, 5, 7]
    t_grid: List[float] = [0.4, 0.5, 0.6, 0.7]
    dataset: Optional[str] = None

    @validator("n_grid", each_item=True)
    def positive_member_count(cls, value):
        if value < 1:
            raise ValueError(f"member counts must be >= 1, got {value}")
        return value

    @validator("t_grid", each_item=True)
    def unit_threshold(cls, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"thresholds must lie in [0, 1], got {value}")
        return value
