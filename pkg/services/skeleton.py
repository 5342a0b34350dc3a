"""
Skeletonization and per-crack length / width measurement
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as zhang_thinning

from services.morphology import connectivity_structure
from utils.errors import ConfigError, MeasurementError

logger = logging.getLogger("skeleton")

SQRT2 = math.sqrt(2.0)
_ORTHOGONAL = ((0, 1), (1, 0))
_DIAGONAL = ((1, 1), (1, -1))


def distance_transform(f: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance from each crack pixel to the nearest background pixel; the outside is background"""
    framed = np.pad(np.asarray(f, dtype=bool), 1, mode="constant", constant_values=False)
    return ndimage.distance_transform_edt(framed)[1:-1, 1:-1]


@dataclass
class SkeletonImage:
    skeleton: np.ndarray
    radius: np.ndarray

    @property
    def pixel_count(self) -> int:
        return int(np.count_nonzero(self.skeleton))


def skeletonize(f: np.ndarray, distance: np.ndarray = None) -> SkeletonImage:
    """
    Two-subiteration boundary thinning to a one-pixel-wide skeleton

    A component that thins away completely keeps its deepest pixel, so every
    component keeps a non-empty skeleton. End points are then walked back out to
    the crack boundary. Skeleton pixels carry their distance transform value as radius.
    """
    f = np.asarray(f, dtype=bool)
    if f.ndim != 2:
        raise ConfigError(f"Expected a 2-D binary image, got shape {f.shape}")
    distance = distance_transform(f) if distance is None else distance
    skeleton = zhang_thinning(f) if f.any() else np.zeros_like(f)

    labels, count = ndimage.label(f, structure=connectivity_structure(8))
    if count:
        covered = np.zeros(count + 1, dtype=bool)
        covered[labels[skeleton]] = True
        vanished = np.flatnonzero(~covered[1:]) + 1
        if len(vanished):
            deepest = ndimage.maximum_position(distance, labels=labels, index=vanished)
            for position in deepest:
                skeleton[position] = True
    skeleton = _extend_ends(skeleton, f)
    return SkeletonImage(skeleton=skeleton, radius=np.where(skeleton, distance, 0.0))


def _skeleton_neighbors(skeleton: np.ndarray, r: int, c: int) -> List[Tuple[int, int]]:
    h, w = skeleton.shape
    return [
        (r + dr, c + dc)
        for dr in (-1, 0, 1)
        for dc in (-1, 0, 1)
        if (dr or dc) and 0 <= r + dr < h and 0 <= c + dc < w and skeleton[r + dr, c + dc]
    ]


def _extend_ends(skeleton: np.ndarray, f: np.ndarray) -> np.ndarray:
    """
    Walk every skeleton end point straight on until it leaves the crack

    Boundary peeling eats about half the crack width off each end; the walk
    stops before touching any other skeleton pixel so branches never merge.
    """
    skeleton = skeleton.copy()
    h, w = f.shape
    ends = [(int(r), int(c)) for r, c in np.argwhere(skeleton) if len(_skeleton_neighbors(skeleton, r, c)) == 1]
    for r, c in ends:
        neighbors = _skeleton_neighbors(skeleton, r, c)
        if len(neighbors) != 1:
            continue
        dr, dc = r - neighbors[0][0], c - neighbors[0][1]
        while True:
            nr, nc = r + dr, c + dc
            if not (0 <= nr < h and 0 <= nc < w and f[nr, nc]) or skeleton[nr, nc]:
                break
            if _skeleton_neighbors(skeleton, nr, nc) != [(r, c)]:
                break
            skeleton[nr, nc] = True
            r, c = nr, nc
    return skeleton


def skeleton_graph(pixels: Sequence[Tuple[int, int]]) -> nx.Graph:
    """
    8-adjacency graph of skeleton pixels with step-length weights

    Diagonal steps are left out whenever one of the two pixels they cut across is
    itself on the skeleton, so a staircase corner is walked orthogonally.
    """
    nodes = {(int(r), int(c)) for r, c in pixels}
    graph = nx.Graph()
    graph.add_nodes_from(nodes)
    for r, c in nodes:
        for dr, dc in _ORTHOGONAL:
            if (r + dr, c + dc) in nodes:
                graph.add_edge((r, c), (r + dr, c + dc), weight=1.0)
        for dr, dc in _DIAGONAL:
            if (r + dr, c + dc) in nodes and (r, c + dc) not in nodes and (r + dr, c) not in nodes:
                graph.add_edge((r, c), (r + dr, c + dc), weight=SQRT2)
    return graph


def crack_length(pixels: Sequence[Tuple[int, int]]) -> float:
    """Discrete arc length of one component's skeleton (a single pixel has length 0)"""
    if len(pixels) == 0:
        raise MeasurementError("Cannot measure a component with an empty skeleton")
    return float(skeleton_graph(pixels).size(weight="weight"))


def mean_width(area_px: int, length_px: float) -> Tuple[float, bool]:
    """
    Area divided by skeleton length

    Returns:
        (width, degenerate); a zero-length skeleton reports the area as width and
        flags the component degenerate
    """
    if length_px > 0:
        return area_px / length_px, False
    return float(area_px), True


@dataclass
class CrackMeasurement:
    component_id: int
    area_px: int
    length_px: float
    mean_width_px: float
    calibration: float = 1.0
    degenerate: bool = False

    @property
    def length_units(self) -> float:
        return self.length_px * self.calibration

    @property
    def width_units(self) -> float:
        # area * f^2 / (length * f)
        return self.mean_width_px * self.calibration

    def to_dict(self) -> Dict:
        return {
            "id": self.component_id,
            "area_px": self.area_px,
            "length_px": self.length_px,
            "mean_width_px": self.mean_width_px,
            "calibration": self.calibration,
            "length_units": self.length_units,
            "width_units": self.width_units,
            "degenerate": self.degenerate,
        }


def measure_all(
    labels: np.ndarray, f: np.ndarray, calibration: float = 1.0, skeleton: Optional[SkeletonImage] = None
) -> List[CrackMeasurement]:
    """
    One measurement per labeled component, ordered by component id

    Args:
        labels: Label image derived from ``f``
        f: Binary crack image
        calibration: Length units per pixel
        skeleton: Precomputed skeleton of ``f``

    Returns:
        List of CrackMeasurement
    """
    if calibration <= 0:
        raise ConfigError(f"Calibration must be > 0, got {calibration}")
    if labels.shape != f.shape:
        raise ConfigError(f"Label image {labels.shape} and mask {f.shape} differ in size")
    skeleton = skeleton or skeletonize(f)
    count = int(labels.max()) if labels.size else 0
    areas = np.bincount(labels.ravel(), minlength=count + 1)

    points = np.argwhere(skeleton.skeleton & (labels > 0))
    owners = labels[points[:, 0], points[:, 1]]
    order = np.argsort(owners, kind="stable")
    points, owners = points[order], owners[order]
    bounds = np.searchsorted(owners, np.arange(1, count + 2))

    measurements = []
    for component in range(1, count + 1):
        if areas[component] == 0:
            continue
        pixels = points[bounds[component - 1]:bounds[component]]
        try:
            length = crack_length(pixels)
        except MeasurementError:
            logger.warning(f"Component {component} has no skeleton pixels; reporting length 0")
            length = 0.0
        width, degenerate = mean_width(int(areas[component]), length)
        if degenerate:
            logger.warning(f"Component {component} is degenerate (zero skeleton length)")
        measurements.append(
            CrackMeasurement(
                component_id=component,
                area_px=int(areas[component]),
                length_px=length,
                mean_width_px=width,
                calibration=calibration,
                degenerate=degenerate,
            )
        )
    return measurements


@dataclass
class MeasurementSummary:
    crack_count: int
    total_length_px: float
    mean_width_px: float
    total_area_px: int

    @classmethod
    def from_measurements(cls, measurements: Sequence[CrackMeasurement]) -> "MeasurementSummary":
        length = float(sum(m.length_px for m in measurements))
        area = int(sum(m.area_px for m in measurements))
        return cls(
            crack_count=len(measurements),
            total_length_px=length,
            mean_width_px=area / length if length > 0 else 0.0,
            total_area_px=area,
        )


def compare_measurements(predicted: MeasurementSummary, ground_truth: MeasurementSummary) -> Dict[str, float]:
    """Predicted and ground-truth totals side by side with their differences"""
    row = {}
    for name in ("crack_count", "total_length_px", "mean_width_px", "total_area_px"):
        pred_value = getattr(predicted, name)
        gt_value = getattr(ground_truth, name)
        row[f"pred_{name}"] = pred_value
        row[f"gt_{name}"] = gt_value
        row[f"diff_{name}"] = pred_value - gt_value
    return row
