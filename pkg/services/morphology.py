"""
Binary morphology and connected-component labeling of crack masks.

Pixels outside the image are background for every operation.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from models.pipeline import MorphologyOptions, MorphologyOrder, SEShape
from utils.errors import ConfigError

logger = logging.getLogger("morphology")


class StructuringElement:
    """Odd-sized boolean footprint anchored at its center cell"""

    def __init__(self, mask: np.ndarray):
        mask = np.asarray(mask, dtype=bool)
        if mask.ndim != 2 or mask.shape[0] % 2 == 0 or mask.shape[1] % 2 == 0:
            raise ConfigError(f"Structuring element must be odd-sized, got {mask.shape}")
        if not mask[mask.shape[0] // 2, mask.shape[1] // 2]:
            raise ConfigError("Structuring element center cell must be set")
        self.mask = mask

    @classmethod
    def square(cls, size: int = 3) -> "StructuringElement":
        return cls(np.ones((size, size), dtype=bool))

    @classmethod
    def cross(cls, size: int = 3) -> "StructuringElement":
        mask = np.zeros((size, size), dtype=bool)
        mask[size // 2, :] = True
        mask[:, size // 2] = True
        return cls(mask)

    @classmethod
    def disk(cls, size: int = 3) -> "StructuringElement":
        r = size // 2
        yy, xx = np.ogrid[-r:r + 1, -r:r + 1]
        return cls(yy * yy + xx * xx <= r * r)

    @classmethod
    def from_options(cls, options: MorphologyOptions) -> "StructuringElement":
        builders = {SEShape.SQUARE: cls.square, SEShape.CROSS: cls.cross, SEShape.DISK: cls.disk}
        return builders[options.se_shape](options.se_size)


def _as_binary(f: np.ndarray) -> np.ndarray:
    f = np.asarray(f)
    if f.ndim != 2:
        raise ConfigError(f"Expected a 2-D binary image, got shape {f.shape}")
    return f.astype(bool)


def dilate(f: np.ndarray, se: StructuringElement = None) -> np.ndarray:
    """Set union of the SE translated to every crack pixel (Minkowski sum)"""
    se = se or StructuringElement.square()
    return ndimage.binary_dilation(_as_binary(f), structure=se.mask, border_value=0)


def erode(f: np.ndarray, se: StructuringElement = None) -> np.ndarray:
    """Pixels whose SE-covered neighbourhood is entirely crack (outside counts as background)"""
    se = se or StructuringElement.square()
    return ndimage.binary_erosion(_as_binary(f), structure=se.mask, border_value=0)


def closing(f: np.ndarray, se: StructuringElement = None) -> np.ndarray:
    """
    Dilation then erosion

    Runs on a background frame as wide as the SE radius, so crack pixels on the
    image border are never eroded away and closing only ever adds pixels.
    """
    se = se or StructuringElement.square()
    f = _as_binary(f)
    rh, rw = se.mask.shape[0] // 2, se.mask.shape[1] // 2
    framed = np.pad(f, ((rh, rh), (rw, rw)))
    closed = erode(dilate(framed, se), se)
    return closed[rh:rh + f.shape[0], rw:rw + f.shape[1]]


def opening(f: np.ndarray, se: StructuringElement = None) -> np.ndarray:
    return dilate(erode(f, se), se)


@dataclass
class ComponentStats:
    label: int
    area: int
    bbox: Tuple[int, int, int, int]

    def to_dict(self):
        return {"id": self.label, "area": self.area, "bbox": list(self.bbox)}


def connectivity_structure(connectivity: int) -> np.ndarray:
    if connectivity not in (4, 8):
        raise ConfigError(f"Connectivity must be 4 or 8, got {connectivity}")
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def label_components(f: np.ndarray, connectivity: int = 8) -> Tuple[np.ndarray, List[ComponentStats]]:
    """
    Label connected crack regions

    Args:
        f: Binary image
        connectivity: 4 or 8

    Returns:
        Label image (0 background, ids 1..N in raster first-touch order) and the
        area / bounding box (top, left, bottom, right; exclusive) of every component
    """
    raw, count = ndimage.label(_as_binary(f), structure=connectivity_structure(connectivity))
    labels = np.zeros(raw.shape, dtype=np.int32)
    if count == 0:
        return labels, []
    # renumber by first pixel in raster order
    values, first_index = np.unique(raw.ravel(), return_index=True)
    foreground = values > 0
    order = np.argsort(first_index[foreground], kind="stable")
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[values[foreground][order]] = np.arange(1, count + 1, dtype=np.int32)
    labels = remap[raw]

    areas = np.bincount(labels.ravel(), minlength=count + 1)
    stats = []
    for label, box in enumerate(ndimage.find_objects(labels), start=1):
        stats.append(
            ComponentStats(
                label=label,
                area=int(areas[label]),
                bbox=(box[0].start, box[1].start, box[0].stop, box[1].stop),
            )
        )
    return labels, stats


def remove_small_components(labels: np.ndarray, min_area: int) -> np.ndarray:
    """Binary image of the components with area >= min_area"""
    if min_area < 0:
        raise ConfigError(f"min_area must be >= 0, got {min_area}")
    areas = np.bincount(labels.ravel())
    keep = areas >= min_area
    keep[0] = False
    return keep[labels]


@dataclass
class RefinedMask:
    mask: np.ndarray
    labels: np.ndarray
    components: List[ComponentStats]
    removed: int


def refine_mask(binary: np.ndarray, options: MorphologyOptions = None) -> RefinedMask:
    """
    Closing and opening (in the configured order), labeling, then dropping small components

    The surviving components are relabeled so ids stay dense.
    """
    options = options or MorphologyOptions()
    se = StructuringElement.from_options(options)
    if options.order == MorphologyOrder.CLOSE_OPEN:
        cleaned = opening(closing(binary, se), se)
    else:
        cleaned = closing(opening(binary, se), se)
    labels, stats = label_components(cleaned, options.connectivity)
    kept = remove_small_components(labels, options.min_area)
    final_labels, final_stats = label_components(kept, options.connectivity)
    removed = len(stats) - len(final_stats)
    if removed:
        logger.debug(f"Removed {removed} components smaller than {options.min_area} px")
    return RefinedMask(mask=kept, labels=final_labels, components=final_stats, removed=removed)
