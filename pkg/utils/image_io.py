"""
Image reading and writing through Pillow
"""

import json
import logging
from pathlib import Path
from typing import Dict, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from utils.errors import DataIOError, FormatError

logger = logging.getLogger("image_io")

PathLike = Union[str, Path]

_TO_RGB = {"RGBA", "P", "CMYK", "YCbCr"}
_TO_GRAY = {"1", "LA"}


def read_image(path: PathLike) -> np.ndarray:
    """Decode an 8-bit grayscale (H, W) or RGB (H, W, 3) image"""
    path = Path(path)
    try:
        with Image.open(path) as img:
            mode = img.mode
            if mode in _TO_RGB:
                img = img.convert("RGB")
            elif mode in _TO_GRAY:
                img = img.convert("L")
            elif mode not in ("L", "RGB"):
                raise FormatError(f"{path}: unsupported image mode {mode}")
            return np.array(img, dtype=np.uint8)
    except FileNotFoundError as e:
        raise DataIOError(f"Image not found: {path}") from e
    except UnidentifiedImageError as e:
        raise FormatError(f"{path}: not a readable image") from e
    except OSError as e:
        if isinstance(e, DataIOError):
            raise
        raise DataIOError(f"Cannot read image {path}: {e}") from e


def image_geometry(path: PathLike) -> Dict[str, int]:
    """Width, height and channel count without decoding pixels"""
    try:
        with Image.open(path) as img:
            channels = len(img.getbands())
            if img.mode == "P":
                channels = 3
            return {"width": img.width, "height": img.height, "channels": channels}
    except UnidentifiedImageError as e:
        raise FormatError(f"{path}: not a readable image") from e
    except OSError as e:
        raise DataIOError(f"Cannot read image {path}: {e}") from e


def _save(img: Image.Image, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        img.save(path, format="PNG")
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    return path


def write_mask(mask: np.ndarray, path: PathLike) -> Path:
    """Binary mask as 8-bit PNG, 0 / 255"""
    return _save(Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)), path)


def write_rgb(image: np.ndarray, path: PathLike) -> Path:
    return _save(Image.fromarray(np.asarray(image, dtype=np.uint8)), path)


def write_uint16(values: np.ndarray, path: PathLike) -> Path:
    """Single-channel 16-bit PNG"""
    values = np.asarray(values)
    if values.min(initial=0) < 0 or values.max(initial=0) > 65535:
        raise FormatError(f"{path}: values outside the 16-bit range")
    return _save(Image.fromarray(values.astype(np.uint16)), path)


def read_uint16(path: PathLike) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.array(img).astype(np.uint16)
    except OSError as e:
        raise DataIOError(f"Cannot read {path}: {e}") from e


def write_probability_map(probabilities: np.ndarray, path: PathLike, sidecar: Dict) -> Path:
    """
    16-bit PNG of round(p * 65535) plus a JSON sidecar next to it

    Args:
        probabilities: Values in [0, 1]
        path: PNG path; the sidecar gets the same stem with a .json suffix
        sidecar: Metadata (source, model ids, stride, threshold hint)

    Returns:
        The PNG path
    """
    quantized = np.round(np.clip(probabilities, 0.0, 1.0) * 65535.0).astype(np.uint16)
    png = write_uint16(quantized, path)
    write_json(sidecar, Path(path).with_suffix(".json"))
    return png


def read_probability_map(path: PathLike) -> np.ndarray:
    return read_uint16(path).astype(np.float64) / 65535.0


def write_json(payload, path: PathLike) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2))
    except OSError as e:
        raise DataIOError(f"Cannot write {path}: {e}") from e
    return path
