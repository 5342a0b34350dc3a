"""
Dataset ingestion: image/mask pairing, validation, mask binarization and splits
"""

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from models.dataset import (
    DEFAULT_SPLIT_COUNTS,
    KIND_GEOMETRY,
    DatasetEntry,
    DatasetKind,
    DatasetManifest,
    SplitSpec,
)
from utils.errors import ConfigError, DataIOError, DatasetError, FormatError, PairingError
from utils.image_io import image_geometry, read_image

logger = logging.getLogger("dataset_io")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg"}
MASK_THRESHOLD = 128


def _file_digest(path: Path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as handle:
        for block in iter(lambda: handle.read(1 << 20), b""):
            sha.update(block)
    return sha.hexdigest()


def _validate_geometry(kind: DatasetKind, entry: DatasetEntry) -> None:
    if kind not in KIND_GEOMETRY:
        return
    sizes, channels = KIND_GEOMETRY[kind]
    if (entry.width, entry.height) not in sizes:
        raise DatasetError(
            f"{entry.image_path}: {entry.width}x{entry.height} is not a valid {kind.value} image size"
        )
    if entry.channels != channels:
        raise DatasetError(f"{entry.image_path}: {kind.value} images have {channels} channel(s), got {entry.channels}")


def load_dataset(root: Union[str, Path], kind: Union[str, DatasetKind] = DatasetKind.CUSTOM) -> DatasetManifest:
    """
    Pair ``images/<stem>.<ext>`` with ``masks/<stem>.png`` under ``root``

    Args:
        root: Dataset directory
        kind: cfd, aiglern or custom; the first two enforce the corpus geometry

    Returns:
        DatasetManifest sorted by file name, with per-file size and checksum
    """
    root = Path(root)
    try:
        kind = DatasetKind(kind)
    except ValueError as e:
        raise ConfigError(f"Unknown dataset kind: {kind}") from e
    if not root.is_dir():
        raise DataIOError(f"Dataset root not found: {root}")
    image_dir, mask_dir = root / "images", root / "masks"
    images = sorted(p for p in image_dir.glob("*") if p.suffix.lower() in IMAGE_SUFFIXES) if image_dir.is_dir() else []
    if not images:
        raise DatasetError(f"No images under {image_dir}: the dataset is empty")

    stems = [p.stem for p in images]
    duplicates = sorted({s for s in stems if stems.count(s) > 1})
    if duplicates:
        raise DatasetError(f"Several images share the stem(s) {', '.join(duplicates)}")

    entries = []
    sha = hashlib.sha256()
    for image_path in images:
        mask_path = mask_dir / f"{image_path.stem}.png"
        if not mask_path.is_file():
            raise PairingError(f"Image {image_path.name} has no mask at {mask_path}")
        image_geo = image_geometry(image_path)
        mask_geo = image_geometry(mask_path)
        if (image_geo["width"], image_geo["height"]) != (mask_geo["width"], mask_geo["height"]):
            raise DatasetError(
                f"{image_path.name}: image is {image_geo['width']}x{image_geo['height']} "
                f"but mask is {mask_geo['width']}x{mask_geo['height']}"
            )
        entry = DatasetEntry(
            stem=image_path.stem,
            image_path=str(image_path),
            mask_path=str(mask_path),
            width=image_geo["width"],
            height=image_geo["height"],
            channels=image_geo["channels"],
            image_bytes=image_path.stat().st_size,
            image_sha256=_file_digest(image_path),
            mask_bytes=mask_path.stat().st_size,
            mask_sha256=_file_digest(mask_path),
        )
        _validate_geometry(kind, entry)
        sha.update(f"{entry.stem}:{entry.image_sha256}:{entry.mask_sha256}\n".encode("utf-8"))
        entries.append(entry)

    logger.info(f"Loaded {len(entries)} {kind.value} image/mask pairs from {root}")
    return DatasetManifest(kind=kind, root=str(root), entries=entries, digest=sha.hexdigest())


def save_manifest(manifest: DatasetManifest, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(manifest.json(indent=2))
    except OSError as e:
        raise DataIOError(f"Cannot write manifest {path}: {e}") from e
    return path


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    try:
        return DatasetManifest.build(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise DataIOError(f"Cannot read manifest {path}: {e}") from e


@dataclass
class BinaryMask:
    mask: np.ndarray
    crack_fraction: float

    @property
    def empty(self) -> bool:
        return self.crack_fraction == 0.0


def binarize_mask(raw: np.ndarray) -> BinaryMask:
    """Crack where the 8-bit mask value is >= 128"""
    raw = np.asarray(raw)
    if raw.dtype == bool:
        mask = raw
    else:
        if raw.dtype != np.uint8:
            raise FormatError(f"Expected an 8-bit mask, got dtype {raw.dtype}")
        if raw.ndim == 3:
            if not all(np.array_equal(raw[:, :, 0], raw[:, :, c]) for c in range(1, raw.shape[2])):
                raise FormatError("Multi-channel mask has differing channels")
            raw = raw[:, :, 0]
        if raw.ndim != 2:
            raise FormatError(f"Unsupported mask layout {raw.shape}")
        mask = raw >= MASK_THRESHOLD
    fraction = float(mask.mean()) if mask.size else 0.0
    if fraction == 0.0:
        logger.warning("Mask contains no crack pixels")
    return BinaryMask(mask=mask, crack_fraction=fraction)


def load_pair(entry: DatasetEntry) -> Tuple[np.ndarray, BinaryMask]:
    """Raw 8-bit image and binarized mask of one manifest entry"""
    return read_image(entry.image_path), binarize_mask(read_image(entry.mask_path))


def default_split_counts(kind: DatasetKind, total: int) -> Tuple[int, int]:
    counts = DEFAULT_SPLIT_COUNTS.get(kind)
    if counts and sum(counts) == total:
        return counts
    train = int(round(0.6 * total))
    return train, total - train


def make_split(
    manifest: DatasetManifest, seed: int, train_count: Optional[int] = None, test_count: Optional[int] = None
) -> SplitSpec:
    """
    Seeded shuffle of the sorted stems; the first ``train_count`` train, the rest test

    Omitted counts fall back to the corpus defaults (72/46 for CFD, 24/14 for AigleRN).
    """
    stems = sorted(manifest.stems)
    if train_count is None and test_count is None:
        train_count, test_count = default_split_counts(manifest.kind, len(stems))
    elif train_count is None:
        train_count = len(stems) - test_count
    elif test_count is None:
        test_count = len(stems) - train_count
    if train_count < 0 or test_count < 0 or train_count + test_count != len(stems):
        raise ConfigError(
            f"Split {train_count}/{test_count} does not cover the {len(stems)} images of the dataset"
        )
    order = np.random.default_rng(seed).permutation(len(stems))
    shuffled = [stems[i] for i in order]
    return SplitSpec(
        dataset=manifest.kind.value, seed=seed, train=shuffled[:train_count], test=shuffled[train_count:]
    )


def save_split(split: SplitSpec, path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = {"dataset": split.dataset, "seed": split.seed, "train": split.train, "test": split.test}
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2))
    except OSError as e:
        raise DataIOError(f"Cannot write split file {path}: {e}") from e
    return path


def load_split(path: Union[str, Path], manifest: DatasetManifest = None) -> SplitSpec:
    try:
        split = SplitSpec.build(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError) as e:
        raise DataIOError(f"Cannot read split file {path}: {e}") from e
    if manifest is not None:
        unknown = sorted(set(split.train + split.test) - set(manifest.stems))
        if unknown:
            raise PairingError(f"Split file names images missing from the dataset: {', '.join(unknown)}")
    return split


def limit_split(split: SplitSpec, train_limit: Optional[int], test_limit: Optional[int]) -> SplitSpec:
    """Keep the first N stems of each side (desk-scale subsets)"""
    return SplitSpec(
        dataset=split.dataset,
        seed=split.seed,
        train=split.train[:train_limit] if train_limit else split.train,
        test=split.test[:test_limit] if test_limit else split.test,
    )
