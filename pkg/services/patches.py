"""
Patch pipeline: 27x27 training windows with 5x5 structured labels, and dense
overlap-averaged probability maps from a trained predictor.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.network import NetworkParams, NetworkSpec, OUTPUT_SIZE, OUTPUT_UNITS, PATCH_SIZE
from models.pipeline import SamplingPolicy
from services.nn_core import INFERENCE, network_forward
from utils.errors import BoundsError, ConfigError, FormatError, ShapeError

logger = logging.getLogger("patches")

Predictor = Callable[[np.ndarray], np.ndarray]

# offset between a patch's top-left corner and its 5x5 output block
OUTPUT_OFFSET = (PATCH_SIZE - OUTPUT_SIZE) // 2
SAMPLE_MARGIN = PATCH_SIZE // 2
DENSE_MARGIN = SAMPLE_MARGIN + OUTPUT_SIZE // 2
HALF_OUT = OUTPUT_SIZE // 2


def normalize_image(raw: np.ndarray) -> np.ndarray:
    """
    Scale an 8-bit image into [0, 1] with three channels

    Args:
        raw: uint8 array, (H, W), (H, W, 1) or (H, W, 3)

    Returns:
        float32 array (H, W, 3)
    """
    raw = np.asarray(raw)
    if raw.dtype != np.uint8:
        raise FormatError(f"Expected an 8-bit image, got dtype {raw.dtype}")
    if raw.ndim == 3 and raw.shape[2] == 1:
        raw = raw[:, :, 0]
    if raw.ndim == 2:
        raw = np.repeat(raw[:, :, None], 3, axis=2)
    if raw.ndim != 3 or raw.shape[2] != 3:
        raise FormatError(f"Unsupported image layout {raw.shape}: need grayscale or RGB")
    return raw.astype(np.float32) / np.float32(255.0)


def reflect_pad(image: np.ndarray, margin: int, strict: bool = True) -> np.ndarray:
    """
    Mirror-pad the two spatial axes without repeating the edge pixel

    With ``strict`` the margin must be smaller than both sides; otherwise the
    reflection bounces as often as needed.
    """
    if margin < 0:
        raise BoundsError(f"Padding margin must be >= 0, got {margin}")
    h, w = image.shape[:2]
    if strict and margin >= min(h, w):
        raise BoundsError(f"Margin {margin} too large for a {w}x{h} image")
    if margin == 0:
        return image.copy()
    widths = [(margin, margin), (margin, margin)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, widths, mode="reflect")


@dataclass
class PatchSample:
    input: np.ndarray
    label: np.ndarray
    center: Tuple[int, int]


@dataclass
class SampleSet:
    """
    Training samples of one or more images

    Windows are not copied at extraction time: each sample is an (image, center)
    reference into the padded image, and ``batch`` materializes the windows.
    """

    padded_images: List[np.ndarray]
    padded_masks: List[np.ndarray]
    image_index: np.ndarray
    centers: np.ndarray
    positive: np.ndarray
    no_positives: List[int] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.centers)

    def __getitem__(self, i: int) -> PatchSample:
        image_id = int(self.image_index[i])
        r, c = (int(v) for v in self.centers[i])
        window = self.padded_images[image_id][r:r + PATCH_SIZE, c:c + PATCH_SIZE]
        return PatchSample(input=window, label=self._label(image_id, r, c), center=(r, c))

    def _label(self, image_id: int, r: int, c: int) -> np.ndarray:
        lo = SAMPLE_MARGIN - HALF_OUT
        return self.padded_masks[image_id][r + lo:r + lo + OUTPUT_SIZE, c + lo:c + lo + OUTPUT_SIZE]

    @property
    def positive_count(self) -> int:
        return int(self.positive.sum())

    def batch(self, indices: Sequence[int], dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
        """Stack the inputs (B, 27, 27, 3) and flattened labels (B, 25) of the given samples"""
        inputs = np.empty((len(indices), PATCH_SIZE, PATCH_SIZE, 3), dtype=dtype)
        labels = np.empty((len(indices), OUTPUT_UNITS), dtype=dtype)
        for row, i in enumerate(indices):
            sample = self[int(i)]
            inputs[row] = sample.input
            labels[row] = sample.label.reshape(-1)
        return inputs, labels

    @staticmethod
    def concat(parts: Sequence["SampleSet"]) -> "SampleSet":
        images, masks, index, centers, positive, empty = [], [], [], [], [], []
        for part in parts:
            offset = len(images)
            images.extend(part.padded_images)
            masks.extend(part.padded_masks)
            index.append(part.image_index + offset)
            centers.append(part.centers)
            positive.append(part.positive)
            empty.extend(i + offset for i in part.no_positives)
        return SampleSet(
            padded_images=images,
            padded_masks=masks,
            image_index=np.concatenate(index) if index else np.zeros(0, dtype=np.int64),
            centers=np.concatenate(centers) if centers else np.zeros((0, 2), dtype=np.int64),
            positive=np.concatenate(positive) if positive else np.zeros(0, dtype=bool),
            no_positives=empty,
        )


def extract_training_samples(
    image: np.ndarray, gt_mask: np.ndarray, policy: SamplingPolicy, rng: np.random.Generator
) -> SampleSet:
    """
    Draw positive and negative patch centers from one image

    Positives are centered on crack pixels, subsampled uniformly when there are more
    than ``max_positive_per_image``; negatives are drawn uniformly from background
    pixels in ``negative_to_positive_ratio`` proportion. An image without crack
    pixels contributes ``empty_mask_negatives`` negatives and is listed in
    ``no_positives``.
    """
    if image.ndim != 3 or image.shape[:2] != gt_mask.shape:
        raise ShapeError(f"Image {image.shape} and mask {gt_mask.shape} do not share dimensions")
    mask = gt_mask.astype(bool)
    crack = np.argwhere(mask)
    background = np.argwhere(~mask)

    if len(crack) > policy.max_positive_per_image:
        chosen = np.sort(rng.choice(len(crack), policy.max_positive_per_image, replace=False))
        crack = crack[chosen]
    if len(crack):
        negatives = max(1, int(round(policy.negative_to_positive_ratio * len(crack))))
        no_positives = []
    else:
        negatives = policy.empty_mask_negatives
        no_positives = [0]
        logger.warning("Mask has no crack pixels; sampling negatives only")
    negatives = min(negatives, len(background))
    chosen = np.sort(rng.choice(len(background), negatives, replace=False)) if negatives else np.zeros(0, int)
    background = background[chosen]

    centers = np.concatenate([crack, background]).astype(np.int64)
    return SampleSet(
        padded_images=[reflect_pad(image, SAMPLE_MARGIN, strict=False)],
        padded_masks=[reflect_pad(mask, SAMPLE_MARGIN, strict=False)],
        image_index=np.zeros(len(centers), dtype=np.int64),
        centers=centers,
        positive=np.concatenate([np.ones(len(crack), bool), np.zeros(len(background), bool)]),
        no_positives=no_positives,
    )


class NetworkPredictor:
    """Batched inference-mode predictor (N, 27, 27, 3) -> (N, 25) for one network"""

    def __init__(self, spec: NetworkSpec, params: NetworkParams):
        self.spec = spec
        self.params = params

    def __call__(self, patches: np.ndarray) -> np.ndarray:
        outputs, _ = network_forward(self.spec, self.params, patches, mode=INFERENCE)
        return outputs


@dataclass
class ProbabilityMap:
    probabilities: np.ndarray
    votes: np.ndarray
    stride: int = 1
    source: Optional[str] = None

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probabilities.shape


def _predict_windows(predictor: Predictor, windows: np.ndarray, batch_size: int) -> np.ndarray:
    """Run the predictor over a (R, C, 27, 27, 3) window grid, returning (R, C, 5, 5)"""
    rows, cols = windows.shape[:2]
    flat_count = rows * cols
    out = np.empty((flat_count, OUTPUT_UNITS), dtype=np.float64)
    # rows of windows are materialized a few at a time to bound memory
    rows_per_chunk = max(1, batch_size // max(cols, 1))
    for start in range(0, rows, rows_per_chunk):
        chunk = np.ascontiguousarray(windows[start:start + rows_per_chunk]).reshape(-1, PATCH_SIZE, PATCH_SIZE, 3)
        result = np.asarray(predictor(chunk))
        if result.shape != (len(chunk), OUTPUT_UNITS):
            raise ShapeError(f"Predictor returned {result.shape}, expected ({len(chunk)}, {OUTPUT_UNITS})")
        out[start * cols:start * cols + len(chunk)] = result
    return out.reshape(rows, cols, OUTPUT_SIZE, OUTPUT_SIZE)


def infer_probability_map(
    predictor: Predictor, image: np.ndarray, stride: int = 1, batch_size: int = 1024, source: str = None
) -> ProbabilityMap:
    """
    Dense crack probability map by sliding-window inference

    Args:
        predictor: Batched callable (N, 27, 27, 3) -> (N, 25)
        image: Normalized image (H, W, 3)
        stride: 1 (every pixel averaged over 25 overlapping outputs) or 5 (tiled, one vote per pixel)
        batch_size: Windows evaluated per predictor call

    Returns:
        ProbabilityMap with per-pixel mean probability and vote count
    """
    if stride not in (1, 5):
        raise ConfigError(f"Inference stride must be 1 or 5, got {stride}")
    if image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(f"Expected a normalized (H, W, 3) image, got {image.shape}")
    h, w = image.shape[:2]

    if stride == 1:
        padded = reflect_pad(image, DENSE_MARGIN, strict=False)
        windows = sliding_window_view(padded, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
        blocks = _predict_windows(predictor, windows, batch_size)
        rows, cols = blocks.shape[:2]
        total = np.zeros((h + 2 * (OUTPUT_SIZE - 1), w + 2 * (OUTPUT_SIZE - 1)), dtype=np.float64)
        votes = np.zeros(total.shape, dtype=np.int32)
        for dy in range(OUTPUT_SIZE):
            for dx in range(OUTPUT_SIZE):
                total[dy:dy + rows, dx:dx + cols] += blocks[:, :, dy, dx]
                votes[dy:dy + rows, dx:dx + cols] += 1
        crop = (slice(OUTPUT_SIZE - 1, OUTPUT_SIZE - 1 + h), slice(OUTPUT_SIZE - 1, OUTPUT_SIZE - 1 + w))
        total, votes = total[crop], votes[crop]
    else:
        ext_h = -(-h // OUTPUT_SIZE) * OUTPUT_SIZE
        ext_w = -(-w // OUTPUT_SIZE) * OUTPUT_SIZE
        padded = np.pad(
            image,
            ((SAMPLE_MARGIN, SAMPLE_MARGIN + ext_h - h), (SAMPLE_MARGIN, SAMPLE_MARGIN + ext_w - w), (0, 0)),
            mode="reflect",
        )
        start = SAMPLE_MARGIN - OUTPUT_OFFSET
        windows = sliding_window_view(padded, (PATCH_SIZE, PATCH_SIZE), axis=(0, 1)).transpose(0, 1, 3, 4, 2)
        windows = windows[start:start + ext_h:OUTPUT_SIZE, start:start + ext_w:OUTPUT_SIZE]
        blocks = _predict_windows(predictor, windows, batch_size)
        total = blocks.transpose(0, 2, 1, 3).reshape(ext_h, ext_w)[:h, :w]
        votes = np.ones((h, w), dtype=np.int32)

    probabilities = np.clip(total / votes, 0.0, 1.0)
    logger.debug(f"Inferred {w}x{h} probability map at stride {stride}")
    return ProbabilityMap(probabilities=probabilities, votes=votes, stride=stride, source=source)
