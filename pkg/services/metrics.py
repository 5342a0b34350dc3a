"""
Tolerance-aware precision / recall / F1 for binary crack maps
"""

import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np
import pandas as pd
from scipy import ndimage

from models.pipeline import Aggregation, EvalConfig
from utils.errors import ConfigError, DataIOError, DatasetError, PairingError, ShapeError

logger = logging.getLogger("metrics")

REPORT_COLUMNS = ["image", "tp", "fp", "fn", "matched_gt", "precision", "recall", "f1"]


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    matched_gt: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            matched_gt=self.matched_gt + other.matched_gt,
        )

    @property
    def predicted(self) -> int:
        return self.tp + self.fp

    @property
    def ground_truth(self) -> int:
        return self.matched_gt + self.fn


@dataclass
class ScoreTriple:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


def tolerance_footprint(distance: float) -> np.ndarray:
    """All integer offsets within Euclidean ``distance`` of the center"""
    if distance < 0:
        raise ConfigError(f"Tolerance must be >= 0, got {distance}")
    radius = int(math.floor(distance))
    yy, xx = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    return (yy * yy + xx * xx) <= distance * distance


def match_with_tolerance(pred: np.ndarray, gt: np.ndarray, distance: float) -> ConfusionCounts:
    """
    Count matches between a predicted and a ground-truth crack mask

    A predicted pixel is a true positive when some ground-truth pixel lies within
    ``distance``; a ground-truth pixel is matched when some predicted pixel does.
    """
    if pred.shape != gt.shape:
        raise ShapeError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in size")
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    footprint = tolerance_footprint(distance)
    if footprint.size == 1:
        gt_reach, pred_reach = gt, pred
    else:
        gt_reach = ndimage.binary_dilation(gt, structure=footprint, border_value=0)
        pred_reach = ndimage.binary_dilation(pred, structure=footprint, border_value=0)
    tp = int(np.count_nonzero(pred & gt_reach))
    matched = int(np.count_nonzero(gt & pred_reach))
    return ConfusionCounts(
        tp=tp,
        fp=int(np.count_nonzero(pred)) - tp,
        fn=int(np.count_nonzero(gt)) - matched,
        matched_gt=matched,
    )


def compute_scores(counts: ConfusionCounts) -> ScoreTriple:
    precision = counts.tp / counts.predicted if counts.predicted else 1.0
    recall = counts.matched_gt / counts.ground_truth if counts.ground_truth else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return ScoreTriple(precision=precision, recall=recall, f1=f1)


@dataclass
class EvaluationResult:
    per_image: pd.DataFrame
    macro: ScoreTriple
    micro: ScoreTriple
    totals: ConfusionCounts
    config: EvalConfig

    @property
    def headline(self) -> ScoreTriple:
        return self.macro if self.config.aggregation == Aggregation.MACRO else self.micro

    def summary(self) -> Dict:
        return {
            "macro": self.macro.to_dict(),
            "micro": self.micro.to_dict(),
            "tolerance_px": self.config.tolerance_px,
            "aggregation": self.config.aggregation.value,
            "images": len(self.per_image),
        }


def evaluate_dataset(
    predictions: Mapping[str, np.ndarray], ground_truth: Mapping[str, np.ndarray], config: EvalConfig = None
) -> EvaluationResult:
    """
    Score every prediction against its ground truth and aggregate

    Args:
        predictions: Binary prediction per image name
        ground_truth: Binary ground truth per image name
        config: Tolerance and headline aggregation

    Returns:
        EvaluationResult with the per-image table and macro/micro scores
    """
    config = config or EvalConfig()
    missing_gt = sorted(set(predictions) - set(ground_truth))
    missing_pred = sorted(set(ground_truth) - set(predictions))
    if missing_gt:
        raise PairingError(f"No ground truth for {', '.join(missing_gt)}")
    if missing_pred:
        raise PairingError(f"No prediction for {', '.join(missing_pred)}")
    if not predictions:
        raise DatasetError("Nothing to evaluate: the prediction set is empty")

    rows = []
    totals = ConfusionCounts()
    for name in sorted(predictions):
        counts = match_with_tolerance(predictions[name], ground_truth[name], config.tolerance_px)
        scores = compute_scores(counts)
        totals = totals + counts
        rows.append({"image": name, **asdict(counts), **scores.to_dict()})
    per_image = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    macro = ScoreTriple(
        precision=float(per_image["precision"].mean()),
        recall=float(per_image["recall"].mean()),
        f1=float(per_image["f1"].mean()),
    )
    micro = compute_scores(totals)
    logger.info(
        f"Evaluated {len(per_image)} images at tolerance {config.tolerance_px}: "
        f"macro F1 {macro.f1:.4f}, micro F1 {micro.f1:.4f}"
    )
    return EvaluationResult(per_image=per_image, macro=macro, micro=micro, totals=totals, config=config)


def write_evaluation_report(
    result: EvaluationResult, csv_path: Union[str, Path], json_path: Union[str, Path]
) -> None:
    """Per-image CSV ending in one ``summary`` row, plus the macro/micro JSON"""
    headline = result.headline
    summary_row = {"image": "summary", **asdict(result.totals), **headline.to_dict()}
    table = pd.concat([result.per_image, pd.DataFrame([summary_row], columns=REPORT_COLUMNS)], ignore_index=True)
    try:
        Path(csv_path).parent.mkdir(parents=True, exist_ok=True)
        table.to_csv(csv_path, index=False)
        Path(json_path).write_text(json.dumps(result.summary(), indent=2))
    except OSError as e:
        raise DataIOError(f"Cannot write evaluation report: {e}") from e
