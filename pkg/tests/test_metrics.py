import json

import numpy as np
import pandas as pd
import pytest

from models.pipeline import Aggregation, EvalConfig
from services.metrics import (
    ConfusionCounts,
    compute_scores,
    evaluate_dataset,
    match_with_tolerance,
    tolerance_footprint,
    write_evaluation_report,
)
from utils.errors import ConfigError, DatasetError, PairingError, ShapeError


def test_tolerance_footprint():
    assert tolerance_footprint(0).sum() == 1
    assert tolerance_footprint(1).sum() == 5
    assert tolerance_footprint(1.5).sum() == 9
    assert tolerance_footprint(2).sum() == 13
    with pytest.raises(ConfigError):
        tolerance_footprint(-1)


def test_shift_within_tolerance_is_a_match():
    gt = np.zeros((10, 10), dtype=bool)
    gt[5, 2:8] = True
    pred = np.roll(gt, 2, axis=0)
    counts = match_with_tolerance(pred, gt, 2)
    assert counts == ConfusionCounts(tp=6, fp=0, fn=0, matched_gt=6)
    strict = match_with_tolerance(pred, gt, 1)
    assert strict.tp == 0 and strict.fp == 6 and strict.fn == 6


def test_exact_match_and_empty_conventions():
    gt = np.zeros((4, 4), dtype=bool)
    gt[1, 1] = True
    perfect = compute_scores(match_with_tolerance(gt, gt, 0))
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)

    nothing_predicted = compute_scores(match_with_tolerance(np.zeros_like(gt), gt, 2))
    assert nothing_predicted.precision == 1.0 and nothing_predicted.recall == 0.0 and nothing_predicted.f1 == 0.0

    empty_both = compute_scores(match_with_tolerance(np.zeros_like(gt), np.zeros_like(gt), 2))
    assert empty_both.f1 == 1.0

    with pytest.raises(ShapeError):
        match_with_tolerance(np.zeros((2, 2)), np.zeros((3, 3)), 2)


def test_macro_and_micro_aggregation():
    gt = np.zeros((6, 6), dtype=bool)
    gt[3, :] = True
    half = gt.copy()
    half[3, 3:] = False
    result = evaluate_dataset({"a": gt, "b": half}, {"a": gt, "b": gt}, EvalConfig(tolerance_px=0))
    assert list(result.per_image["image"]) == ["a", "b"]
    assert result.macro.recall == pytest.approx(0.75)
    assert result.micro.recall == pytest.approx(9 / 12)
    assert result.macro.f1 == pytest.approx((1.0 + 2 / 3) / 2)
    assert result.micro.f1 == pytest.approx(2 * 0.75 / 1.75)
    assert result.headline == result.macro
    micro = evaluate_dataset({"a": gt}, {"a": gt}, EvalConfig(aggregation=Aggregation.MICRO))
    assert micro.headline == micro.micro


def test_pairing_errors():
    mask = np.zeros((2, 2), dtype=bool)
    with pytest.raises(PairingError):
        evaluate_dataset({"a": mask}, {"b": mask})
    with pytest.raises(PairingError):
        evaluate_dataset({}, {"b": mask})
    with pytest.raises(DatasetError):
        evaluate_dataset({}, {})


def test_report_files(tmp_path):
    gt = np.zeros((4, 4), dtype=bool)
    gt[0, :] = True
    result = evaluate_dataset({"a": gt}, {"a": gt})
    write_evaluation_report(result, tmp_path / "r" / "eval.csv", tmp_path / "r" / "eval.json")
    table = pd.read_csv(tmp_path / "r" / "eval.csv")
    assert table["image"].tolist() == ["a", "summary"]
    summary = json.loads((tmp_path / "r" / "eval.json").read_text())
    assert summary["macro"]["f1"] == 1.0 and summary["images"] == 1


def counts_for(precision, recall, scale=10000):
    tp = round(precision * scale)
    matched = round(recall * scale)
    return ConfusionCounts(tp=tp, fp=scale - tp, fn=scale - matched, matched_gt=matched)


@pytest.mark.parametrize("precision,recall,f1", [(0.9552, 0.9521, 0.9533), (0.9302, 0.9166, 0.9238)])
def test_published_score_rows_are_consistent(precision, recall, f1):
    scores = compute_scores(counts_for(precision, recall))
    assert scores.precision == pytest.approx(precision)
    assert scores.recall == pytest.approx(recall)
    assert scores.f1 == pytest.approx(f1, abs=0.0015)


def test_single_pixel_tolerance_examples():
    gt = np.zeros((20, 20), dtype=bool)
    gt[10, 10] = True
    near = np.zeros_like(gt)
    near[12, 10] = True
    assert match_with_tolerance(near, gt, 2) == ConfusionCounts(tp=1, fp=0, fn=0, matched_gt=1)
    far = np.zeros_like(gt)
    far[13, 10] = True
    assert match_with_tolerance(far, gt, 2) == ConfusionCounts(tp=0, fp=1, fn=1, matched_gt=0)


def test_zero_tolerance_is_exact_overlap():
    rng = np.random.default_rng(4)
    pred, gt = rng.random((2, 16, 16)) < 0.3
    counts = match_with_tolerance(pred, gt, 0)
    assert counts.tp == counts.matched_gt == np.count_nonzero(pred & gt)
    assert counts.fp == np.count_nonzero(pred & ~gt)
    assert counts.fn == np.count_nonzero(gt & ~pred)


def test_scores_grow_with_tolerance():
    rng = np.random.default_rng(9)
    for _ in range(50):
        pred, gt = rng.random((2, 20, 20)) < 0.1
        previous = None
        for d in (0, 1, 2, 3):
            scores = compute_scores(match_with_tolerance(pred, gt, d))
            if previous is not None:
                assert scores.precision >= previous.precision and scores.recall >= previous.recall
            previous = scores


def test_micro_matches_summed_counts():
    rng = np.random.default_rng(21)
    preds = {f"img_{i}": rng.random((12, 12)) < 0.2 for i in range(6)}
    gts = {f"img_{i}": rng.random((12, 12)) < 0.2 for i in range(6)}
    result = evaluate_dataset(preds, gts, EvalConfig(tolerance_px=1, aggregation=Aggregation.MICRO))
    tp = fp = fn = matched = 0
    for name in preds:
        c = match_with_tolerance(preds[name], gts[name], 1)
        tp, fp, fn, matched = tp + c.tp, fp + c.fp, fn + c.fn, matched + c.matched_gt
    precision, recall = tp / (tp + fp), matched / (matched + fn)
    assert result.micro.precision == pytest.approx(precision)
    assert result.micro.recall == pytest.approx(recall)
    assert result.micro.f1 == pytest.approx(2 * precision * recall / (precision + recall))

    single = evaluate_dataset({"a": preds["img_0"]}, {"a": gts["img_0"]}, EvalConfig(tolerance_px=1))
    assert single.macro == single.micro
