"""
Command handlers: each takes the resolved RunConfig and returns an exit code
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from models.dataset import SplitSpec
from services.dataset_io import (
    binarize_mask,
    limit_split,
    load_dataset,
    load_pair,
    load_split,
    make_split,
    save_manifest,
    save_split,
)
from services.ensemble import (
    EnsembleModel,
    ensemble_probability_map,
    load_ensemble,
    member_maps,
    save_ensemble,
    sweep_maps,
    threshold_map,
    train_ensemble,
)
from services.gradcheck import run_gradcheck
from services.metrics import evaluate_dataset, write_evaluation_report
from services.morphology import RefinedMask, refine_mask
from services.patches import ProbabilityMap, normalize_image
from services.run_registry import RunRegistry
from services.skeleton import MeasurementSummary, compare_measurements, measure_all, skeletonize
from services.visualizer import CrackVisualizer, write_figure
from utils.config import RunConfig, workers_from_env
from utils.errors import ConfigError, CrackPipelineError, DatasetError, NumericError, PairingError
from utils.image_io import read_image, write_json, write_mask, write_probability_map, write_rgb, write_uint16

logger = logging.getLogger("commands")

OUTPUT_DIRS = ("models", "maps", "masks", "overlays", "reports")
MEASUREMENT_COLUMNS = [
    "id",
    "area_px",
    "length_px",
    "mean_width_px",
    "calibration",
    "length_units",
    "width_units",
    "degenerate",
]


@dataclass
class RunContext:
    config: RunConfig
    registry: Optional[RunRegistry] = None
    run_id: Optional[int] = None

    @property
    def out(self) -> Path:
        return self.config.out_dir

    def path(self, *parts: str) -> Path:
        return self.out.joinpath(*parts)

    @property
    def workers(self) -> int:
        return self.config.workers or workers_from_env()

    def record_score(self, scope: str, scores, member_count=None, threshold=None) -> None:
        if self.registry is None or self.run_id is None:
            return
        try:
            self.registry.record_score(self.run_id, scope, scores, member_count=member_count, threshold=threshold)
        except CrackPipelineError as e:
            logger.warning(f"Could not record score in the run ledger: {e}")


def prepare_output_tree(out: Path) -> None:
    for name in OUTPUT_DIRS:
        (out / name).mkdir(parents=True, exist_ok=True)


def _ordered_map(ctx: RunContext, func: Callable, items: Sequence) -> List:
    """Apply ``func`` to every item on a thread pool, results in input order"""
    if ctx.workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=ctx.workers) as executor:
        return list(executor.map(func, items))


def _dataset_split(ctx: RunContext):
    config = ctx.config
    if not config.root:
        raise ConfigError("A dataset root is required (--root or 'root' in the config file)")
    manifest = load_dataset(config.root, config.dataset)
    save_manifest(manifest, ctx.path("reports", "manifest.json"))
    if config.split_file:
        split = load_split(config.split_file, manifest)
    else:
        split = make_split(manifest, config.split_seed, config.train_count, config.test_count)
    save_split(split, ctx.path("reports", "split.json"))
    split = limit_split(split, config.train_limit, config.test_limit)
    logger.info(f"Split: {len(split.train)} training and {len(split.test)} test images")
    return manifest, split


def cmd_train(ctx: RunContext) -> int:
    config = ctx.config
    manifest, split = _dataset_split(ctx)
    if not split.train:
        raise DatasetError("The training split is empty")

    def load(stem: str):
        raw, mask = load_pair(manifest.entry(stem))
        if mask.empty:
            logger.warning(f"{stem}: ground truth has no crack pixels")
        return normalize_image(raw), mask.mask

    pairs = _ordered_map(ctx, load, split.train)
    model, histories = train_ensemble(
        pairs,
        config.train_config(),
        k=config.members,
        seed_base=config.seed,
        policy=config.sampling_policy(),
        workers=ctx.workers,
        dataset=config.dataset.value,
    )
    model.fusion = config.fusion_config()
    manifest_path = save_ensemble(model, config.model_path.parent)

    losses = pd.concat([h.to_frame() for h in histories], ignore_index=True)
    losses.to_csv(ctx.path("reports", "training_loss.csv"), index=False)
    write_figure(CrackVisualizer().create_loss_figure(histories), ctx.path("reports", "training_loss.html"))
    print(f"Trained {len(model)} members (seeds {model.seeds}); manifest: {manifest_path}")
    return 0


@dataclass
class Prediction:
    stem: str
    raw: np.ndarray
    probability: ProbabilityMap
    binary: np.ndarray
    refined: RefinedMask


def _predict_image(ctx: RunContext, model: EnsembleModel, path: Path) -> Prediction:
    config = ctx.config
    fusion = config.fusion_config(len(model))
    stem = path.stem
    raw = read_image(path)
    probability = ensemble_probability_map(
        model, normalize_image(raw), n=fusion.member_count, stride=config.stride, source=stem
    )
    binary = threshold_map(probability, fusion.threshold)
    refined = refine_mask(binary, config.morphology_options())
    visualizer = CrackVisualizer()
    write_probability_map(
        probability.probabilities,
        ctx.path("maps", f"{stem}.png"),
        {
            "source": str(path),
            "model_ids": [str(m.path.name) if m.path else f"seed-{m.seed}" for m in model.first(fusion.member_count)],
            "stride": config.stride,
            "threshold_hint": fusion.threshold,
        },
    )
    write_mask(binary, ctx.path("masks", f"{stem}.png"))
    write_mask(refined.mask, ctx.path("masks", f"{stem}_refined.png"))
    write_uint16(refined.labels, ctx.path("masks", f"{stem}_labels.png"))
    write_json([c.to_dict() for c in refined.components], ctx.path("masks", f"{stem}_labels.json"))
    write_rgb(visualizer.create_prediction_overlay(raw, refined.mask), ctx.path("overlays", f"{stem}.png"))
    write_rgb(visualizer.create_label_overlay(refined.labels), ctx.path("overlays", f"{stem}_labels.png"))
    logger.info(f"{stem}: {int(binary.sum())} crack pixels, {len(refined.components)} cracks after refinement")
    return Prediction(stem=stem, raw=raw, probability=probability, binary=binary, refined=refined)


def _predict_batch(
    ctx: RunContext, model: EnsembleModel, paths: Sequence[Path]
) -> Tuple[List[Prediction], Dict[str, CrackPipelineError]]:
    """Predict every path; per-file failures are collected, never abort the batch"""

    def attempt(path: Path):
        try:
            return _predict_image(ctx, model, path)
        except CrackPipelineError as e:
            logger.error(f"{path}: {e}")
            return e

    results = _ordered_map(ctx, attempt, list(paths))
    done = [r for r in results if isinstance(r, Prediction)]
    failures = {str(p): r for p, r in zip(paths, results) if not isinstance(r, Prediction)}
    return done, failures


def _test_image_paths(ctx: RunContext) -> Tuple[List[Path], object, SplitSpec]:
    manifest, split = _dataset_split(ctx)
    if not split.test:
        raise DatasetError("The test split is empty")
    return [Path(manifest.entry(stem).image_path) for stem in split.test], manifest, split


def cmd_predict(ctx: RunContext, inputs: Sequence[str]) -> int:
    model = load_ensemble(ctx.config.model_path)
    paths = [Path(p) for p in inputs] if inputs else _test_image_paths(ctx)[0]
    predictions, failures = _predict_batch(ctx, model, paths)
    print(f"Predicted {len(predictions)} of {len(paths)} images into {ctx.out}")
    if failures:
        print("Failed:")
        for path, error in failures.items():
            print(f"  {path}: {error}")
        return next(iter(failures.values())).exit_code
    return 0


def cmd_evaluate(ctx: RunContext, predictions_dir: Optional[str] = None) -> int:
    config = ctx.config
    paths, manifest, split = _test_image_paths(ctx)
    ground_truth = {stem: binarize_mask(read_image(manifest.entry(stem).mask_path)).mask for stem in split.test}

    member_count, threshold = None, config.threshold
    if predictions_dir:
        predictions = {}
        for stem in split.test:
            mask_path = Path(predictions_dir) / f"{stem}.png"
            if not mask_path.is_file():
                raise PairingError(f"No prediction for {stem} at {mask_path}")
            predictions[stem] = binarize_mask(read_image(mask_path)).mask
    else:
        model = load_ensemble(config.model_path)
        fusion = config.fusion_config(len(model))
        member_count, threshold = fusion.member_count, fusion.threshold
        done, failures = _predict_batch(ctx, model, paths)
        if failures:
            raise DatasetError(f"Prediction failed for {len(failures)} test image(s): {', '.join(failures)}")
        predictions = {p.stem: (p.refined.mask if config.evaluate_refined else p.binary) for p in done}

    result = evaluate_dataset(predictions, ground_truth, config.eval_config())
    write_evaluation_report(result, ctx.path("reports", "evaluation.csv"), ctx.path("reports", "evaluation.json"))
    headline = result.headline
    ctx.record_score(f"evaluate:{config.aggregation.value}", headline, member_count, threshold)
    print(
        f"{config.aggregation.value} over {len(result.per_image)} images: "
        f"Pr {headline.precision:.4f}  Re {headline.recall:.4f}  F1 {headline.f1:.4f}"
    )
    return 0


def _measure_mask(ctx: RunContext, mask: np.ndarray):
    refined = refine_mask(mask, ctx.config.morphology_options())
    skeleton = skeletonize(refined.mask)
    measurements = measure_all(refined.labels, refined.mask, ctx.config.calibration, skeleton=skeleton)
    return refined, skeleton, measurements


def cmd_measure(
    ctx: RunContext, inputs: Sequence[str], gt_paths: Sequence[str] = (), from_image: bool = False
) -> int:
    if gt_paths and len(gt_paths) != len(inputs):
        raise ConfigError(f"Got {len(gt_paths)} ground-truth masks for {len(inputs)} inputs")
    if not inputs:
        raise ConfigError("measure needs at least one mask or image")
    model = load_ensemble(ctx.config.model_path) if from_image else None
    visualizer = CrackVisualizer()
    comparison = []
    for index, item in enumerate(inputs):
        path = Path(item)
        if from_image:
            prediction = _predict_image(ctx, model, path)
            mask, backdrop = prediction.binary, prediction.raw
        else:
            mask = binarize_mask(read_image(path)).mask
            backdrop = np.where(mask, 255, 0).astype(np.uint8)
        _, skeleton, measurements = _measure_mask(ctx, mask)
        if not measurements:
            logger.warning(f"{path.stem}: no cracks to measure")
        records = [m.to_dict() for m in measurements]
        write_json(records, ctx.path("reports", f"{path.stem}_measurements.json"))
        pd.DataFrame(records, columns=MEASUREMENT_COLUMNS).to_csv(
            ctx.path("reports", f"{path.stem}_measurements.csv"), index=False
        )
        write_rgb(
            visualizer.create_skeleton_overlay(backdrop, skeleton), ctx.path("overlays", f"{path.stem}_skeleton.png")
        )
        print(f"{path.stem}: {len(measurements)} cracks measured")

        if gt_paths:
            gt_mask = binarize_mask(read_image(gt_paths[index])).mask
            _, _, gt_measurements = _measure_mask(ctx, gt_mask)
            row = compare_measurements(
                MeasurementSummary.from_measurements(measurements),
                MeasurementSummary.from_measurements(gt_measurements),
            )
            comparison.append({"image": path.stem, **row})
    if comparison:
        pd.DataFrame(comparison).to_csv(ctx.path("reports", "measurement_comparison.csv"), index=False)
    return 0


def cmd_sweep(ctx: RunContext) -> int:
    config = ctx.config
    grid = config.sweep_grid()
    model = load_ensemble(config.model_path)
    members = model.first(max(grid.n_grid))
    paths, manifest, split = _test_image_paths(ctx)

    def maps_for(path: Path):
        return member_maps(members, normalize_image(read_image(path)), stride=config.stride, source=path.stem)

    maps = dict(zip(split.test, _ordered_map(ctx, maps_for, paths)))
    ground_truth = {stem: binarize_mask(read_image(manifest.entry(stem).mask_path)).mask for stem in split.test}
    result = sweep_maps(maps, ground_truth, grid, config.eval_config())
    result.to_csv(ctx.path("reports", "sweep.csv"))
    write_figure(CrackVisualizer().create_sweep_figure(result), ctx.path("reports", "sweep.html"))
    best = result.best
    best_cell = {k: (v.item() if hasattr(v, "item") else v) for k, v in best.items()}
    write_json(best_cell, ctx.path("reports", "sweep_best.json"))
    for row in result.table.itertuples(index=False):
        ctx.record_score("sweep", row, member_count=int(row.n), threshold=float(row.t))
    print(f"{len(result)} sweep cells; best n={best['n']}, t={best['t']}, F1 {best['f1']:.4f}")
    return 0


def cmd_gradcheck(ctx: RunContext, corrupt: bool = False) -> int:
    report = run_gradcheck(seed=ctx.config.seed, corrupt=corrupt)
    write_json(
        {
            "max_relative_error": report.max_relative_error,
            "tolerance": report.tolerance,
            "checked": report.checked,
            "skipped_kinks": report.skipped_kinks,
            "passed": report.passed,
        },
        ctx.path("reports", "gradcheck.json"),
    )
    print(report.summary())
    if not report.passed:
        raise NumericError(f"Gradient audit failed: {report.summary()}")
    return 0


def cmd_history(ctx: RunContext, limit: int = 20) -> int:
    if ctx.registry is None:
        raise ConfigError("The run ledger is unavailable")
    runs = ctx.registry.list_runs(limit)
    if not runs:
        print("No runs recorded")
        return 0
    table = pd.DataFrame(
        [
            {
                **{k: run[k] for k in ("id", "command", "dataset", "status", "exit_code", "started_at")},
                "best_f1": max((s["f1"] for s in run["scores"]), default=None),
            }
            for run in runs
        ]
    )
    print(table.to_string(index=False))
    return 0
