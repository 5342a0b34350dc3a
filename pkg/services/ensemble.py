"""
Ensemble of independently seeded networks: training, persistence, probability
fusion, thresholding and the (member count, threshold) sweep.
"""

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from models.network import NetworkParams, NetworkSpec, TrainConfig, default_network_spec
from models.pipeline import Aggregation, EvalConfig, FusionConfig, SamplingPolicy, SweepGrid
from services.metrics import ConfusionCounts, ScoreTriple, compute_scores, match_with_tolerance
from services.model_io import load_params, save_params
from services.patches import (
    NetworkPredictor,
    ProbabilityMap,
    SampleSet,
    extract_training_samples,
    infer_probability_map,
)
from services.training import SeedStreams, TrainingHistory, train_network
from utils.errors import ConfigError, DataIOError, NumericError, PairingError, ShapeError

logger = logging.getLogger("ensemble")

MANIFEST_NAME = "ensemble.json"
SWEEP_COLUMNS = ["dataset", "n", "t", "precision", "recall", "f1"]


@dataclass
class EnsembleMember:
    spec: NetworkSpec
    params: NetworkParams
    seed: int
    path: Optional[Path] = None

    def predictor(self) -> NetworkPredictor:
        return NetworkPredictor(self.spec, self.params)


@dataclass
class EnsembleModel:
    members: List[EnsembleMember]
    train_config: TrainConfig
    fusion: FusionConfig = field(default_factory=FusionConfig)
    dataset: Optional[str] = None

    def __len__(self) -> int:
        return len(self.members)

    @property
    def seeds(self) -> List[int]:
        return [member.seed for member in self.members]

    def first(self, n: int) -> List[EnsembleMember]:
        if n < 1 or n > len(self.members):
            raise ConfigError(f"Requested {n} members but the ensemble holds {len(self.members)}")
        return self.members[:n]


def _train_member(
    member: int,
    seed: int,
    spec: NetworkSpec,
    config: TrainConfig,
    policy: SamplingPolicy,
    training_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
) -> Tuple[NetworkParams, TrainingHistory]:
    streams = SeedStreams.from_seed(seed, salt=policy.rng_seed)
    samples = SampleSet.concat(
        [extract_training_samples(image, mask, policy, streams.sampling) for image, mask in training_pairs]
    )
    logger.info(f"member {member} (seed {seed}): {len(samples)} patches, {samples.positive_count} positive")
    try:
        return train_network(spec, config, samples, streams, member=member)
    except NumericError as e:
        raise NumericError(f"Ensemble member {member} (seed {seed}) diverged: {e}") from e


def train_ensemble(
    training_pairs: Sequence[Tuple[np.ndarray, np.ndarray]],
    config: TrainConfig,
    k: int,
    seed_base: int,
    policy: SamplingPolicy = None,
    spec: NetworkSpec = None,
    workers: int = 1,
    dataset: str = None,
) -> Tuple[EnsembleModel, List[TrainingHistory]]:
    """
    Train ``k`` networks that differ only in their seeds

    Args:
        training_pairs: (normalized image, binary mask) per training image
        config: Shared training hyperparameters
        k: Number of members
        seed_base: Member j is seeded with seed_base + j
        policy: Patch sampling policy
        spec: Network layout (default layout when omitted)
        workers: Members trained in parallel processes when > 1
        dataset: Dataset name recorded in the manifest

    Returns:
        The ensemble and one loss history per member, both in member order
    """
    if k < 1:
        raise ConfigError(f"Ensemble size must be >= 1, got {k}")
    if not training_pairs:
        raise ConfigError("Training set is empty")
    policy = policy or SamplingPolicy()
    spec = spec or default_network_spec(config.dropout_rate)
    seeds = [seed_base + j for j in range(k)]

    if workers > 1 and k > 1:
        with ProcessPoolExecutor(max_workers=min(workers, k)) as executor:
            futures = [
                executor.submit(_train_member, j, seed, spec, config, policy, training_pairs)
                for j, seed in enumerate(seeds)
            ]
            results = [future.result() for future in futures]
    else:
        results = [_train_member(j, seed, spec, config, policy, training_pairs) for j, seed in enumerate(seeds)]

    trained_spec = spec.with_dropout(config.dropout_rate)
    members = [EnsembleMember(spec=trained_spec, params=params, seed=seed) for (params, _), seed in zip(results, seeds)]
    histories = [history for _, history in results]
    return EnsembleModel(members=members, train_config=config, dataset=dataset), histories


def save_ensemble(model: EnsembleModel, directory: Union[str, Path]) -> Path:
    """Write member_<j>.crk files and the JSON manifest into ``directory``"""
    directory = Path(directory)
    entries = []
    for j, member in enumerate(model.members):
        path = save_params(member.spec, member.params, directory / f"member_{j}.crk")
        member.path = path
        entries.append({"path": path.name, "seed": member.seed})
    manifest = {
        "dataset": model.dataset,
        "members": entries,
        "train_config": json.loads(model.train_config.json()),
        "train_config_digest": model.train_config.digest(),
        "fusion": json.loads(model.fusion.json()),
    }
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Saved {len(model)} members to {directory}")
    return manifest_path


def load_ensemble(manifest_path: Union[str, Path]) -> EnsembleModel:
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    try:
        manifest = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataIOError(f"Cannot read ensemble manifest {manifest_path}: {e}") from e
    members = []
    for entry in manifest["members"]:
        path = manifest_path.parent / entry["path"]
        spec, params = load_params(path)
        members.append(EnsembleMember(spec=spec, params=params, seed=entry["seed"], path=path))
    if not members:
        raise DataIOError(f"Ensemble manifest {manifest_path} lists no members")
    return EnsembleModel(
        members=members,
        train_config=TrainConfig.build(manifest.get("train_config", {})),
        fusion=FusionConfig.build(manifest.get("fusion", {})),
        dataset=manifest.get("dataset"),
    )


def fuse_probabilities(maps: Sequence[Union[ProbabilityMap, np.ndarray]]) -> ProbabilityMap:
    """
    Per-pixel mean of the member probability maps

    Member values are sorted per pixel before summation, so the result does not
    depend on member order, and the mean is clipped into the per-pixel member range.
    """
    if not maps:
        raise ConfigError("Cannot fuse an empty list of probability maps")
    arrays = [m.probabilities if isinstance(m, ProbabilityMap) else np.asarray(m) for m in maps]
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ShapeError(f"Probability maps differ in size: {sorted({a.shape for a in arrays})}")
    stack = np.sort(np.stack(arrays), axis=0)
    fused = np.clip(stack.mean(axis=0), stack[0], stack[-1])
    first = maps[0]
    if isinstance(first, ProbabilityMap):
        return ProbabilityMap(probabilities=fused, votes=first.votes, stride=first.stride, source=first.source)
    return ProbabilityMap(probabilities=fused, votes=np.ones(fused.shape, dtype=np.int32))


def threshold_map(probability_map: Union[ProbabilityMap, np.ndarray], t: float) -> np.ndarray:
    """Crack where p >= t"""
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"Threshold must lie in [0, 1], got {t}")
    p = probability_map.probabilities if isinstance(probability_map, ProbabilityMap) else np.asarray(probability_map)
    return p >= np.asarray(t, dtype=p.dtype)


def member_maps(
    members: Sequence[EnsembleMember], image: np.ndarray, stride: int = 1, source: str = None
) -> List[ProbabilityMap]:
    return [infer_probability_map(m.predictor(), image, stride=stride, source=source) for m in members]


def ensemble_probability_map(
    model: EnsembleModel, image: np.ndarray, n: int = None, stride: int = 1, source: str = None
) -> ProbabilityMap:
    """Fused probability map of the first ``n`` members (all members when omitted)"""
    members = model.first(n or len(model))
    return fuse_probabilities(member_maps(members, image, stride=stride, source=source))


@dataclass
class SweepResult:
    table: pd.DataFrame

    def __len__(self) -> int:
        return len(self.table)

    @property
    def best(self) -> Dict:
        """Cell with the highest F1; ties go to the smaller n, then the smaller t"""
        ranked = self.table.sort_values(["f1", "n", "t"], ascending=[False, True, True], kind="mergesort")
        return ranked.iloc[0].to_dict()

    def cell(self, n: int, t: float) -> ScoreTriple:
        row = self.table[(self.table["n"] == n) & np.isclose(self.table["t"], t)].iloc[0]
        return ScoreTriple(precision=row["precision"], recall=row["recall"], f1=row["f1"])

    def to_csv(self, path: Union[str, Path]) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        self.table.to_csv(path, index=False)


def sweep_maps(
    maps_per_image: Mapping[str, Sequence[Union[ProbabilityMap, np.ndarray]]],
    ground_truth: Mapping[str, np.ndarray],
    grid: SweepGrid,
    eval_config: EvalConfig = None,
) -> SweepResult:
    """
    Score every (n, t) cell from precomputed member maps

    Args:
        maps_per_image: Member probability maps per image, in member order
        ground_truth: Binary ground truth per image
        grid: Member counts, thresholds and dataset label
        eval_config: Tolerance and aggregation used for every cell

    Returns:
        SweepResult with one row per (n, t) pair
    """
    eval_config = eval_config or EvalConfig()
    if not maps_per_image:
        raise ConfigError("Sweep needs at least one image")
    pool = min(len(maps) for maps in maps_per_image.values())
    if max(grid.n_grid) > pool:
        raise ConfigError(f"Sweep asks for {max(grid.n_grid)} members but the pool holds {pool}")
    unpaired = sorted(set(maps_per_image) - set(ground_truth))
    if unpaired:
        raise PairingError(f"No ground truth for {', '.join(unpaired)}")

    rows = []
    for n in grid.n_grid:
        fused = {name: fuse_probabilities(list(maps)[:n]) for name, maps in maps_per_image.items()}
        for t in grid.t_grid:
            per_image = []
            totals = ConfusionCounts()
            for name in sorted(fused):
                binary = threshold_map(fused[name], t)
                counts = match_with_tolerance(binary, ground_truth[name], eval_config.tolerance_px)
                totals = totals + counts
                per_image.append(compute_scores(counts))
            if eval_config.aggregation == Aggregation.MACRO:
                scores = ScoreTriple(
                    precision=float(np.mean([s.precision for s in per_image])),
                    recall=float(np.mean([s.recall for s in per_image])),
                    f1=float(np.mean([s.f1 for s in per_image])),
                )
            else:
                scores = compute_scores(totals)
            rows.append({"dataset": grid.dataset or "", "n": n, "t": t, **scores.to_dict()})
    result = SweepResult(table=pd.DataFrame(rows, columns=SWEEP_COLUMNS))
    best = result.best
    logger.info(f"Sweep best cell: n={best['n']}, t={best['t']}, F1 {best['f1']:.4f}")
    return result


def sweep(
    model: EnsembleModel,
    images: Mapping[str, np.ndarray],
    ground_truth: Mapping[str, np.ndarray],
    grid: SweepGrid,
    eval_config: EvalConfig = None,
    stride: int = 1,
) -> SweepResult:
    """Run the largest requested sub-ensemble once per image, then score every cell"""
    members = model.first(max(grid.n_grid))
    maps = {name: member_maps(members, images[name], stride=stride, source=name) for name in sorted(images)}
    return sweep_maps(maps, ground_truth, grid, eval_config)
