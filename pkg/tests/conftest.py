import logging
from pathlib import Path
from typing import Tuple

import numpy as np
import pytest
from PIL import Image

from models.network import NetworkSpec, OUTPUT_UNITS, TrainConfig
from services.ensemble import EnsembleMember, EnsembleModel, save_ensemble
from services.nn_core import init_params

logging.basicConfig(level=logging.INFO, format="%(asctime)s - %(name)s - %(levelname)s - %(message)s")


def tiny_network_spec() -> NetworkSpec:
    """Full-size 27x27 input with a single small convolution, cheap enough for tests"""
    return NetworkSpec.build(
        layers=[
            {"kind": "convolution", "feature_maps": 2},
            {"kind": "relu"},
            {"kind": "flatten"},
            {"kind": "dense", "output_width": OUTPUT_UNITS},
            {"kind": "sigmoid"},
        ]
    )


def crack_pair(height: int = 24, width: int = 30, row: int = 12) -> Tuple[np.ndarray, np.ndarray]:
    """Gray pavement with one dark horizontal crack three pixels thick"""
    image = np.full((height, width, 3), 180, dtype=np.uint8)
    mask = np.zeros((height, width), dtype=bool)
    mask[row:row + 3, 3:width - 3] = True
    image[mask] = 40
    return image, mask


def write_dataset(root: Path, count: int = 5, height: int = 24, width: int = 30, grayscale: bool = False) -> Path:
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(count):
        image, mask = crack_pair(height, width, row=4 + 3 * i % (height - 6))
        if grayscale:
            Image.fromarray(image[:, :, 0]).save(root / "images" / f"img_{i:02d}.png")
        else:
            Image.fromarray(image).save(root / "images" / f"img_{i:02d}.png")
        Image.fromarray(np.where(mask, 255, 0).astype(np.uint8)).save(root / "masks" / f"img_{i:02d}.png")
    return root


@pytest.fixture
def tiny_spec() -> NetworkSpec:
    return tiny_network_spec()


@pytest.fixture
def dataset_root(tmp_path) -> Path:
    return write_dataset(tmp_path / "data")


@pytest.fixture
def tiny_ensemble(tmp_path, tiny_spec) -> Path:
    """Three untrained members saved to disk; returns the manifest path"""
    members = [
        EnsembleMember(spec=tiny_spec, params=init_params(tiny_spec, np.random.default_rng(seed)), seed=seed)
        for seed in range(3)
    ]
    model = EnsembleModel(members=members, train_config=TrainConfig(), dataset="custom")
    return save_ensemble(model, tmp_path / "model")
