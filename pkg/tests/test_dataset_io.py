import numpy as np
import pytest
from PIL import Image

from models.dataset import DatasetKind
from services.dataset_io import (
    binarize_mask,
    limit_split,
    load_dataset,
    load_manifest,
    load_pair,
    load_split,
    make_split,
    save_manifest,
    save_split,
)
from tests.conftest import write_dataset
from utils.errors import ConfigError, DataIOError, DatasetError, FormatError, PairingError


def test_load_dataset_pairs_and_checksums(dataset_root):
    manifest = load_dataset(dataset_root)
    assert manifest.kind == DatasetKind.CUSTOM
    assert manifest.stems == [f"img_{i:02d}" for i in range(5)]
    entry = manifest.entry("img_00")
    assert (entry.width, entry.height, entry.channels) == (30, 24, 3)
    assert len(entry.image_sha256) == 64 and entry.mask_bytes > 0
    assert load_dataset(dataset_root).digest == manifest.digest


def test_manifest_round_trip(dataset_root, tmp_path):
    manifest = load_dataset(dataset_root)
    path = save_manifest(manifest, tmp_path / "manifest.json")
    assert load_manifest(path) == manifest


def test_missing_mask_is_a_pairing_error(dataset_root):
    (dataset_root / "masks" / "img_02.png").unlink()
    with pytest.raises(PairingError):
        load_dataset(dataset_root)


def test_size_mismatch_and_empty_dataset(tmp_path, dataset_root):
    Image.fromarray(np.zeros((10, 10), dtype=np.uint8)).save(dataset_root / "masks" / "img_01.png")
    with pytest.raises(DatasetError):
        load_dataset(dataset_root)
    (tmp_path / "empty" / "images").mkdir(parents=True)
    with pytest.raises(DatasetError):
        load_dataset(tmp_path / "empty")
    with pytest.raises(DataIOError):
        load_dataset(tmp_path / "absent")


def test_corpus_geometry_is_enforced(dataset_root, tmp_path):
    with pytest.raises(DatasetError):
        load_dataset(dataset_root, "cfd")
    cfd = write_dataset(tmp_path / "cfd", count=1, height=320, width=480)
    assert load_dataset(cfd, DatasetKind.CFD).entry("img_00").width == 480
    aigle = write_dataset(tmp_path / "aigle", count=1, height=462, width=311, grayscale=True)
    assert load_dataset(aigle, "aiglern").entry("img_00").channels == 1
    with pytest.raises(ConfigError):
        load_dataset(dataset_root, "kitti")


def test_binarize_mask():
    raw = np.array([[0, 127, 128, 255]], dtype=np.uint8)
    result = binarize_mask(raw)
    assert result.mask.tolist() == [[False, False, True, True]]
    assert result.crack_fraction == 0.5
    assert binarize_mask(np.zeros((2, 2), np.uint8)).empty
    rgb = np.stack([raw, raw, raw], axis=-1)
    assert binarize_mask(rgb).mask.tolist() == result.mask.tolist()
    rgb[0, 0, 1] = 200
    with pytest.raises(FormatError):
        binarize_mask(rgb)
    with pytest.raises(FormatError):
        binarize_mask(raw.astype(np.uint16))


def test_load_pair(dataset_root):
    manifest = load_dataset(dataset_root)
    image, mask = load_pair(manifest.entry("img_00"))
    assert image.shape == (24, 30, 3) and image.dtype == np.uint8
    assert mask.mask.shape == (24, 30) and not mask.empty


def test_split_is_seeded_and_disjoint(dataset_root, tmp_path):
    manifest = load_dataset(dataset_root)
    split = make_split(manifest, seed=1)
    assert split.counts == (3, 2)
    assert not set(split.train) & set(split.test)
    assert make_split(manifest, seed=1) == split
    assert make_split(manifest, seed=1, train_count=4).counts == (4, 1)
    with pytest.raises(ConfigError):
        make_split(manifest, seed=1, train_count=4, test_count=4)

    path = save_split(split, tmp_path / "split.json")
    assert load_split(path, manifest) == split


def test_split_naming_unknown_images(dataset_root, tmp_path):
    manifest = load_dataset(dataset_root)
    path = tmp_path / "split.json"
    path.write_text('{"dataset": "custom", "seed": 0, "train": ["nope"], "test": ["img_00"]}')
    with pytest.raises(PairingError):
        load_split(path, manifest)
    path.write_text('{"dataset": "custom", "seed": 0, "train": ["img_00"], "test": ["img_00"]}')
    with pytest.raises(ConfigError):
        load_split(path)


def test_limit_split(dataset_root):
    split = make_split(load_dataset(dataset_root), seed=0)
    limited = limit_split(split, 1, None)
    assert limited.train == split.train[:1]
    assert limited.test == split.test
