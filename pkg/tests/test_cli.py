import json
import shutil

import numpy as np
import pandas as pd
import pytest

from cli.main import build_parser, main, overrides_from_args
from utils import errors
from utils.image_io import read_image, read_probability_map, read_uint16


@pytest.fixture(autouse=True)
def isolated_ledger(monkeypatch):
    monkeypatch.delenv("CRACK_DATABASE_URL", raising=False)
    monkeypatch.delenv("CRACK_WORKERS", raising=False)


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / "run"


def test_flags_map_onto_config_fields():
    args = build_parser().parse_args(["evaluate", "--split", "s.json", "--tolerance", "1.5", "--refined", "--n", "2"])
    overrides = overrides_from_args(args)
    assert overrides["split_file"] == "s.json"
    assert overrides["tolerance_px"] == 1.5
    assert overrides["evaluate_refined"] is True
    assert overrides["member_count"] == 2
    train = overrides_from_args(build_parser().parse_args(["train", "--n", "5"]))
    assert train["members"] == 5 and "member_count" not in train


def test_predict_writes_every_artifact(out_dir, dataset_root, tiny_ensemble):
    images = [str(dataset_root / "images" / "img_00.png"), str(dataset_root / "images" / "img_01.png")]
    code = main(
        ["predict", "--out", str(out_dir), "--model", str(tiny_ensemble), "--stride", "5", "--n", "2",
         "--workers", "1", *images]
    )
    assert code == 0
    probabilities = read_probability_map(out_dir / "maps" / "img_00.png")
    assert probabilities.shape == (24, 30)
    assert np.all((probabilities >= 0) & (probabilities <= 1))
    sidecar = json.loads((out_dir / "maps" / "img_00.json").read_text())
    assert sidecar["stride"] == 5 and sidecar["model_ids"] == ["member_0.crk", "member_1.crk"]
    assert set(np.unique(read_image(out_dir / "masks" / "img_01.png"))) <= {0, 255}
    assert read_uint16(out_dir / "masks" / "img_01_labels.png").shape == (24, 30)
    assert (out_dir / "masks" / "img_01_labels.json").is_file()
    assert read_image(out_dir / "overlays" / "img_00.png").shape == (24, 30, 3)
    assert (out_dir / "config.resolved").is_file()
    assert (out_dir / "run.log").is_file()


def test_predict_reports_failed_files_but_finishes_the_rest(out_dir, dataset_root, tiny_ensemble):
    good = str(dataset_root / "images" / "img_00.png")
    code = main(["predict", "--out", str(out_dir), "--model", str(tiny_ensemble), "--stride", "5", good, "missing.png"])
    assert code == 3
    assert (out_dir / "maps" / "img_00.png").is_file()


def test_missing_model_and_bad_config(out_dir, dataset_root):
    image = str(dataset_root / "images" / "img_00.png")
    assert main(["predict", "--out", str(out_dir), "--model", str(out_dir / "none.json"), image]) == 3
    assert main(["predict", "--out", str(out_dir), "--threshold", "1.5", image]) == 2


def test_evaluate_stored_predictions(out_dir, dataset_root):
    predictions = out_dir.parent / "preds"
    shutil.copytree(dataset_root / "masks", predictions)
    code = main(
        ["evaluate", "--root", str(dataset_root), "--out", str(out_dir), "--predictions", str(predictions),
         "--tolerance", "0"]
    )
    assert code == 0
    table = pd.read_csv(out_dir / "reports" / "evaluation.csv")
    assert table["image"].iloc[-1] == "summary"
    assert (table["f1"] == 1.0).all()
    split = json.loads((out_dir / "reports" / "split.json").read_text())
    assert len(split["train"]) == 3 and len(split["test"]) == 2


def test_evaluate_missing_prediction_is_a_dataset_error(out_dir, dataset_root):
    predictions = out_dir.parent / "preds"
    predictions.mkdir()
    code = main(["evaluate", "--root", str(dataset_root), "--out", str(out_dir), "--predictions", str(predictions)])
    assert code == 6


def test_measure_masks_with_ground_truth(out_dir, dataset_root):
    mask = str(dataset_root / "masks" / "img_00.png")
    code = main(["measure", "--out", str(out_dir), "--min-area", "4", "--calibration", "0.5", mask, "--gt", mask])
    assert code == 0
    rows = pd.read_csv(out_dir / "reports" / "img_00_measurements.csv")
    assert len(rows) == 1
    assert rows["length_units"].iloc[0] == pytest.approx(0.5 * rows["length_px"].iloc[0])
    comparison = pd.read_csv(out_dir / "reports" / "measurement_comparison.csv")
    assert comparison["diff_total_length_px"].iloc[0] == 0
    assert (out_dir / "overlays" / "img_00_skeleton.png").is_file()


def test_sweep_with_stored_ensemble(out_dir, dataset_root, tiny_ensemble):
    code = main(
        ["sweep", "--root", str(dataset_root), "--out", str(out_dir), "--model", str(tiny_ensemble),
         "--n-grid", "1,2", "--t-grid", "0.4,0.6", "--stride", "5", "--workers", "1"]
    )
    assert code == 0
    table = pd.read_csv(out_dir / "reports" / "sweep.csv")
    assert len(table) == 4
    best = json.loads((out_dir / "reports" / "sweep_best.json").read_text())
    assert best["n"] in (1, 2)
    assert (out_dir / "reports" / "sweep.html").is_file()


def test_sweep_larger_than_ensemble_is_a_config_error(out_dir, dataset_root, tiny_ensemble):
    code = main(
        ["sweep", "--root", str(dataset_root), "--out", str(out_dir), "--model", str(tiny_ensemble), "--n-grid", "5"]
    )
    assert code == 2


def test_train_then_predict(out_dir, dataset_root):
    code = main(
        ["train", "--root", str(dataset_root), "--out", str(out_dir), "--n", "1", "--epochs", "1",
         "--batch-size", "32", "--max-positive-per-image", "4", "--workers", "1", "--seed", "3"]
    )
    assert code == 0
    manifest = json.loads((out_dir / "models" / "ensemble.json").read_text())
    assert [m["seed"] for m in manifest["members"]] == [3]
    assert (out_dir / "reports" / "training_loss.csv").is_file()

    image = str(dataset_root / "images" / "img_00.png")
    assert main(["predict", "--out", str(out_dir), "--stride", "5", "--workers", "1", image]) == 0


def test_gradcheck_exit_codes(out_dir):
    assert main(["gradcheck", "--out", str(out_dir)]) == 0
    report = json.loads((out_dir / "reports" / "gradcheck.json").read_text())
    assert report["passed"] is True
    assert main(["gradcheck", "--out", str(out_dir), "--corrupt-gradient"]) == 5


def test_history_lists_recorded_runs(out_dir, dataset_root, capsys):
    mask = str(dataset_root / "masks" / "img_00.png")
    main(["measure", "--out", str(out_dir), mask])
    main(["predict", "--out", str(out_dir), "--model", str(out_dir / "none.json"), mask])
    capsys.readouterr()
    assert main(["history", "--out", str(out_dir)]) == 0
    printed = capsys.readouterr().out
    assert "measure" in printed and "predict" in printed and "failed" in printed


@pytest.mark.parametrize(
    "error, code",
    [
        (errors.CrackPipelineError, 1),
        (errors.ConfigError, 2),
        (errors.DataIOError, 3),
        (errors.ModelFormatError, 3),
        (errors.ShapeError, 4),
        (errors.NumericError, 5),
        (errors.DatasetError, 6),
        (errors.StateError, 7),
        (errors.MeasurementError, 8),
    ],
)
def test_errors_carry_their_exit_codes(error, code):
    assert error.exit_code == code


def train_args(dataset_root, out):
    return [
        "train", "--root", str(dataset_root), "--out", str(out), "--n", "2", "--epochs", "1", "--batch-size", "32",
        "--max-positive-per-image", "6", "--workers", "1", "--seed", "5",
    ]


def test_training_twice_with_one_seed_writes_identical_model_files(tmp_path, dataset_root):
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(train_args(dataset_root, first)) == 0
    assert main(train_args(dataset_root, second)) == 0
    members = sorted(p.name for p in (first / "models").glob("member_*.crk"))
    assert members == ["member_0.crk", "member_1.crk"]
    for name in members:
        assert (first / "models" / name).read_bytes() == (second / "models" / name).read_bytes(), name


def test_predicting_twice_writes_identical_files(tmp_path, dataset_root, tiny_ensemble):
    images = [str(dataset_root / "images" / "img_00.png"), str(dataset_root / "images" / "img_03.png")]
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        args = ["predict", "--out", str(out), "--model", str(tiny_ensemble), "--stride", "1", "--workers", "1"]
        assert main(args + images) == 0
        outputs.append(out)
    written = sorted(p.relative_to(outputs[0]) for folder in ("maps", "masks", "overlays")
                     for p in (outputs[0] / folder).glob("*.png"))
    assert len(written) >= 6
    for relative in written:
        assert (outputs[0] / relative).read_bytes() == (outputs[1] / relative).read_bytes(), str(relative)
