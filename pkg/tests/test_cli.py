"""
File used in the testing of the command line, the report writers and
the end-to-end experiment in the flowlens folder
"""

import csv
import json
import sys
from pathlib import Path
from typing import List, Optional
import numpy as np
import pytest
from pytest import fixture

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from core.errors import NumericError, ParameterError, StageError
from core.grid_io import read_grid, write_grid
from core.grids import AnomalyMap, BinaryMask, Label, round_half_up
from evaluation.detection import DetectionConfig, DetectionRow, FrocCurve, LabelFilter
from evaluation.segmentation import evaluate_segmentation
from flow_model.training import TrainConfig
from flowlens.cli import exit_code, main
from flowlens.experiment import (
    ExperimentConfig,
    ModelConfig,
    VariantConfig,
    detection_thresholds,
    reference_rows,
    reference_score,
    reference_threshold,
    run_experiment,
    stage,
)
from flowlens.reports import (
    ComparisonRow,
    VariantSummary,
    compare_reports,
    fmt,
    read_seg_report,
    seg_rows,
    summary_markdown,
    write_seg_report,
)
from prepare_data.dataset import DatasetConfig, load_dataset
from prepare_data.lesions import LesionParams
from prepare_data.phantoms import PhantomParams


def _seg_report(shift: float):
    gts, maps = [], []
    for area in range(1, 7):
        gt = np.zeros((8, 8), dtype=bool)
        gt[2, :area] = True
        gts.append(BinaryMask(gt))
        scores = gt.astype(float)
        scores[3, :max(area - 1, 1)] = shift * area
        maps.append(AnomalyMap(scores))
    return evaluate_segmentation([f"sub-{i:04d}" for i in range(6)], maps, gts, threshold=0.5)


@fixture
def dataset_dir(tmp_path: Path) -> Path:
    """
    Small dataset generated through the command line

    Args:
        tmp_path (Path): temporary directory

    Returns:
        (Path): dataset directory
    """
    out = tmp_path / "data"
    code = main(["generate", "--n", "20", "--seed", "1", "--lesion-probability", "1.0",
                 "--raters", "--out", str(out)])
    assert code == 0
    return out


def _small_experiment(out_dir: Path) -> ExperimentConfig:
    return ExperimentConfig(
        out_dir=str(out_dir),
        dataset=DatasetConfig(n_subjects=20, n_normal=2, lesion_probability=1.0, seed=5,
                              phantom=PhantomParams(size=16),
                              lesion=LesionParams(radius_range=(1.0, 2.5))),
        model=ModelConfig(hidden=[16], pairs_per_subject=1),
        variants=[VariantConfig(name="clean", train=TrainConfig(epochs=3)),
                  VariantConfig(name="contaminated", contamination_fraction=0.5,
                                train=TrainConfig(epochs=3))],
        detection=DetectionConfig(calibrate_lowest=True),
        svg=True,
    )

# Testing the command line

def test_generate_train_reconstruct_evaluate(dataset_dir: Path, tmp_path: Path) -> None:
    """
    Tests the staged pipeline through the subcommands

    Args:
        dataset_dir (Path): generated dataset
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    model = tmp_path / "model.aflw"
    maps = tmp_path / "maps"

    assert (dataset_dir / "annotations_rater_a.csv").exists()
    assert main(["train", "--data", str(dataset_dir), "--out", str(model), "--epochs", "2",
                 "--hidden", "8", "--pairs-per-subject", "1"]) == 0
    assert model.exists() and (tmp_path / "model_loss_history.csv").exists()
    assert main(["reconstruct", "--model", str(model), "--data", str(dataset_dir),
                 "--out", str(maps)]) == 0
    assert len(list(maps.glob("*.agrd"))) == 2 + 2 + 4
    assert main(["evaluate-seg", "--maps", str(maps), "--gt", str(dataset_dir),
                 "--out", str(tmp_path / "seg.csv")]) == 0
    assert main(["evaluate-froc", "--maps", str(maps), "--data", str(dataset_dir),
                 "--calibrate", "--annotations", str(dataset_dir / "annotations.csv"),
                 "--out", str(tmp_path / "froc.csv")]) == 0
    assert (tmp_path / "froc_curve.csv").exists()
    assert main(["merge-annotations", "--a", str(dataset_dir / "annotations_rater_a.csv"),
                 "--b", str(dataset_dir / "annotations_rater_b.csv"),
                 "--out", str(tmp_path / "merged.csv")]) == 0

def test_usage_errors(tmp_path: Path) -> None:
    """
    Tests that bad command lines exit with 1

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    assert main(["evaluate-froc", "--maps", str(tmp_path), "--out", str(tmp_path / "f.csv")]) == 1
    assert main(["unknown-command"]) == 1
    assert main(["generate", "--n", "5", "--out", str(tmp_path / "d")]) == 1
    assert main(["generate", "--n", "10", "--lesion-probability", "2",
                 "--out", str(tmp_path / "d")]) == 1

def test_format_error_exit(tmp_path: Path) -> None:
    """
    Tests that a corrupt map exits with 2

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    maps = tmp_path / "maps"
    maps.mkdir()
    (maps / "sub-0001.agrd").write_bytes(b"not a grid")
    annotations = tmp_path / "annotations.csv"
    annotations.write_text("subject_id,x,y,label,rater\nsub-0001,1.0,1.0,lesion,\n",
                           encoding="utf-8")

    assert main(["evaluate-froc", "--maps", str(maps), "--annotations", str(annotations),
                 "--out", str(tmp_path / "froc.csv")]) == 2

def test_undecodable_annotations_exit(tmp_path: Path) -> None:
    """
    Tests that an annotation file which is not UTF-8 exits with 2

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    maps = tmp_path / "maps"
    maps.mkdir()
    write_grid(maps / "sub-0001.agrd", AnomalyMap(np.zeros((8, 8))))
    annotations = tmp_path / "annotations.csv"
    annotations.write_bytes(b"subject_id,x,y,label,rater\nsub-0001,1.0,1.0,l\xe9sion,\n")

    assert main(["evaluate-froc", "--maps", str(maps), "--annotations", str(annotations),
                 "--out", str(tmp_path / "froc.csv")]) == 2

def test_divergence_exit(dataset_dir: Path, tmp_path: Path) -> None:
    """
    Tests that diverging training exits with 3

    Args:
        dataset_dir (Path): generated dataset
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    assert main(["train", "--data", str(dataset_dir), "--out", str(tmp_path / "m.aflw"),
                 "--epochs", "3", "--lr", "1e6", "--optimizer", "sgd", "--batch-size", "1",
                 "--hidden", "8", "--pairs-per-subject", "1"]) == 3

def test_report_appends(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """
    Tests that the report command prints and appends the
    paired tests

    Args:
        tmp_path (Path): temporary directory
        capsys (CaptureFixture): captured output

    Returns:
        None
    """
    write_seg_report(tmp_path / "a.csv", _seg_report(0.0))
    write_seg_report(tmp_path / "b.csv", _seg_report(1.0))
    out = tmp_path / "comparison.csv"

    assert main(["report", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv"),
                 "--out", str(out)]) == 0
    assert main(["report", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv"),
                 "--out", str(out)]) == 0
    with open(out, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0][0] == "group"
    assert len(rows) == 1 + 2 * 4
    assert "All\tdice" in capsys.readouterr().out

def test_schema(capsys: pytest.CaptureFixture) -> None:
    """
    Tests that the schema command prints the configuration schema

    Args:
        capsys (CaptureFixture): captured output

    Returns:
        None
    """
    assert main(["schema"]) == 0
    schema = json.loads(capsys.readouterr().out)
    assert "variants" in schema["properties"]

def test_exit_code_mapping() -> None:
    """
    Tests that stage failures map through their cause

    Args:
        None

    Returns:
        None
    """
    numeric = NumericError("boom", epoch=2)
    staged = StageError("train:clean", numeric)
    staged.__cause__ = numeric

    assert exit_code(staged) == 3
    assert exit_code(ParameterError("bad")) == 1
    assert exit_code(OSError("missing")) == 2
    assert exit_code(KeyError("other")) is None

# Testing the report writers

def test_seg_report_round_trip(tmp_path: Path) -> None:
    """
    Tests that the per-subject rows read back as written and
    that the aggregate rows follow them

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    report = _seg_report(1.0)
    write_seg_report(tmp_path / "seg.csv", report)
    rows = read_seg_report(tmp_path / "seg.csv")

    assert [r["id"] for r in rows] == [r["id"] for r in seg_rows(report)]
    assert all(r["dice"] == float(fmt(s["dice"])) for r, s in zip(rows, seg_rows(report)))
    text = (tmp_path / "seg.csv").read_text(encoding="utf-8").splitlines()
    assert [line.split(",")[1] for line in text[-4:]] == ["All", "S", "M", "L"]

def test_compare_reports_rows() -> None:
    """
    Tests one comparison row per group

    Args:
        None

    Returns:
        None
    """
    rows = compare_reports(seg_rows(_seg_report(0.0)), seg_rows(_seg_report(1.0)))

    assert [r.group for r in rows] == ["All", "S", "M", "L"]
    assert rows[0].n == 6
    with pytest.raises(ParameterError):
        compare_reports(seg_rows(_seg_report(0.0)), [], "dice")

# Testing the experiment

def test_stage_wraps_failures() -> None:
    """
    Tests that a failing stage raises a StageError naming it

    Args:
        None

    Returns:
        None
    """
    with pytest.raises(StageError) as info:
        with stage("train:clean"):
            raise NumericError("diverged", epoch=4)
    assert info.value.stage == "train:clean"
    assert isinstance(info.value.__cause__, NumericError)

def test_detection_thresholds_calibration() -> None:
    """
    Tests that calibration replaces the lowest threshold only
    when it is positive

    Args:
        None

    Returns:
        None
    """
    cfg = DetectionConfig(calibrate_lowest=True)
    normal = [AnomalyMap(np.array([[0.0, 0.0], [0.0, 4.0]]))]

    thresholds, calibrated = detection_thresholds(cfg, normal)
    assert calibrated == pytest.approx(1.0 + 3.0 * np.sqrt(3.0))
    assert thresholds == [0.1, 0.5, calibrated]
    assert detection_thresholds(cfg, [AnomalyMap(np.zeros((2, 2)))]) == ([0.036, 0.1, 0.5], None)

def test_detection_thresholds_sorted() -> None:
    """
    Tests that thresholds come out ascending whatever the configured
    order and wherever the calibrated value lands

    Args:
        None

    Returns:
        None
    """
    unsorted = DetectionConfig(binarize_thresholds=[0.5, 0.036, 0.1])
    calibrating = DetectionConfig(binarize_thresholds=[0.5, 0.036, 0.1], calibrate_lowest=True)
    normal = [AnomalyMap(np.array([[0.0, 0.0], [0.0, 0.1]]))]

    assert detection_thresholds(unsorted, normal) == ([0.036, 0.1, 0.5], None)
    thresholds, calibrated = detection_thresholds(calibrating, normal)
    assert calibrated == pytest.approx(0.025 + 0.075 * np.sqrt(3.0))
    assert thresholds == [0.1, calibrated, 0.5]


def _detection_rows(thresholds: List[float], scores: List[float]) -> List[DetectionRow]:
    return [DetectionRow(threshold=t, label_filter=label_filter, score=score, n_images=4,
                         n_points=4, n_excluded=0, curve=FrocCurve(points=((0.0, score),)))
            for t, score in zip(thresholds, scores)
            for label_filter in (LabelFilter.LESION, LabelFilter.NON_LESIONAL)]


def _variant_summary(name: str, thresholds: List[float], scores: List[float],
                     calibrated: Optional[float]) -> VariantSummary:
    return VariantSummary(name=name, seg=_seg_report(1.0),
                          detection=_detection_rows(thresholds, scores),
                          confidence={Label.LESION: 0.9, Label.NON_LESIONAL: 0.2},
                          calibrated_threshold=calibrated)

def test_reference_rows_use_calibrated_threshold() -> None:
    """
    Tests that single-threshold readouts use the calibrated value
    even when a configured threshold is smaller

    Args:
        None

    Returns:
        None
    """
    calibrated = _variant_summary("clean", [0.1, 0.5, 0.617], [1.0, 0.9, 0.625], 0.617)
    uncalibrated = _variant_summary("plain", [0.1, 0.5], [1.0, 0.9], None)

    assert reference_threshold(calibrated) == 0.617
    assert [r.threshold for r in reference_rows(calibrated)] == [0.617, 0.617]
    assert reference_score(calibrated, LabelFilter.NON_LESIONAL) == 0.625
    assert reference_threshold(uncalibrated) == 0.1
    assert reference_score(uncalibrated, LabelFilter.LESION) == 1.0
    with pytest.raises(ParameterError, match="no 'all' rows"):
        reference_score(calibrated, LabelFilter.ALL)

def test_summary_markdown_layout() -> None:
    """
    Tests that calibrated rows line up across variants and that the
    significance marker only follows the compared p-value

    Args:
        None

    Returns:
        None
    """
    first = _variant_summary("clean", [0.1, 0.5, 0.617], [1.0, 0.9, 0.625], 0.617)
    second = _variant_summary("contaminated", [0.1, 0.3, 0.5], [1.0, 0.5, 0.8], 0.3)
    comparison = [ComparisonRow("All", "hd95", 6, 0.0, 0.02, "exact")]
    text = summary_markdown([first, second], comparison)
    lines = text.splitlines()

    assert "| calibrated | Non-lesion anomalies | 0.625 | 0.500 |" in lines
    assert "| 0.500 | Lesions only | 0.900 | 0.800 |" in lines
    segmentation = text.split("## Detection")[0]
    assert "*" not in segmentation
    assert "| All | hd95 | 6 | 0.0 | 0.0200* | exact |" in lines
    assert sum("*" in line for line in lines if line.startswith("|")) == 1

def test_run_experiment_is_deterministic(tmp_path: Path) -> None:
    """
    Tests the output tree and that two runs with the same seeds
    write byte-identical results

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    first = run_experiment(_small_experiment(tmp_path / "first"))
    run_experiment(_small_experiment(tmp_path / "second"))

    assert set(first.variants) == {"clean", "contaminated"}
    assert (tmp_path / "first" / "summary.md").exists()
    assert (tmp_path / "first" / "froc.svg").exists()
    manifest = json.loads((tmp_path / "first" / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seeds"]["dataset"] == 5
    for name in ("comparison.csv", "clean/seg_report.csv", "clean/froc.csv",
                 "clean/froc_curve.csv", "clean/loss_history.csv", "clean/model.aflw",
                 "contaminated/seg_report.csv", "contaminated/froc.csv",
                 "contaminated/data/annotations.csv"):
        assert (tmp_path / "first" / name).read_bytes() == \
            (tmp_path / "second" / name).read_bytes(), name

def _click_window_score(variant_dir: Path) -> float:
    """
    Mean anomaly score over the 3x3 windows around the non-lesional
    clicks of the test split
    """
    dataset = load_dataset(variant_dir / "data")
    scores = []
    for subject in dataset.test:
        clicks = [a for a in subject.annotations if a.label == Label.NON_LESIONAL]
        if not clicks:
            continue
        pixels = read_grid(variant_dir / "maps" / f"{subject.id}.agrd").values
        for click in clicks:
            col, row = round_half_up(click.x), round_half_up(click.y)
            window = pixels[max(row - 1, 0):row + 2, max(col - 1, 0):col + 2]
            scores.append(float(window.mean()))
    assert scores
    return float(np.mean(scores))

@pytest.mark.slow
def test_clean_variant_finds_subtle_anomalies(tmp_path: Path) -> None:
    """
    Tests with the default experiment that, for at least one of three
    dataset seeds, the clean variant scores non-lesional anomalies at
    least as well as the contaminated one and reconstructs them with
    a larger difference

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    outcomes = []
    for seed in (1, 2, 3):
        out = tmp_path / f"seed_{seed}"
        report = run_experiment(ExperimentConfig(
            out_dir=str(out), dataset=DatasetConfig(seed=seed),
            detection=DetectionConfig(calibrate_lowest=True)))
        clean = reference_score(report.variants["clean"].summary, LabelFilter.NON_LESIONAL)
        contaminated = reference_score(report.variants["contaminated"].summary,
                                       LabelFilter.NON_LESIONAL)
        window_clean = _click_window_score(out / "clean")
        window_contaminated = _click_window_score(out / "contaminated")
        outcomes.append((seed, clean, contaminated, window_clean, window_contaminated))
        if clean >= contaminated and window_clean > window_contaminated:
            return
    pytest.fail(f"No seed favoured the clean variant: {outcomes}")
