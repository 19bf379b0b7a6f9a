"""
End-to-end experiment: one dataset and one model per training
variant, reconstruction, segmentation and detection evaluation, and
the paired comparison of the first two variants
"""

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, Field, field_validator
from core.errors import ParameterError, StageError
from core.grid_io import write_grid
from core.grids import AnomalyMap, BinaryMask, Subject
from evaluation.detection import (
    DetectionConfig,
    DetectionRow,
    LabelFilter,
    calibrate_threshold,
    confidence_summary,
    detection_table,
)
from evaluation.segmentation import SegReport, evaluate_segmentation, select_threshold
from flow_model.checkpoint import save_model
from flow_model.model import FlowModel, init_flow_model
from flow_model.training import TrainConfig, train
from flowlens.reports import (
    ComparisonRow,
    VariantSummary,
    compare_reports,
    plot_froc_svg,
    seg_rows,
    write_comparison,
    write_froc_curves,
    write_froc_table,
    write_loss_history,
    write_seg_report,
    write_summary,
)
from prepare_data.dataset import (
    Dataset,
    DatasetConfig,
    make_dataset_from_config,
    make_training_pairs,
    select_training_subjects,
    write_dataset,
)
from transport.reconstruction import TransportConfig, anomaly_maps


def default_threshold_grid() -> List[float]:
    """
    0.05 to 3.00 in steps of 0.05
    """
    return [round(0.05 * k, 2) for k in range(1, 61)]


class ModelConfig(BaseModel):
    """
    Architecture, initialisation and training-pair settings shared by
    every variant
    """
    hidden: List[int] = Field(default_factory=lambda: [256], min_length=1)
    n_time_pairs: int = Field(4, ge=0)
    init_seed: int = Field(0, ge=0)
    pairs_per_subject: int = Field(4, ge=1)
    pair_seed: int = Field(0, ge=0)


class VariantConfig(BaseModel):
    """
    One model variant: the contamination of its training split and
    its training settings
    """
    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    contamination_fraction: float = Field(0.0, ge=0, le=1)
    include_contaminated: bool = True
    max_train_subjects: Optional[int] = Field(None, ge=1)
    train: TrainConfig = TrainConfig(learning_rate=1e-3, epochs=300)


def default_variants() -> List[VariantConfig]:
    """
    Clean-trained and half-contaminated variants
    """
    return [VariantConfig(name="clean", contamination_fraction=0.0),
            VariantConfig(name="contaminated", contamination_fraction=0.5)]


class ExperimentConfig(BaseModel):
    """
    Complete description of a run. Every random stage has its own
    seed: dataset.seed, model.init_seed, model.pair_seed and each
    variant's train.seed
    """
    out_dir: str = "experiment_output"
    dataset: DatasetConfig = DatasetConfig()
    model: ModelConfig = ModelConfig()
    variants: List[VariantConfig] = Field(default_factory=default_variants, min_length=1)
    transport: TransportConfig = TransportConfig()
    detection: DetectionConfig = DetectionConfig()
    threshold_grid: List[float] = Field(default_factory=default_threshold_grid, min_length=1)
    overlap: float = Field(0.10, gt=0, le=1)
    comparison_metric: str = Field("dice", pattern=r"^(dice|hd95|asd)$")
    svg: bool = False

    @field_validator("variants")
    @classmethod
    def check_unique_names(cls, value: List[VariantConfig]) -> List[VariantConfig]:
        """
        Variant names become directory names
        """
        names = [v.name for v in value]
        if len(set(names)) != len(names):
            raise ValueError(f"variant names must be unique, got {names}")
        return value


@dataclass
class VariantResult:
    """
    Outputs of one variant, kept in memory for the summary
    """
    name: str
    out_dir: Path
    model: FlowModel
    loss_history: List[float]
    seg: SegReport
    summary: VariantSummary


@dataclass
class ExperimentReport:
    """
    Locations and in-memory results of a finished run
    """
    out_dir: Path
    variants: Dict[str, VariantResult] = field(default_factory=dict)
    comparison: List[ComparisonRow] = field(default_factory=list)
    manifest_path: Optional[Path] = None


@contextmanager
def stage(name: str) -> Iterator[None]:
    """
    Logs a stage and re-raises any failure as a StageError naming it
    """
    logging.info("Stage %s", name)
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logging.error("Stage %s failed: %s", name, e)
        raise StageError(name, e) from e


def _gt_or_empty(subject: Subject) -> BinaryMask:
    if subject.lesion_mask is not None:
        return subject.lesion_mask
    return BinaryMask.empty(subject.image.width, subject.image.height, subject.image.spacing)


def _write_maps(directory: Path, maps: Dict[str, AnomalyMap]) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for subject_id, score_map in maps.items():
        write_grid(directory / f"{subject_id}.agrd", score_map)


def detection_thresholds(cfg: DetectionConfig,
                         normal_maps: Sequence[AnomalyMap]
                         ) -> Tuple[List[float], Optional[float]]:
    """
    Configured binarisation thresholds, with the lowest one replaced
    by the calibrated value when calibration is enabled and positive

    Args:
        cfg (DetectionConfig): detection settings
        normal_maps (Sequence[AnomalyMap]): maps of the normal split

    Returns:
        thresholds (List[float]): thresholds in ascending order
        calibrated (Optional[float]): the calibrated value when used
    """
    thresholds = sorted(cfg.binarize_thresholds)
    if not cfg.calibrate_lowest:
        return thresholds, None
    if not normal_maps:
        logging.warning("No normal maps; keeping the configured thresholds")
        return thresholds, None
    calibrated = calibrate_threshold(normal_maps)
    if calibrated <= 0:
        logging.warning("Calibrated threshold %.6f is not positive; ignored", calibrated)
        return thresholds, None
    thresholds[0] = calibrated
    return sorted(thresholds), calibrated


def reference_threshold(summary: VariantSummary) -> float:
    """
    Threshold the single-threshold outputs are read at: the
    calibrated one when calibration took place, else the lowest
    configured one

    Args:
        summary (VariantSummary): evaluated variant

    Returns:
        (float): reference binarisation threshold
    """
    if summary.calibrated_threshold is not None:
        return summary.calibrated_threshold
    if not summary.detection:
        raise ParameterError(f"Variant '{summary.name}' has no detection rows")
    return min(row.threshold for row in summary.detection)


def reference_rows(summary: VariantSummary) -> List[DetectionRow]:
    """
    Detection rows of a variant at its reference threshold, one per
    label filter
    """
    threshold = reference_threshold(summary)
    return [row for row in summary.detection if np.isclose(row.threshold, threshold)]


def reference_score(summary: VariantSummary, label_filter: LabelFilter) -> float:
    """
    FROC score of one label filter at the reference threshold, 0 when
    the filter excluded every subject

    Args:
        summary (VariantSummary): evaluated variant
        label_filter (LabelFilter): anomaly family

    Returns:
        (float): FROC score
    """
    rows = [row for row in reference_rows(summary) if row.label_filter == label_filter]
    if not rows:
        raise ParameterError(f"Variant '{summary.name}' has no '{label_filter.value}' rows")
    return rows[0].score if rows[0].score is not None else 0.0


def _run_variant(config: ExperimentConfig, variant: VariantConfig, out: Path) -> VariantResult:
    variant_dir = out / variant.name
    variant_dir.mkdir(parents=True, exist_ok=True)

    with stage(f"generate:{variant.name}"):
        dataset_cfg = config.dataset.model_copy(
            update={"contamination_fraction": variant.contamination_fraction})
        dataset: Dataset = make_dataset_from_config(dataset_cfg)
        write_dataset(dataset, variant_dir / "data")

    with stage(f"train:{variant.name}"):
        pool = select_training_subjects(dataset.train, variant.include_contaminated,
                                        variant.max_train_subjects)
        pairs = make_training_pairs(pool, config.dataset.lesion,
                                    config.model.pairs_per_subject, config.model.pair_seed)
        initial = init_flow_model(pool[0].image.pixels.size, config.model.hidden,
                                  config.model.init_seed, config.model.n_time_pairs)
        model, history = train(initial, pairs, variant.train)
        save_model(variant_dir / "model.aflw", model)
        write_loss_history(variant_dir / "loss_history.csv", history)

    with stage(f"reconstruct:{variant.name}"):
        maps: Dict[str, Dict[str, AnomalyMap]] = {}
        for split in ("val", "test", "normal"):
            subjects = dataset.split(split)
            split_maps = anomaly_maps(model, [s.image for s in subjects], config.transport)
            maps[split] = {s.id: m for s, m in zip(subjects, split_maps)}
            _write_maps(variant_dir / "maps", maps[split])

    with stage(f"evaluate-seg:{variant.name}"):
        # threshold selection sees validation subjects only
        threshold = select_threshold([maps["val"][s.id] for s in dataset.val],
                                     [_gt_or_empty(s) for s in dataset.val],
                                     config.threshold_grid)
        lesioned = [s for s in dataset.test if s.lesion_mask is not None]
        if not lesioned:
            raise ParameterError("No test subject carries a lesion mask")
        seg = evaluate_segmentation([s.id for s in lesioned],
                                    [maps["test"][s.id] for s in lesioned],
                                    [s.lesion_mask for s in lesioned],  # type: ignore[misc]
                                    threshold, config.overlap)
        write_seg_report(variant_dir / "seg_report.csv", seg)

    with stage(f"evaluate-froc:{variant.name}"):
        normal_maps = list(maps["normal"].values())
        thresholds, calibrated = detection_thresholds(config.detection, normal_maps)
        annotations = {s.id: s.annotations for s in dataset.test}
        rows = detection_table(maps["test"], annotations, config.detection,
                               thresholds=thresholds)
        write_froc_table(variant_dir / "froc.csv", rows)
        write_froc_curves(variant_dir / "froc_curve.csv", rows)
        reference = calibrated if calibrated is not None else thresholds[0]
        confidence = confidence_summary(maps["test"], annotations, reference,
                                        config.detection.match_tolerance)

    summary = VariantSummary(name=variant.name, seg=seg, detection=rows, confidence=confidence,
                             calibrated_threshold=calibrated, n_train_subjects=len(pool))
    return VariantResult(name=variant.name, out_dir=variant_dir, model=model,
                         loss_history=history, seg=seg, summary=summary)


def _write_manifest(out: Path, config: ExperimentConfig, report: ExperimentReport) -> Path:
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(),
        "seeds": {
            "dataset": config.dataset.seed,
            "model_init": config.model.init_seed,
            "training_pairs": config.model.pair_seed,
            "train": {v.name: v.train.seed for v in config.variants},
        },
        "config": config.model_dump(mode="json"),
        "variants": {name: {"dir": str(result.out_dir.relative_to(out)),
                            "final_loss": result.loss_history[-1] if result.loss_history
                            else None,
                            "seg_threshold": result.seg.threshold}
                     for name, result in report.variants.items()},
    }
    path = out / "manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=4)
    return path


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """
    Runs every stage in order. Outputs of finished stages stay on disk
    when a later stage fails; the failure surfaces as a StageError
    naming the stage. Only manifest.json carries a timestamp

    Args:
        config (ExperimentConfig): validated configuration

    Returns:
        (ExperimentReport): output locations and results
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = ExperimentReport(out_dir=out)

    for variant in config.variants:
        report.variants[variant.name] = _run_variant(config, variant, out)

    results = list(report.variants.values())
    with stage("compare"):
        if len(results) >= 2:
            report.comparison = compare_reports(seg_rows(results[0].seg), seg_rows(results[1].seg),
                                                config.comparison_metric)
            write_comparison(out / "comparison.csv", report.comparison)
        else:
            logging.warning("A single variant was run; no comparison written")

    with stage("summary"):
        write_summary(out / "summary.md", [r.summary for r in results], report.comparison)
        if config.svg:
            curves = {f"{result.name} / {row.label_filter.row_name}": row.curve
                      for result in results for row in reference_rows(result.summary)}
            plot_froc_svg(out / "froc.svg", curves)
        report.manifest_path = _write_manifest(out, config, report)

    logging.info("Experiment written to %s", out)
    return report
