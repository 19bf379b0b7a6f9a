"""
Object-level detection evaluation: threshold calibration on normal
maps, component-to-click matching, FROC curves and scores
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, Field, field_validator
from scipy.spatial.distance import cdist
from core.errors import ParameterError
from core.grids import AnomalyMap, Label, PointAnnotation
from evaluation.components import Component, connected_components

DISTANCE_TOLERANCE = 1e-9


class DetectionConfig(BaseModel):
    """
    Binarisation thresholds, matching tolerance and FPPI levels of the
    FROC evaluation
    """
    binarize_thresholds: List[float] = Field(default_factory=lambda: [0.036, 0.1, 0.5],
                                             min_length=1)
    match_tolerance: float = Field(5.0, ge=0, description="Pixels")
    fppi_levels: List[float] = Field(default_factory=lambda: [0.25, 0.5, 1.0, 1.5],
                                     min_length=1)
    calibrate_lowest: bool = Field(False, description="Replace the lowest threshold with "
                                                      "the mean + 3 std of normal maps")

    @field_validator("binarize_thresholds")
    @classmethod
    def check_thresholds(cls, value: List[float]) -> List[float]:
        """
        Thresholds are positive
        """
        if any(t <= 0 for t in value):
            raise ValueError("binarisation thresholds must be positive")
        return value

    @field_validator("fppi_levels")
    @classmethod
    def check_levels(cls, value: List[float]) -> List[float]:
        """
        Levels are non-negative and sorted ascending
        """
        if any(level < 0 for level in value):
            raise ValueError("FPPI levels cannot be negative")
        if list(value) != sorted(value):
            raise ValueError("FPPI levels must be sorted ascending")
        return value


class LabelFilter(str, Enum):
    """
    Which clicks count as findings
    """
    ALL = "all"
    LESION = "lesion"
    NON_LESIONAL = "nonlesion"

    @property
    def row_name(self) -> str:
        """
        Row name in the detection table
        """
        return {"all": "All anomalies", "lesion": "Lesions only",
                "nonlesion": "Non-lesion anomalies"}[self.value]

    def select(self, points: Sequence[PointAnnotation]) -> List[PointAnnotation]:
        """
        Clicks passing the filter
        """
        if self == LabelFilter.ALL:
            return list(points)
        label = Label.LESION if self == LabelFilter.LESION else Label.NON_LESIONAL
        return [p for p in points if p.label == label]


class MatchResult(NamedTuple):
    """
    Per-click detection flags and per-component true-positive flags
    """
    detected: List[bool]
    true_positive: List[bool]


@dataclass(frozen=True)
class FrocCurve:
    """
    (fppi, sensitivity) operating points, fppi ascending and
    sensitivity non-decreasing
    """
    points: Tuple[Tuple[float, float], ...]

    @property
    def fppi(self) -> List[float]:
        """
        False positives per image of every operating point
        """
        return [p[0] for p in self.points]

    @property
    def sensitivity(self) -> List[float]:
        """
        Sensitivity of every operating point
        """
        return [p[1] for p in self.points]


@dataclass(frozen=True)
class DetectionRow:
    """
    One (threshold, filter) cell of the detection table. `score` is
    None when every subject was excluded by the filter
    """
    threshold: float
    label_filter: LabelFilter
    score: Optional[float]
    n_images: int
    n_points: int
    n_excluded: int
    curve: FrocCurve


def calibrate_threshold(normal_maps: Sequence[AnomalyMap]) -> float:
    """
    Mean plus three population standard deviations of every pixel of
    the normal maps pooled

    Args:
        normal_maps (Sequence[AnomalyMap]): maps of abnormality-free
            images

    Returns:
        (float): calibrated binarisation threshold
    """
    if len(normal_maps) == 0:
        raise ParameterError("Calibration needs at least one normal map")
    pooled = np.concatenate([m.scores.ravel() for m in normal_maps])
    threshold = float(pooled.mean() + 3.0 * pooled.std())
    logging.info("Calibrated threshold %.6f from %d normal pixels", threshold, pooled.size)
    return threshold


def match_matrix(components: Sequence[Component],
                 points: Sequence[PointAnnotation],
                 tolerance: float) -> np.ndarray:
    """
    Boolean (components, points) array: a click matches a component
    when it rounds into one of its pixels or lies within `tolerance`
    (Euclidean, inclusive) of a member pixel centre

    Args:
        components (Sequence[Component]): candidate findings
        points (Sequence[PointAnnotation]): reference clicks
        tolerance (float): distance in pixels

    Returns:
        (np.ndarray): match flags
    """
    if tolerance < 0:
        raise ParameterError("Matching tolerance cannot be negative")
    matches = np.zeros((len(components), len(points)), dtype=bool)
    if not components or not points:
        return matches
    clicks = np.array([[p.x, p.y] for p in points], dtype=np.float64)
    click_pixels = [p.pixel() for p in points]
    for i, component in enumerate(components):
        members = set(component.pixels)
        nearest = cdist(component.coordinates(), clicks).min(axis=0)
        inside = np.array([pixel in members for pixel in click_pixels])
        matches[i] = inside | (nearest <= tolerance + DISTANCE_TOLERANCE)
    return matches


def match(components: Sequence[Component],
          points: Sequence[PointAnnotation],
          tolerance: float) -> MatchResult:
    """
    Many-to-many matching of components and clicks. A component is a
    true positive when it matches any click; a click is detected when
    any component matches it

    Args:
        components (Sequence[Component]): candidate findings
        points (Sequence[PointAnnotation]): reference clicks
        tolerance (float): distance in pixels

    Returns:
        (MatchResult): detection and true-positive flags
    """
    matches = match_matrix(components, points, tolerance)
    return MatchResult(detected=matches.any(axis=0).tolist(),
                       true_positive=matches.any(axis=1).tolist())


def froc_curve(components: Sequence[Sequence[Component]],
               points: Sequence[Sequence[PointAnnotation]],
               n_images: int,
               tolerance: float = 5.0) -> FrocCurve:
    """
    Sweeps a confidence cutoff over every distinct component
    confidence. Components below the cutoff are dropped; sensitivity
    pools the clicks of all images and FPPI divides the false-positive
    components by `n_images`. Points sharing an FPPI keep the best
    sensitivity, and sensitivities are made cumulative-maximal

    Args:
        components (Sequence[Sequence[Component]]): per-image components
        points (Sequence[Sequence[PointAnnotation]]): per-image clicks
        n_images (int): FPPI denominator
        tolerance (float): matching distance in pixels

    Returns:
        (FrocCurve): operating points
    """
    if n_images < 1:
        raise ParameterError("n_images must be at least 1")
    if len(components) != len(points):
        raise ParameterError("Components and clicks must be given for the same images")
    total_points = sum(len(p) for p in points)
    if total_points == 0:
        raise ParameterError("Sensitivity is undefined without annotated points")

    matrices = [match_matrix(c, p, tolerance) for c, p in zip(components, points)]
    confidences = [np.array([c.confidence for c in comps], dtype=np.float64)
                   for comps in components]
    cutoffs = sorted({float(v) for conf in confidences for v in conf}, reverse=True)

    best: Dict[float, float] = {}
    for cutoff in cutoffs:
        detected = 0
        false_positives = 0
        for matrix, conf in zip(matrices, confidences):
            kept = matrix[conf >= cutoff]
            detected += int(kept.any(axis=0).sum()) if kept.size else 0
            false_positives += int((~kept.any(axis=1)).sum()) if kept.shape[0] else 0
        fppi = false_positives / n_images
        best[fppi] = max(best.get(fppi, 0.0), detected / total_points)

    if not best:
        return FrocCurve(points=((0.0, 0.0),))
    curve = []
    running = 0.0
    for fppi in sorted(best):
        running = max(running, best[fppi])
        curve.append((fppi, running))
    return FrocCurve(points=tuple(curve))


def froc_score(curve: FrocCurve, levels: Sequence[float]) -> float:
    """
    Mean over the FPPI levels of the best sensitivity reached at or
    below each level, 0 where no operating point qualifies

    Args:
        curve (FrocCurve): operating points
        levels (Sequence[float]): FPPI levels

    Returns:
        (float): FROC score in [0, 1]
    """
    if len(levels) == 0:
        raise ParameterError("FROC score needs at least one FPPI level")
    if len(curve.points) == 0:
        raise ParameterError("FROC curve has no operating points")
    scores = []
    for level in levels:
        reached = [s for f, s in curve.points if f <= level]
        scores.append(max(reached) if reached else 0.0)
    return float(np.mean(scores))


def evaluate_detection(maps: Mapping[str, AnomalyMap],
                       annotations: Mapping[str, Sequence[PointAnnotation]],
                       cfg: DetectionConfig,
                       label_filter: LabelFilter = LabelFilter.ALL,
                       thresholds: Optional[Sequence[float]] = None) -> List[DetectionRow]:
    """
    FROC score of every binarisation threshold for one label filter.
    Every subject with a map is evaluated, except those without
    clicks under the filter, which are excluded and counted

    Args:
        maps (Mapping[str, AnomalyMap]): anomaly map per subject id
        annotations (Mapping[str, Sequence[PointAnnotation]]): clicks
            per subject id
        cfg (DetectionConfig): thresholds, tolerance and FPPI levels
        label_filter (LabelFilter): clicks to count
        thresholds (Optional[Sequence[float]]): overrides the
            configured thresholds

    Returns:
        (List[DetectionRow]): one row per threshold
    """
    kept = [(subject_id, label_filter.select(annotations.get(subject_id, [])))
            for subject_id in maps]
    kept = [(subject_id, clicks) for subject_id, clicks in kept if clicks]
    n_excluded = len(maps) - len(kept)
    if not kept:
        raise ParameterError(f"Every subject was excluded by the '{label_filter.value}' filter")
    if n_excluded:
        logging.warning("Filter '%s' excluded %d of %d subjects without clicks",
                        label_filter.value, n_excluded, len(maps))

    clicks = [c for _, c in kept]
    rows = []
    for threshold in (thresholds if thresholds is not None else cfg.binarize_thresholds):
        components = [connected_components(maps[s].binarize(threshold), maps[s]) for s, _ in kept]
        curve = froc_curve(components, clicks, len(kept), cfg.match_tolerance)
        score = froc_score(curve, cfg.fppi_levels)
        logging.info("FROC %s at T=%.4f: %.4f over %d images", label_filter.value,
                     threshold, score, len(kept))
        rows.append(DetectionRow(threshold=float(threshold), label_filter=label_filter,
                                 score=score, n_images=len(kept),
                                 n_points=sum(len(c) for c in clicks),
                                 n_excluded=n_excluded, curve=curve))
    return rows


def detection_table(maps: Mapping[str, AnomalyMap],
                    annotations: Mapping[str, Sequence[PointAnnotation]],
                    cfg: DetectionConfig,
                    filters: Sequence[LabelFilter] = (LabelFilter.LESION,
                                                      LabelFilter.NON_LESIONAL,
                                                      LabelFilter.ALL),
                    thresholds: Optional[Sequence[float]] = None) -> List[DetectionRow]:
    """
    Threshold x filter grid of FROC scores. A filter excluding every
    subject yields rows without a score

    Args:
        maps (Mapping[str, AnomalyMap]): anomaly map per subject id
        annotations (Mapping[str, Sequence[PointAnnotation]]): clicks
            per subject id
        cfg (DetectionConfig): thresholds, tolerance and FPPI levels
        filters (Sequence[LabelFilter]): filters to evaluate
        thresholds (Optional[Sequence[float]]): overrides the
            configured thresholds

    Returns:
        (List[DetectionRow]): rows ordered by threshold then filter
    """
    used = list(thresholds if thresholds is not None else cfg.binarize_thresholds)
    by_filter: Dict[LabelFilter, List[DetectionRow]] = {}
    for label_filter in filters:
        try:
            by_filter[label_filter] = evaluate_detection(maps, annotations, cfg,
                                                         label_filter, used)
        except ParameterError as e:
            logging.warning("No FROC score for filter '%s': %s", label_filter.value, e)
            by_filter[label_filter] = [
                DetectionRow(threshold=float(t), label_filter=label_filter, score=None,
                             n_images=0, n_points=0, n_excluded=len(maps),
                             curve=FrocCurve(points=()))
                for t in used
            ]
    return [by_filter[f][i] for i in range(len(used)) for f in filters]


def confidence_summary(maps: Mapping[str, AnomalyMap],
                       annotations: Mapping[str, Sequence[PointAnnotation]],
                       threshold: float,
                       tolerance: float = 5.0) -> Dict[Label, Optional[float]]:
    """
    Highest confidence among components matching lesion clicks and
    among components matching non-lesional clicks

    Args:
        maps (Mapping[str, AnomalyMap]): anomaly map per subject id
        annotations (Mapping[str, Sequence[PointAnnotation]]): clicks
            per subject id
        threshold (float): binarisation threshold
        tolerance (float): matching distance in pixels

    Returns:
        (Dict[Label, Optional[float]]): maximum confidence per label,
            None when nothing of that label was matched
    """
    summary: Dict[Label, Optional[float]] = {label: None for label in Label}
    for subject_id, score_map in maps.items():
        clicks = annotations.get(subject_id, [])
        if not clicks:
            continue
        components = connected_components(score_map.binarize(threshold), score_map)
        for label in Label:
            matrix = match_matrix(components, [c for c in clicks if c.label == label],
                                  tolerance)
            for component, matched in zip(components, matrix.any(axis=1)):
                current = summary[label]
                if matched and (current is None or component.confidence > current):
                    summary[label] = component.confidence
    return summary
