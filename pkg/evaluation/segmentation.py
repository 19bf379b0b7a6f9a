"""
Pixel- and lesion-level segmentation metrics (Dice, HD95, ASD,
lesion-wise F1), lesion size strata and validation threshold selection
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence
import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from core.errors import ParameterError
from core.grids import AnomalyMap, BinaryMask
from evaluation.components import label_components

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
OVERLAP_TOLERANCE = 1e-9


class Stratum(str, Enum):
    """
    Lesion size groups split at the 25th and 75th area percentiles
    """
    S = "S"
    M = "M"
    L = "L"


class LesionF1(NamedTuple):
    """
    Lesion-wise detection counts and their F1
    """
    f1: float
    tp: int
    fp: int
    fn: int


class SurfaceDistances(NamedTuple):
    """
    Pooled two-direction surface distances in mm
    """
    hd95: float
    asd: float


@dataclass(frozen=True)
class StrataThresholds:
    """
    Area percentiles separating S from M and M from L
    """
    q25: float
    q75: float

    def __post_init__(self) -> None:
        if self.q25 > self.q75:
            raise ParameterError(f"q25 {self.q25} exceeds q75 {self.q75}")

    def classify(self, area: float) -> Stratum:
        """
        Stratum of a lesion area, both boundaries belonging to M
        """
        if area < self.q25:
            return Stratum.S
        if area > self.q75:
            return Stratum.L
        return Stratum.M


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """
    2|P n G| / (|P| + |G|), 1.0 when both masks are empty

    Args:
        pred (BinaryMask): predicted mask
        gt (BinaryMask): ground truth

    Returns:
        (float): Dice coefficient in [0, 1]
    """
    pred.check_geometry(gt)
    total = int(pred.pixels.sum()) + int(gt.pixels.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(pred.pixels & gt.pixels)) / total


def border_pixels(mask: np.ndarray) -> np.ndarray:
    """
    Mask pixels with at least one 4-neighbour outside the mask, the
    grid edge counting as outside

    Args:
        mask (np.ndarray): boolean (height, width) array

    Returns:
        (np.ndarray): boolean border array
    """
    mask = np.asarray(mask, dtype=bool)
    interior = ndimage.binary_erosion(mask, structure=FOUR_CONNECTED, border_value=0)
    return mask & ~interior


def pooled_surface_distances(pred: BinaryMask, gt: BinaryMask) -> np.ndarray:
    """
    Nearest-border distances from every border pixel of each mask to
    the border of the other, both directions concatenated, in mm

    Args:
        pred (BinaryMask): non-empty predicted mask
        gt (BinaryMask): non-empty ground truth

    Returns:
        (np.ndarray): pooled distances
    """
    pred.check_geometry(gt)
    pred_border = np.argwhere(border_pixels(pred.pixels)).astype(np.float64)
    gt_border = np.argwhere(border_pixels(gt.pixels)).astype(np.float64)
    if pred_border.size == 0 or gt_border.size == 0:
        raise ParameterError("Surface distances need two non-empty masks")
    pred_to_gt, _ = cKDTree(gt_border).query(pred_border)
    gt_to_pred, _ = cKDTree(pred_border).query(gt_border)
    return np.concatenate([pred_to_gt, gt_to_pred]) * pred.spacing


def surface_distances(pred: BinaryMask, gt: BinaryMask) -> Optional[SurfaceDistances]:
    """
    HD95 (linear-interpolation 95th percentile) and ASD (mean) of the
    pooled surface distances. None when either mask is empty, which
    callers count as an exclusion

    Args:
        pred (BinaryMask): predicted mask
        gt (BinaryMask): ground truth

    Returns:
        (Optional[SurfaceDistances]): distances in mm, or None
    """
    pred.check_geometry(gt)
    if not pred.pixels.any() or not gt.pixels.any():
        return None
    pooled = pooled_surface_distances(pred, gt)
    return SurfaceDistances(hd95=float(np.percentile(pooled, 95)), asd=float(pooled.mean()))


def _overlap_counts(pred_labels: np.ndarray, n_pred: int,
                    gt_labels: np.ndarray, n_gt: int) -> np.ndarray:
    joint = pred_labels.ravel() * (n_gt + 1) + gt_labels.ravel()
    counts = np.bincount(joint, minlength=(n_pred + 1) * (n_gt + 1))
    return counts.reshape(n_pred + 1, n_gt + 1)[1:, 1:]


def lesion_f1(pred: BinaryMask, gt: BinaryMask, overlap: float = 0.10) -> LesionF1:
    """
    Component-wise F1. A ground-truth component is found when one
    predicted component covers at least `overlap` of its area; a
    predicted component is a false positive when it reaches that
    coverage for no ground-truth component

    Args:
        pred (BinaryMask): predicted mask
        gt (BinaryMask): ground truth
        overlap (float): coverage fraction in (0, 1]

    Returns:
        (LesionF1): F1, TP, FP and FN counts
    """
    pred.check_geometry(gt)
    if not 0 < overlap <= 1:
        raise ParameterError(f"overlap must lie in (0, 1], got {overlap}")
    pred_labels, n_pred = label_components(pred.pixels)
    gt_labels, n_gt = label_components(gt.pixels)
    if n_pred == 0 and n_gt == 0:
        return LesionF1(1.0, 0, 0, 0)

    counts = _overlap_counts(pred_labels, n_pred, gt_labels, n_gt)
    gt_areas = np.bincount(gt_labels.ravel(), minlength=n_gt + 1)[1:]
    covered = counts >= overlap * gt_areas[np.newaxis, :] - OVERLAP_TOLERANCE

    tp = int(covered.any(axis=0).sum()) if n_pred else 0
    fp = int((~covered.any(axis=1)).sum()) if n_gt else n_pred
    fn = n_gt - tp
    f1 = 2.0 * tp / (2 * tp + fp + fn)
    return LesionF1(f1, tp, fp, fn)


def size_strata(areas: Sequence[float]) -> StrataThresholds:
    """
    25th and 75th linear-interpolation percentiles of per-subject
    lesion areas

    Args:
        areas (Sequence[float]): total lesion area of every subject

    Returns:
        (StrataThresholds): percentile cutoffs
    """
    if len(areas) == 0:
        raise ParameterError("Lesion size strata need at least one area")
    if len(areas) < 4:
        logging.warning("Only %d lesion areas for the size strata", len(areas))
    q25, q75 = np.percentile(np.asarray(areas, dtype=np.float64), [25, 75])
    return StrataThresholds(float(q25), float(q75))


def classify(area: float, thresholds: StrataThresholds) -> Stratum:
    """
    Stratum of an area given the percentile cutoffs
    """
    return thresholds.classify(area)


def select_threshold(val_maps: Sequence[AnomalyMap],
                     val_gts: Sequence[BinaryMask],
                     grid: Sequence[float]) -> float:
    """
    Candidate threshold maximising the mean validation Dice, ties
    going to the smaller threshold

    Args:
        val_maps (Sequence[AnomalyMap]): validation anomaly maps
        val_gts (Sequence[BinaryMask]): matching ground truth
        grid (Sequence[float]): candidate thresholds

    Returns:
        (float): selected member of the grid
    """
    if len(grid) == 0:
        raise ParameterError("Threshold grid is empty")
    if len(val_maps) == 0:
        raise ParameterError("Threshold selection needs validation maps")
    if len(val_maps) != len(val_gts):
        raise ParameterError(f"{len(val_maps)} maps but {len(val_gts)} ground-truth masks")

    best_threshold, best_dice = None, -1.0
    for threshold in sorted(float(t) for t in grid):
        mean_dice = float(np.mean([dice(m.binarize(threshold), g)
                                   for m, g in zip(val_maps, val_gts)]))
        if mean_dice > best_dice:
            best_threshold, best_dice = threshold, mean_dice
    logging.info("Selected threshold %.4f with validation Dice %.4f", best_threshold, best_dice)
    assert best_threshold is not None
    return best_threshold


@dataclass(frozen=True)
class SubjectSegResult:
    """
    Metrics of one test subject. hd95 and asd are None when the
    prediction is empty
    """
    subject_id: str
    area: int
    stratum: Stratum
    dice: float
    hd95: Optional[float]
    asd: Optional[float]
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class StratumSummary:
    """
    Aggregate of a group of subjects. Distance means skip the
    excluded subjects; F1 pools the component counts
    """
    n: int
    dice: float
    hd95: Optional[float]
    asd: Optional[float]
    n_excluded: int
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass
class SegReport:
    """
    Per-subject metrics plus the settings they were computed with
    """
    threshold: float
    overlap: float
    strata: StrataThresholds
    subjects: List[SubjectSegResult] = field(default_factory=list)

    def group(self, stratum: Optional[Stratum] = None) -> List[SubjectSegResult]:
        """
        Subjects of a stratum, or all of them
        """
        return [s for s in self.subjects if stratum is None or s.stratum == stratum]

    def summary(self, stratum: Optional[Stratum] = None) -> StratumSummary:
        """
        Means over a stratum (or over every subject), NaN for an empty
        group

        Args:
            stratum (Optional[Stratum]): group, None for all

        Returns:
            (StratumSummary): aggregate row
        """
        rows = self.group(stratum)
        defined = [r for r in rows if r.hd95 is not None]
        tp = sum(r.tp for r in rows)
        fp = sum(r.fp for r in rows)
        fn = sum(r.fn for r in rows)
        pooled = 2 * tp + fp + fn
        return StratumSummary(
            n=len(rows),
            dice=float(np.mean([r.dice for r in rows])) if rows else float("nan"),
            hd95=float(np.mean([r.hd95 for r in defined])) if defined else None,
            asd=float(np.mean([r.asd for r in defined])) if defined else None,
            n_excluded=len(rows) - len(defined),
            f1=2.0 * tp / pooled if pooled else 1.0,
            tp=tp, fp=fp, fn=fn,
        )

    def summaries(self) -> Dict[str, StratumSummary]:
        """
        Rows All, S, M, L in table order
        """
        rows = {"All": self.summary()}
        rows.update({s.value: self.summary(s) for s in Stratum})
        return rows

    def metric(self, name: str) -> Dict[str, float]:
        """
        Per-subject values of one metric keyed by subject id, skipping
        undefined distances

        Args:
            name (str): dice, hd95 or asd

        Returns:
            (Dict[str, float]): values per subject
        """
        if name not in ("dice", "hd95", "asd"):
            raise ParameterError(f"Unknown metric '{name}'")
        values = {r.subject_id: getattr(r, name) for r in self.subjects}
        return {k: float(v) for k, v in values.items() if v is not None}


def evaluate_segmentation(subject_ids: Sequence[str],
                          maps: Sequence[AnomalyMap],
                          gts: Sequence[BinaryMask],
                          threshold: float,
                          overlap: float = 0.10) -> SegReport:
    """
    Binarises every test map at `threshold` and scores it against its
    lesion mask. Strata come from the lesion areas of these subjects

    Args:
        subject_ids (Sequence[str]): ids in map order
        maps (Sequence[AnomalyMap]): test anomaly maps
        gts (Sequence[BinaryMask]): test lesion masks
        threshold (float): binarisation threshold
        overlap (float): lesion-wise F1 coverage

    Returns:
        (SegReport): per-subject metrics
    """
    if not (len(subject_ids) == len(maps) == len(gts)):
        raise ParameterError("Subject ids, maps and masks must have equal lengths")
    areas = [gt.area() for gt in gts]
    strata = size_strata(areas)
    report = SegReport(threshold=threshold, overlap=overlap, strata=strata)

    for subject_id, score_map, gt, area in zip(subject_ids, maps, gts, areas):
        pred = score_map.binarize(threshold)
        distances = surface_distances(pred, gt)
        counts = lesion_f1(pred, gt, overlap)
        report.subjects.append(SubjectSegResult(
            subject_id=subject_id, area=area, stratum=strata.classify(area),
            dice=dice(pred, gt),
            hd95=distances.hd95 if distances else None,
            asd=distances.asd if distances else None,
            tp=counts.tp, fp=counts.fp, fn=counts.fn,
        ))

    excluded = report.summary().n_excluded
    if excluded:
        logging.warning("%d of %d subjects have undefined surface distances",
                        excluded, len(report.subjects))
    return report

