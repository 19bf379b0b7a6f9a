"""
File used in the testing of the detection evaluation: calibration,
matching, FROC curves and the detection table
"""

import math
import sys
from pathlib import Path
from typing import List, Sequence, Tuple
import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from core.errors import ParameterError
from core.grids import AnomalyMap, Label, PointAnnotation, round_half_up
from evaluation.components import Component
from evaluation.detection import (
    DetectionConfig,
    FrocCurve,
    LabelFilter,
    calibrate_threshold,
    confidence_summary,
    detection_table,
    evaluate_detection,
    froc_curve,
    froc_score,
    match,
)


def _lesion(x: float, y: float) -> PointAnnotation:
    return PointAnnotation(x=x, y=y, label=Label.LESION)


def _nonlesion(x: float, y: float) -> PointAnnotation:
    return PointAnnotation(x=x, y=y, label=Label.NON_LESIONAL)


def _matches(component: Component, point: PointAnnotation, tolerance: float) -> bool:
    pixel = (round_half_up(point.x), round_half_up(point.y))
    if pixel in component.pixels:
        return True
    return any(math.hypot(x - point.x, y - point.y) <= tolerance + 1e-9
               for x, y in component.pixels)


def _oracle_curve(components: Sequence[Sequence[Component]],
                  points: Sequence[Sequence[PointAnnotation]],
                  tolerance: float) -> List[Tuple[float, float]]:
    total = sum(len(p) for p in points)
    cutoffs = sorted({c.confidence for comps in components for c in comps}, reverse=True)
    best = {}
    for cutoff in cutoffs:
        detected, false_positives = 0, 0
        for comps, clicks in zip(components, points):
            kept = [c for c in comps if c.confidence >= cutoff]
            detected += sum(any(_matches(c, p, tolerance) for c in kept) for p in clicks)
            false_positives += sum(not any(_matches(c, p, tolerance) for p in clicks)
                                   for c in kept)
        fppi = false_positives / len(components)
        best[fppi] = max(best.get(fppi, 0.0), detected / total)
    curve, running = [], 0.0
    for fppi in sorted(best):
        running = max(running, best[fppi])
        curve.append((fppi, running))
    return curve or [(0.0, 0.0)]

# Testing function calibrate_threshold

def test_calibrate_threshold_examples() -> None:
    """
    Tests the mean + 3 std rule on small maps

    Args:
        None

    Returns:
        None
    """
    assert calibrate_threshold([AnomalyMap(np.zeros((3, 3)))]) == 0.0
    assert calibrate_threshold([AnomalyMap(np.array([[0.0, 0.0], [0.0, 4.0]]))]) == \
        pytest.approx(1.0 + 3.0 * math.sqrt(3.0))
    with pytest.raises(ParameterError):
        calibrate_threshold([])

def test_calibrate_threshold_unit_variance() -> None:
    """
    Tests that 10^5 unit-variance pixels give mean + 3

    Args:
        None

    Returns:
        None
    """
    rng = np.random.default_rng(0)
    half_width = math.sqrt(3.0)
    maps = [AnomalyMap(rng.uniform(0.0, 2.0 * half_width, size=(100, 100))) for _ in range(10)]

    assert calibrate_threshold(maps) == pytest.approx(half_width + 3.0, abs=0.1)

# Testing function match

def test_match_inside_and_tolerance() -> None:
    """
    Tests containment, the inclusive 5 px radius and its limit

    Args:
        None

    Returns:
        None
    """
    component = Component(pixels=((2, 3),), confidence=1.0)

    assert match([component], [_lesion(2.4, 3.0)], 0.0).detected == [True]
    assert match([component], [_lesion(2.6, 3.0)], 0.0).detected == [False]
    assert match([component], [_lesion(7.0, 3.0)], 5.0).detected == [True]
    assert match([component], [_lesion(7.5, 3.0)], 5.0) == ([False], [False])

def test_match_many_to_many() -> None:
    """
    Tests that one component can detect two clicks and two
    components can share a click

    Args:
        None

    Returns:
        None
    """
    first = Component(pixels=((0, 0),), confidence=1.0)
    second = Component(pixels=((1, 1),), confidence=1.0)
    result = match([first, second], [_lesion(0.0, 0.0), _lesion(1.0, 0.0)], 1.0)

    assert result.detected == [True, True]
    assert result.true_positive == [True, True]

# Testing functions froc_curve and froc_score

def test_froc_curve_examples() -> None:
    """
    Tests a single hit and a hit followed by a false positive

    Args:
        None

    Returns:
        None
    """
    hit = Component(pixels=((4, 4),), confidence=0.9)
    stray = Component(pixels=((20, 20),), confidence=0.8)
    point = [_lesion(4.0, 4.0)]

    assert froc_curve([[hit]], [point], 1).points == ((0.0, 1.0),)
    assert froc_curve([[hit, stray]], [point], 1).points == ((0.0, 1.0), (1.0, 1.0))
    assert froc_curve([[]], [point], 1).points == ((0.0, 0.0),)
    with pytest.raises(ParameterError):
        froc_curve([[hit]], [[]], 1)

def test_froc_curve_matches_oracle() -> None:
    """
    Tests the curve against a direct sweep on 100 random
    scenarios

    Args:
        None

    Returns:
        None
    """
    rng = np.random.default_rng(11)
    for _ in range(100):
        n_images = int(rng.integers(1, 11))
        components, points = [], []
        for _ in range(n_images):
            comps = []
            for _ in range(int(rng.integers(0, 9))):
                x, y = int(rng.integers(0, 24)), int(rng.integers(0, 24))
                pixels = {(x, y)} | {(x + int(dx), y + int(dy))
                                      for dx, dy in rng.integers(-1, 2, size=(3, 2))}
                comps.append(Component(pixels=tuple(sorted(pixels)),
                                       confidence=round(float(rng.uniform()), 1)))
            components.append(comps)
            points.append([_lesion(float(rng.uniform(0, 24)), float(rng.uniform(0, 24)))
                           for _ in range(int(rng.integers(0, 4)))])
        if not any(points):
            points[0].append(_lesion(1.0, 1.0))

        curve = froc_curve(components, points, n_images, tolerance=3.0)
        assert list(curve.points) == _oracle_curve(components, points, 3.0)
        sensitivities = curve.sensitivity
        assert curve.fppi == sorted(curve.fppi)
        assert sensitivities == sorted(sensitivities)

def test_froc_score_examples() -> None:
    """
    Tests a perfect curve, a stepped curve and bad inputs

    Args:
        None

    Returns:
        None
    """
    levels = [0.25, 0.5, 1.0, 1.5]
    stepped = FrocCurve(points=((0.25, 0.5), (0.5, 0.6), (1.0, 0.7), (1.5, 0.8)))

    assert froc_score(FrocCurve(points=((0.0, 1.0),)), levels) == 1.0
    assert froc_score(stepped, levels) == pytest.approx(0.65)
    assert froc_score(FrocCurve(points=((2.0, 1.0),)), levels) == 0.0
    with pytest.raises(ParameterError):
        froc_score(stepped, [])

# Testing function evaluate_detection

def _perfect_case() -> Tuple[dict, dict]:
    maps, annotations = {}, {}
    for index in range(3):
        scores = np.zeros((16, 16))
        scores[3 + index:6 + index, 4:7] = 1.0
        maps[f"s{index}"] = AnomalyMap(scores)
        annotations[f"s{index}"] = [_lesion(5.0, 4.0 + index)]
    annotations["s2"].append(_nonlesion(12.0, 12.0))
    return maps, annotations

def test_evaluate_detection_perfect_maps() -> None:
    """
    Tests that maps equal to the lesion masks score 1

    Args:
        None

    Returns:
        None
    """
    maps, annotations = _perfect_case()
    cfg = DetectionConfig(binarize_thresholds=[0.036, 0.1, 0.5, 1.0])
    rows = evaluate_detection(maps, annotations, cfg, LabelFilter.LESION)

    assert [r.score for r in rows] == [1.0, 1.0, 1.0, 1.0]
    assert rows[0].n_images == 3 and rows[0].n_excluded == 0

def test_evaluate_detection_filters() -> None:
    """
    Tests that the non-lesional filter only keeps subjects with
    non-lesional clicks

    Args:
        None

    Returns:
        None
    """
    maps, annotations = _perfect_case()
    rows = evaluate_detection(maps, annotations, DetectionConfig(), LabelFilter.NON_LESIONAL)

    assert rows[0].n_images == 1 and rows[0].n_excluded == 2
    assert rows[0].score == 0.0
    with pytest.raises(ParameterError):
        evaluate_detection(maps, {}, DetectionConfig())

def test_detection_table_layout() -> None:
    """
    Tests the threshold x filter layout and the n/a rows of an
    empty filter

    Args:
        None

    Returns:
        None
    """
    maps, annotations = _perfect_case()
    annotations["s2"] = annotations["s2"][:1]
    rows = detection_table(maps, annotations, DetectionConfig())

    assert len(rows) == 9
    assert [r.label_filter for r in rows[:3]] == [LabelFilter.LESION, LabelFilter.NON_LESIONAL,
                                                   LabelFilter.ALL]
    assert rows[1].score is None and rows[1].n_excluded == 3
    assert rows[0].score == 1.0

def test_higher_threshold_never_grows_findings() -> None:
    """
    Tests that raising the threshold never increases the
    binarised area

    Args:
        None

    Returns:
        None
    """
    score_map = AnomalyMap(np.random.default_rng(3).uniform(size=(12, 12)))
    areas = [score_map.binarize(t).area() for t in (0.036, 0.1, 0.5, 0.9)]

    assert areas == sorted(areas, reverse=True)

def test_confidence_summary() -> None:
    """
    Tests the highest matched confidence per label

    Args:
        None

    Returns:
        None
    """
    scores = np.zeros((16, 16))
    scores[2, 2] = 0.7
    scores[12, 12] = 0.3
    annotations = {"s": [_lesion(2.0, 2.0), _nonlesion(12.0, 12.0)]}
    summary = confidence_summary({"s": AnomalyMap(scores)}, annotations, 0.1, 1.0)

    assert summary == {Label.LESION: 0.7, Label.NON_LESIONAL: 0.3}
