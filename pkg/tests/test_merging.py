"""
File used in the testing of the dual-rater merge and the simulated
raters in the merge_annotations folder
"""

import sys
from pathlib import Path
from typing import List, Set, Tuple
import pytest

sys.path.append(str(Path(__file__).resolve().parent.parent))

# pylint: disable=wrong-import-position
from core.annotation_io import read_annotations, write_annotations
from core.errors import ParameterError
from core.grids import Label, PointAnnotation
from merge_annotations.merging import merge_annotation_files, merge_raters
from merge_annotations.raters import simulate_rater, simulate_raters


def _click(x: float, y: float, rater: str, label: Label = Label.LESION,
           subject_id: str = "sub-0001") -> PointAnnotation:
    return PointAnnotation(x=x, y=y, label=label, rater=rater, subject_id=subject_id)


def _as_set(points: List[PointAnnotation]) -> Set[Tuple[float, float, Label]]:
    return {(p.x, p.y, p.label) for p in points}

# Testing function merge_raters

def test_merge_close_pair() -> None:
    """
    Tests that a close same-label pair becomes its midpoint

    Args:
        None

    Returns:
        None
    """
    merged = merge_raters([_click(10, 10, "rater_b")], [_click(12, 13, "rater_a")])

    assert len(merged) == 1
    assert (merged[0].x, merged[0].y) == (11.0, 11.5)
    assert merged[0].rater == "rater_a+rater_b"

def test_merge_radius_is_exclusive() -> None:
    """
    Tests that clicks exactly 5 px apart stay separate

    Args:
        None

    Returns:
        None
    """
    merged = merge_raters([_click(0, 0, "a")], [_click(3, 4, "b")], radius=5.0)

    assert len(merged) == 2

def test_merge_needs_same_label() -> None:
    """
    Tests that clicks of different labels are not merged

    Args:
        None

    Returns:
        None
    """
    merged = merge_raters([_click(0, 0, "a")], [_click(1, 0, "b", Label.NON_LESIONAL)])

    assert [p.label for p in merged] == [Label.LESION, Label.NON_LESIONAL]

def test_merge_greedy_and_symmetric() -> None:
    """
    Tests that the closest pair wins and that swapping the raters
    gives the same clicks

    Args:
        None

    Returns:
        None
    """
    a = [_click(0, 0, "a"), _click(20, 20, "a")]
    b = [_click(1, 0, "b"), _click(3, 0, "b"), _click(20.5, 21, "b")]
    merged = merge_raters(a, b)

    assert _as_set(merged) == {(0.5, 0.0, Label.LESION), (20.25, 20.5, Label.LESION),
                               (3.0, 0.0, Label.LESION)}
    assert _as_set(merge_raters(b, a)) == _as_set(merged)

def test_merge_with_empty_rater() -> None:
    """
    Tests that an empty rater leaves the other unchanged

    Args:
        None

    Returns:
        None
    """
    a = [_click(1, 2, "a"), _click(5, 6, "a")]

    assert merge_raters(a, []) == a
    assert merge_raters([], a) == a

def test_merge_rejects_mixed_subjects() -> None:
    """
    Tests that clicks of two subjects cannot be merged

    Args:
        None

    Returns:
        None
    """
    with pytest.raises(ParameterError):
        merge_raters([_click(0, 0, "a")], [_click(0, 0, "b", subject_id="sub-0002")])

def test_merge_annotation_files(tmp_path: Path) -> None:
    """
    Tests the file-level merge with a subject known to one rater

    Args:
        tmp_path (Path): temporary directory

    Returns:
        None
    """
    write_annotations(tmp_path / "a.csv", {"sub-0001": [_click(10, 10, "a")]})
    write_annotations(tmp_path / "b.csv", {"sub-0001": [_click(12, 13, "b")],
                                           "sub-0002": [_click(4, 4, "b", subject_id="sub-0002")]})
    merge_annotation_files(tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "out.csv")
    merged = read_annotations(tmp_path / "out.csv")

    assert list(merged) == ["sub-0001", "sub-0002"]
    assert (merged["sub-0001"][0].x, merged["sub-0001"][0].y) == (11.0, 11.5)
    assert merged["sub-0001"][0].rater == "a+b"
    assert (merged["sub-0002"][0].x, merged["sub-0002"][0].y) == (4.0, 4.0)

# Testing the simulated raters

def test_simulate_rater_noise_free() -> None:
    """
    Tests that zero jitter and zero misses copy the clicks

    Args:
        None

    Returns:
        None
    """
    points = [_click(3.5, 4.25, "reference"), _click(10, 1, "reference", Label.NON_LESIONAL)]
    copied = simulate_rater(points, 0.0, 0.0, seed=1, rater="rater_a", width=16, height=16)

    assert [(p.x, p.y, p.label) for p in copied] == [(p.x, p.y, p.label) for p in points]
    assert all(p.rater == "rater_a" for p in copied)

def test_simulate_rater_misses_everything() -> None:
    """
    Tests a miss rate of 1

    Args:
        None

    Returns:
        None
    """
    points = [_click(3, 4, "reference")]

    assert simulate_rater(points, 1.0, 1.0, seed=0, rater="a", width=8, height=8) == []

def test_simulate_raters_deterministic_and_clamped() -> None:
    """
    Tests that both raters are reproducible, differ from each
    other and stay inside the image

    Args:
        None

    Returns:
        None
    """
    annotations = {"s": [_click(0.0, 7.0, "reference", subject_id="s") for _ in range(10)]}
    sizes = {"s": (8, 8)}
    first = simulate_raters(annotations, sizes, seed=4, miss_rate=0.0)
    second = simulate_raters(annotations, sizes, seed=4, miss_rate=0.0)

    assert first == second
    assert first["rater_a"]["s"] != first["rater_b"]["s"]
    for clicks in first.values():
        assert all(0 <= p.x <= 7 and 0 <= p.y <= 7 for p in clicks["s"])
