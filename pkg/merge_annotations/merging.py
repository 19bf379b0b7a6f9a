"""
Merges the clicks of two raters into one reference set by averaging
same-label pairs closer than a radius
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union
import numpy as np
from scipy.spatial.distance import cdist
from core.annotation_io import read_annotations, write_annotations
from core.errors import ParameterError
from core.grids import PointAnnotation


def _merged_rater(a: PointAnnotation, b: PointAnnotation) -> str:
    names = sorted({a.rater or "", b.rater or ""})
    return "+".join(n for n in names if n)


def _subject_of(points: Sequence[PointAnnotation]) -> Union[str, None]:
    subjects = {p.subject_id for p in points if p.subject_id is not None}
    if len(subjects) > 1:
        raise ParameterError(f"Clicks of several subjects mixed: {sorted(subjects)}")
    return subjects.pop() if subjects else None


def merge_raters(a: Sequence[PointAnnotation],
                 b: Sequence[PointAnnotation],
                 radius: float = 5.0) -> List[PointAnnotation]:
    """
    Greedy matching of same-label clicks of the two raters in
    ascending distance order (ties by index in a, then in b). Pairs
    strictly closer than `radius` become their midpoint; every click
    merges at most once and unmatched clicks are kept unchanged

    Args:
        a (Sequence[PointAnnotation]): first rater, one subject
        b (Sequence[PointAnnotation]): second rater, same subject
        radius (float): exclusive merge distance in pixels

    Returns:
        (List[PointAnnotation]): merged clicks, then the unmatched
            clicks of a, then those of b
    """
    if radius < 0:
        raise ParameterError("Merge radius cannot be negative")
    subject_a, subject_b = _subject_of(a), _subject_of(b)
    if subject_a is not None and subject_b is not None and subject_a != subject_b:
        raise ParameterError(f"Cannot merge clicks of '{subject_a}' with '{subject_b}'")
    if not a or not b:
        return list(a) + list(b)

    coords_a = np.array([[p.x, p.y] for p in a], dtype=np.float64)
    coords_b = np.array([[p.x, p.y] for p in b], dtype=np.float64)
    distances = cdist(coords_a, coords_b)
    same_label = np.array([[pa.label == pb.label for pb in b] for pa in a])
    candidates = sorted((float(distances[i, j]), i, j)
                        for i, j in zip(*np.nonzero(same_label & (distances < radius))))

    used_a, used_b = set(), set()
    merged = []
    for _, i, j in candidates:
        if i in used_a or j in used_b:
            continue
        used_a.add(i)
        used_b.add(j)
        merged.append(PointAnnotation(x=(a[i].x + b[j].x) / 2.0, y=(a[i].y + b[j].y) / 2.0,
                                      label=a[i].label, rater=_merged_rater(a[i], b[j]) or None,
                                      subject_id=a[i].subject_id or b[j].subject_id))
    kept_a = [p for i, p in enumerate(a) if i not in used_a]
    kept_b = [p for j, p in enumerate(b) if j not in used_b]
    return merged + kept_a + kept_b


def merge_annotation_files(path_a: Union[str, Path],
                           path_b: Union[str, Path],
                           out_path: Union[str, Path],
                           radius: float = 5.0) -> Dict[str, List[PointAnnotation]]:
    """
    Merges two annotation CSV files subject by subject and writes the
    result. Subjects present in only one file keep that file's clicks

    Args:
        path_a (str | Path): first rater CSV
        path_b (str | Path): second rater CSV
        out_path (str | Path): merged CSV
        radius (float): exclusive merge distance in pixels

    Returns:
        (Dict[str, List[PointAnnotation]]): merged clicks per subject
    """
    rater_a = read_annotations(path_a)
    rater_b = read_annotations(path_b)
    merged: Dict[str, List[PointAnnotation]] = {}
    for subject_id in list(rater_a) + [s for s in rater_b if s not in rater_a]:
        merged[subject_id] = merge_raters(rater_a.get(subject_id, []),
                                          rater_b.get(subject_id, []), radius)
    write_annotations(out_path, merged)
    n_in = sum(len(v) for v in rater_a.values()) + sum(len(v) for v in rater_b.values())
    n_out = sum(len(v) for v in merged.values())
    logging.info("Merged %d clicks into %d over %d subjects", n_in, n_out, len(merged))
    return merged
