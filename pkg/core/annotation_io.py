"""
Reads and writes point-annotation CSV files with the header
`subject_id,x,y,label,rater`
"""

import csv
import io
import math
from pathlib import Path
from typing import Dict, List, Mapping, Union
from core.errors import AnnotationParseError
from core.grids import Label, PointAnnotation

HEADER = ["subject_id", "x", "y", "label", "rater"]


def _parse_coordinate(value: str, name: str, line: int) -> float:
    try:
        number = float(value)
    except ValueError as e:
        raise AnnotationParseError(f"non-numeric {name} '{value}'", line=line, field=name) from e
    if not math.isfinite(number):
        raise AnnotationParseError(f"non-finite {name} '{value}'", line=line, field=name)
    return number


def read_annotations(path: Union[str, Path]) -> Dict[str, List[PointAnnotation]]:
    """
    Reads an annotation CSV, grouping the clicks by subject while
    keeping the row order within each subject and the order in which
    subjects first appear

    Args:
        path (str | Path): CSV file to read

    Returns:
        annotations (Dict[str, List[PointAnnotation]]): clicks per
            subject id
    """
    annotations: Dict[str, List[PointAnnotation]] = {}
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise OSError(f"Failed to read annotations from {path}: {e}") from e
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise AnnotationParseError(f"invalid UTF-8 byte at offset {e.start}",
                                   line=data[:e.start].count(b"\n") + 1) from e

    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != HEADER:
        raise AnnotationParseError(f"expected header {','.join(HEADER)}",
                                   line=1, field="header")
    for line, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(HEADER):
            raise AnnotationParseError(f"expected {len(HEADER)} columns, got {len(row)}",
                                       line=line)
        subject_id, x, y, label, rater = (cell.strip() for cell in row)
        if not subject_id:
            raise AnnotationParseError("empty subject_id", line=line, field="subject_id")
        try:
            parsed_label = Label(label)
        except ValueError as e:
            raise AnnotationParseError(f"unknown label '{label}'",
                                       line=line, field="label") from e
        point = PointAnnotation(x=_parse_coordinate(x, "x", line),
                                y=_parse_coordinate(y, "y", line),
                                label=parsed_label,
                                rater=rater or None,
                                subject_id=subject_id)
        annotations.setdefault(subject_id, []).append(point)
    return annotations


def write_annotations(path: Union[str, Path],
                      annotations: Mapping[str, List[PointAnnotation]]) -> None:
    """
    Writes clicks grouped by subject to a CSV file, subjects in
    mapping order

    Args:
        path (str | Path): destination file
        annotations (Mapping[str, List[PointAnnotation]]): clicks per
            subject id

    Returns:
        None
    """
    try:
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(HEADER)
            for subject_id, points in annotations.items():
                for point in points:
                    writer.writerow([subject_id, repr(float(point.x)), repr(float(point.y)),
                                     point.label.value, point.rater or ""])
    except OSError as e:
        raise OSError(f"Failed to write annotations to {path}: {e}") from e
