"""
CSV, Markdown and SVG writers for the experiment outputs, and the
paired comparison of two segmentation reports
"""

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union
from core.errors import FormatError, ParameterError
from core.grids import Label
from evaluation.detection import DetectionRow, FrocCurve
from evaluation.segmentation import SegReport, Stratum, StratumSummary
from evaluation.statistics import significance_stars, wilcoxon_signed_rank

PathLike = Union[str, Path]

SEG_COLUMNS = ["row_type", "id", "stratum", "n", "area", "dice", "hd95", "asd",
               "f1", "tp", "fp", "fn", "n_excluded", "threshold"]
FROC_COLUMNS = ["threshold", "filter", "score", "n_images", "n_points", "n_excluded"]
CURVE_COLUMNS = ["threshold", "filter", "fppi", "sensitivity"]
COMPARISON_COLUMNS = ["group", "metric", "n", "w", "p", "method", "significant"]
GROUPS = ("All", "S", "M", "L")


def fmt(value: Optional[float]) -> str:
    """
    Fixed six-decimal rendering, empty for missing values
    """
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return f"{value:.6f}"


def _write_rows(path: PathLike, header: Sequence[str], rows: Sequence[Sequence[object]],
                append: bool = False) -> None:
    target = Path(path)
    write_header = not (append and target.exists() and target.stat().st_size > 0)
    try:
        with open(target, "a" if append else "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            if write_header:
                writer.writerow(header)
            writer.writerows(rows)
    except OSError as e:
        raise OSError(f"Failed to write {target}: {e}") from e


def write_loss_history(path: PathLike, history: Sequence[float]) -> None:
    """
    One (epoch, mean loss) row per training epoch
    """
    _write_rows(path, ["epoch", "loss"], [[i + 1, fmt(loss)] for i, loss in enumerate(history)])


def _summary_row(name: str, summary: StratumSummary, threshold: float) -> List[object]:
    return ["aggregate", name, name if name != "All" else "", summary.n, "",
            fmt(summary.dice), fmt(summary.hd95), fmt(summary.asd), fmt(summary.f1),
            summary.tp, summary.fp, summary.fn, summary.n_excluded, fmt(threshold)]


def write_seg_report(path: PathLike, report: SegReport) -> None:
    """
    Per-subject rows followed by the All/S/M/L aggregate rows, told
    apart by the row_type column

    Args:
        path (PathLike): destination CSV
        report (SegReport): evaluated test subjects

    Returns:
        None
    """
    rows: List[List[object]] = []
    for r in report.subjects:
        rows.append(["subject", r.subject_id, r.stratum.value, 1, r.area, fmt(r.dice),
                     fmt(r.hd95), fmt(r.asd), "", r.tp, r.fp, r.fn,
                     int(r.hd95 is None), fmt(report.threshold)])
    for name, summary in report.summaries().items():
        rows.append(_summary_row(name, summary, report.threshold))
    _write_rows(path, SEG_COLUMNS, rows)


def seg_rows(report: SegReport) -> List[Dict[str, object]]:
    """
    Per-subject rows of a report in the shape `read_seg_report`
    returns
    """
    return [{"id": r.subject_id, "stratum": r.stratum.value, "dice": r.dice,
             "hd95": r.hd95, "asd": r.asd} for r in report.subjects]


def _optional_float(value: str, path: PathLike, line: int, name: str) -> Optional[float]:
    if value == "":
        return None
    try:
        return float(value)
    except ValueError as e:
        raise FormatError(f"{path} line {line}: non-numeric {name} '{value}'",
                          field=name) from e


def read_seg_report(path: PathLike) -> List[Dict[str, object]]:
    """
    Per-subject rows of a segmentation report CSV

    Args:
        path (PathLike): report written by `write_seg_report`

    Returns:
        (List[Dict[str, object]]): id, stratum, dice, hd95 and asd
            per subject
    """
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames is None or not set(SEG_COLUMNS) <= set(reader.fieldnames):
                raise FormatError(f"{path} is not a segmentation report", field="header")
            rows = []
            for line, row in enumerate(reader, start=2):
                if row["row_type"] != "subject":
                    continue
                if row["stratum"] not in {s.value for s in Stratum}:
                    raise FormatError(f"{path} line {line}: unknown stratum '{row['stratum']}'",
                                      field="stratum")
                rows.append({"id": row["id"], "stratum": row["stratum"],
                             **{m: _optional_float(row[m], path, line, m)
                                for m in ("dice", "hd95", "asd")}})
    except OSError as e:
        raise OSError(f"Failed to read report {path}: {e}") from e
    return rows


@dataclass(frozen=True)
class ComparisonRow:
    """
    Wilcoxon test of one metric over one group of paired subjects
    """
    group: str
    metric: str
    n: int
    w: Optional[float]
    p: Optional[float]
    method: str

    @property
    def stars(self) -> str:
        """
        Significance marker of the row
        """
        return significance_stars(self.p) if self.p is not None else ""


def compare_reports(rows_a: Sequence[Mapping[str, object]],
                    rows_b: Sequence[Mapping[str, object]],
                    metric: str = "dice") -> List[ComparisonRow]:
    """
    Paired Wilcoxon tests of a per-subject metric over all subjects
    and within each stratum. Subjects are paired by id, strata come
    from the first report, and subjects with the metric undefined in
    either report are skipped

    Args:
        rows_a (Sequence[Mapping[str, object]]): first report rows
        rows_b (Sequence[Mapping[str, object]]): second report rows
        metric (str): dice, hd95 or asd

    Returns:
        (List[ComparisonRow]): rows All, S, M, L
    """
    if metric not in ("dice", "hd95", "asd"):
        raise ParameterError(f"Unknown metric '{metric}', expected dice, hd95 or asd")
    by_id_b = {r["id"]: r for r in rows_b}
    paired = [(r["stratum"], r[metric], by_id_b[r["id"]][metric]) for r in rows_a
              if r["id"] in by_id_b and r[metric] is not None
              and by_id_b[r["id"]][metric] is not None]
    if not any(r["id"] in by_id_b for r in rows_a):
        raise ParameterError("The two reports share no subjects")

    comparison = []
    for group in GROUPS:
        values = [(a, b) for stratum, a, b in paired if group == "All" or stratum == group]
        if not values:
            comparison.append(ComparisonRow(group, metric, 0, None, None, "n/a"))
            continue
        result = wilcoxon_signed_rank([float(a) for a, _ in values],
                                      [float(b) for _, b in values])
        comparison.append(ComparisonRow(group, metric, len(values), result.w, result.p,
                                        result.method.value))
    return comparison


def write_comparison(path: PathLike, rows: Sequence[ComparisonRow], append: bool = False) -> None:
    """
    Comparison rows as CSV, optionally appended to an existing file
    """
    _write_rows(path, COMPARISON_COLUMNS,
                [[r.group, r.metric, r.n, fmt(r.w), fmt(r.p), r.method, r.stars] for r in rows],
                append=append)


def write_froc_table(path: PathLike, rows: Sequence[DetectionRow]) -> None:
    """
    One row per (threshold, filter) cell of the detection table
    """
    _write_rows(path, FROC_COLUMNS,
                [[fmt(r.threshold), r.label_filter.value, fmt(r.score), r.n_images,
                  r.n_points, r.n_excluded] for r in rows])


def write_froc_curves(path: PathLike, rows: Sequence[DetectionRow]) -> None:
    """
    Operating points of every detection row, for external plotting
    """
    _write_rows(path, CURVE_COLUMNS,
                [[fmt(r.threshold), r.label_filter.value, fmt(fppi), fmt(sensitivity)]
                 for r in rows for fppi, sensitivity in r.curve.points])


def plot_froc_svg(path: PathLike, curves: Mapping[str, FrocCurve], max_fppi: float = 2.0) -> None:
    """
    Step plot of FROC curves, one line per entry, rendered with the
    Agg backend

    Args:
        path (PathLike): destination .svg
        curves (Mapping[str, FrocCurve]): curves by legend label
        max_fppi (float): right end of the x axis

    Returns:
        None
    """
    import matplotlib  # pylint: disable=import-outside-toplevel
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt  # pylint: disable=import-outside-toplevel

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for name, curve in curves.items():
        if not curve.points:
            continue
        fppi = [0.0] + curve.fppi + [max(max_fppi, curve.fppi[-1])]
        sensitivity = [0.0] + curve.sensitivity + [curve.sensitivity[-1]]
        ax.step(fppi, sensitivity, where="post", label=name)
    ax.set_xlim(0.0, max_fppi)
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("False positives per image")
    ax.set_ylabel("Sensitivity")
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right", fontsize="small")
    fig.tight_layout()
    fig.savefig(str(path), format="svg", metadata={"Date": None})
    plt.close(fig)
    logging.info("Wrote FROC plot to %s", path)


@dataclass
class VariantSummary:
    """
    What the Markdown summary needs from one trained variant
    """
    name: str
    seg: SegReport
    detection: List[DetectionRow]
    confidence: Dict[Label, Optional[float]]
    calibrated_threshold: Optional[float] = None
    n_train_subjects: int = 0


def _cell(value: Optional[float], digits: int = 3) -> str:
    return "n/a" if value is None or math.isnan(value) else f"{value:.{digits}f}"


def _threshold_label(variant: VariantSummary, row: DetectionRow) -> str:
    calibrated = variant.calibrated_threshold
    if calibrated is not None and math.isclose(row.threshold, calibrated):
        return "calibrated"
    return f"{row.threshold:.3f}"


def summary_markdown(variants: Sequence[VariantSummary],
                     comparison: Sequence[ComparisonRow]) -> str:
    """
    Segmentation table (All/S/M/L x Dice/HD95/ASD/F1) per variant,
    detection table juxtaposing the variants, and the paired tests

    Args:
        variants (Sequence[VariantSummary]): evaluated variants
        comparison (Sequence[ComparisonRow]): paired tests of the
            first two variants

    Returns:
        (str): Markdown document
    """
    lines = ["# FlowLens experiment summary", ""]

    lines += ["## Segmentation", ""]
    for variant in variants:
        lines += [f"### {variant.name} (threshold {variant.seg.threshold:.3f}, "
                  f"{variant.n_train_subjects} training subjects)", "",
                  "| Group | Dice | HD95 (mm) | ASD (mm) | F1 10% | n | excluded |",
                  "|---|---|---|---|---|---|---|"]
        for group, summary in variant.seg.summaries().items():
            lines.append(f"| {group} | {_cell(summary.dice)} | "
                         f"{_cell(summary.hd95)} | {_cell(summary.asd)} | {_cell(summary.f1)} | "
                         f"{summary.n} | {summary.n_excluded} |")
        lines.append("")
    lines += ["## Detection (FROC score)", "",
              "| T | Anomalies | " + " | ".join(v.name for v in variants) + " |",
              "|---|---|" + "---|" * len(variants)]
    cells: Dict[Tuple[str, str], Dict[str, Optional[float]]] = {}
    for variant in variants:
        for row in variant.detection:
            key = (_threshold_label(variant, row), row.label_filter.row_name)
            cells.setdefault(key, {})[variant.name] = row.score
    for (threshold, anomalies), scores in cells.items():
        lines.append(f"| {threshold} | {anomalies} | "
                     + " | ".join(_cell(scores.get(v.name)) for v in variants) + " |")
    lines.append("")
    for variant in variants:
        if variant.calibrated_threshold is not None:
            lines.append(f"- {variant.name}: calibrated threshold "
                         f"{variant.calibrated_threshold:.4f}")
        lines.append(f"- {variant.name}: max confidence lesion "
                     f"{_cell(variant.confidence.get(Label.LESION))}, non-lesional "
                     f"{_cell(variant.confidence.get(Label.NON_LESIONAL))}")
    lines.append("")

    if comparison:
        lines += ["## Paired comparison", "",
                  f"Wilcoxon signed-rank test of {comparison[0].metric} between "
                  f"{variants[0].name} and {variants[1].name}; `*` marks p < 0.05.", "",
                  "| Group | Metric | n | W | p | Method |", "|---|---|---|---|---|---|"]
        for row in comparison:
            lines.append(f"| {row.group} | {row.metric} | {row.n} | {_cell(row.w, 1)} | "
                         f"{_cell(row.p, 4)}{row.stars} | {row.method} |")
        lines.append("")
    return "\n".join(lines)


def write_summary(path: PathLike,
                  variants: Sequence[VariantSummary],
                  comparison: Sequence[ComparisonRow]) -> None:
    """
    Writes `summary_markdown` to disk
    """
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(summary_markdown(variants, comparison))
    except OSError as e:
        raise OSError(f"Failed to write summary to {path}: {e}") from e
