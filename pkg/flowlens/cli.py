"""
Command-line entry point: `python -m flowlens <command>`

Exit codes: 0 success, 1 usage or invalid parameters, 2 data or
format errors, 3 numeric failures
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, NoReturn, Optional, Sequence
from pydantic import ValidationError
from core.annotation_io import read_annotations, write_annotations
from core.errors import (
    FormatError,
    GenerationError,
    NumericError,
    ParameterError,
    StageError,
)
from core.grid_io import read_grid, write_grid
from core.grids import AnomalyMap, BinaryMask
from evaluation.detection import (
    DetectionConfig,
    LabelFilter,
    detection_table,
)
from evaluation.segmentation import evaluate_segmentation, select_threshold
from flow_model.checkpoint import load_model, save_model
from flow_model.model import init_flow_model
from flow_model.training import Optimizer, TrainConfig, train
from flowlens.experiment import (
    ExperimentConfig,
    default_threshold_grid,
    detection_thresholds,
    run_experiment,
)
from flowlens.reports import (
    compare_reports,
    read_seg_report,
    write_comparison,
    write_froc_curves,
    write_froc_table,
    write_loss_history,
    write_seg_report,
)
from merge_annotations.merging import merge_annotation_files
from merge_annotations.raters import simulate_raters
from prepare_data.dataset import (
    SPLITS,
    load_dataset,
    make_dataset,
    make_training_pairs,
    select_training_subjects,
    write_dataset,
)
from prepare_data.lesions import LesionParams, SubtleParams
from prepare_data.phantoms import PhantomParams
from transport.reconstruction import TransportConfig, anomaly_maps
from utils.load_config import load_config
from utils.logging_config import setup_logging

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    """
    Invalid command line
    """


class FlowLensParser(argparse.ArgumentParser):
    """
    Parser whose errors surface as UsageError instead of exiting with
    argparse's own status
    """

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def parse_bool(value: str) -> bool:
    """
    Accepts true/false spellings for boolean flags
    """
    lowered = value.strip().lower()
    if lowered in ("true", "yes", "1"):
        return True
    if lowered in ("false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got '{value}'")


def parse_floats(value: str) -> List[float]:
    """
    Comma-separated list of numbers
    """
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{value}'") from e


def parse_ints(value: str) -> List[int]:
    """
    Comma-separated list of integers
    """
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{value}'") from e


def load_maps(directory: str, ids: Optional[Sequence[str]] = None) -> Dict[str, AnomalyMap]:
    """
    Anomaly maps of a directory keyed by file stem, in id order

    Args:
        directory (str): folder of <subject id>.agrd files
        ids (Optional[Sequence[str]]): load only these subjects

    Returns:
        (Dict[str, AnomalyMap]): maps per subject id
    """
    root = Path(directory)
    if not root.is_dir():
        raise OSError(f"Map directory {root} does not exist")
    wanted = ids if ids is not None else sorted(p.stem for p in root.glob("*.agrd"))
    maps = {}
    for subject_id in wanted:
        grid = read_grid(root / f"{subject_id}.agrd")
        if not isinstance(grid, AnomalyMap):
            raise FormatError(f"{root / subject_id}.agrd is not an anomaly map", field="kind")
        maps[subject_id] = grid
    return maps


def cmd_generate(args: argparse.Namespace) -> int:
    """
    Synthetic dataset with ground truth, optionally with two
    simulated raters
    """
    dataset = make_dataset(args.n, PhantomParams(size=args.size), LesionParams(),
                           SubtleParams(), args.contamination, args.seed, n_normal=args.n_normal,
                           lesion_probability=args.lesion_probability)
    write_dataset(dataset, args.out)
    if args.raters:
        subjects = [s for s in dataset.subjects() if s.annotations]
        raters = simulate_raters({s.id: s.annotations for s in subjects},
                                 {s.id: (s.image.width, s.image.height) for s in subjects},
                                 args.seed, jitter=args.rater_jitter,
                                 miss_rate=args.rater_miss_rate)
        for name, clicks in raters.items():
            write_annotations(Path(args.out) / f"annotations_{name}.csv", clicks)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """
    Trains one variant on the training split of a dataset
    """
    config = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                         seed=args.seed, optimizer=args.optimizer, momentum=args.momentum,
                         progress=args.progress)
    dataset = load_dataset(args.data)
    pool = select_training_subjects(dataset.train, args.contaminated, args.max_train_subjects)
    pairs = make_training_pairs(pool, LesionParams(), args.pairs_per_subject, args.seed)
    initial = init_flow_model(pool[0].image.pixels.size, args.hidden, args.seed)
    model, history = train(initial, pairs, config)

    out = Path(args.out)
    save_model(out, model)
    history_path = args.loss_history or out.with_name(f"{out.stem}_loss_history.csv")
    write_loss_history(history_path, history)
    return EXIT_OK


def cmd_reconstruct(args: argparse.Namespace) -> int:
    """
    Anomaly maps of the chosen splits
    """
    model = load_model(args.model)
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = TransportConfig(steps=args.steps)
    for split in args.split.split(","):
        subjects = dataset.split(split.strip())
        for subject, score_map in zip(subjects, anomaly_maps(model, [s.image for s in subjects],
                                                             cfg)):
            write_grid(out / f"{subject.id}.agrd", score_map)
    return EXIT_OK


def cmd_evaluate_seg(args: argparse.Namespace) -> int:
    """
    Dice/HD95/ASD/F1 on the test split, thresholded at a fixed value
    or at the validation optimum
    """
    dataset = load_dataset(args.gt)
    if args.threshold == "auto":
        val_maps = load_maps(args.maps, [s.id for s in dataset.val])
        gts = [s.lesion_mask if s.lesion_mask is not None
               else BinaryMask.empty(s.image.width, s.image.height, s.image.spacing)
               for s in dataset.val]
        threshold = select_threshold(list(val_maps.values()), gts,
                                     args.grid or default_threshold_grid())
    else:
        try:
            threshold = float(args.threshold)
        except ValueError as e:
            raise UsageError(f"--threshold must be a number or 'auto', got "
                             f"'{args.threshold}'") from e

    lesioned = [s for s in dataset.test if s.lesion_mask is not None]
    if not lesioned:
        raise ParameterError("No test subject carries a lesion mask")
    maps = load_maps(args.maps, [s.id for s in lesioned])
    report = evaluate_segmentation([s.id for s in lesioned], [maps[s.id] for s in lesioned],
                                   [s.lesion_mask for s in lesioned],  # type: ignore[misc]
                                   threshold, args.overlap)
    write_seg_report(args.out, report)
    return EXIT_OK


def cmd_evaluate_froc(args: argparse.Namespace) -> int:
    """
    FROC scores per threshold and label filter, plus the raw curves
    """
    cfg = DetectionConfig(binarize_thresholds=args.thresholds, fppi_levels=args.levels,
                          match_tolerance=args.tolerance, calibrate_lowest=args.calibrate)
    thresholds = list(cfg.binarize_thresholds)
    ids = None
    if args.data:
        dataset = load_dataset(args.data)
        ids = [s.id for s in dataset.split(args.split)]
        if args.calibrate:
            normal_maps = load_maps(args.maps, [s.id for s in dataset.normal])
            thresholds, _ = detection_thresholds(cfg, list(normal_maps.values()))
    elif args.calibrate:
        raise UsageError("--calibrate needs --data to locate the normal split")

    maps = load_maps(args.maps, ids)
    annotations = read_annotations(args.annotations)
    filters = [LabelFilter(f) for f in args.filter]
    rows = detection_table(maps, annotations, cfg, filters, thresholds)
    write_froc_table(args.out, rows)
    curve_out = args.curve_out or Path(args.out).with_name(f"{Path(args.out).stem}_curve.csv")
    write_froc_curves(curve_out, rows)
    return EXIT_OK


def cmd_merge_annotations(args: argparse.Namespace) -> int:
    """
    Merges two rater files
    """
    merge_annotation_files(args.a, args.b, args.out, args.radius)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """
    Paired Wilcoxon tests between two segmentation reports
    """
    rows = compare_reports(read_seg_report(args.a), read_seg_report(args.b), args.test)
    for row in rows:
        p = f"{row.p:.6f}{row.stars}" if row.p is not None else "n/a"
        print(f"{row.group}\t{row.metric}\tn={row.n}\tp={p}\t{row.method}")
    if args.out:
        write_comparison(args.out, rows, append=True)
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """
    Full experiment from a JSON configuration
    """
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"Invalid JSON in {args.config}: {e}", field="config") from e
        except OSError as e:
            raise OSError(f"Failed to read config {args.config}: {e}") from e
    else:
        raw = load_config().get("experiment", {})
    config = ExperimentConfig.model_validate(raw)
    updates = {}
    if args.out:
        updates["out_dir"] = args.out
    if args.svg:
        updates["svg"] = True
    if updates:
        config = config.model_copy(update=updates)
    run_experiment(config)
    return EXIT_OK


def cmd_schema(args: argparse.Namespace) -> int:
    """
    Prints the JSON schema of the experiment configuration
    """
    print(json.dumps(ExperimentConfig.model_json_schema(), indent=args.indent))
    return EXIT_OK


def build_parser() -> FlowLensParser:
    """
    Parser of every subcommand

    Args:
        None

    Returns:
        (FlowLensParser): configured parser
    """
    parser = FlowLensParser(prog="flowlens",
                            description="Rectified-flow counterfactual anomaly detection "
                                        "on synthetic phantoms")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=FlowLensParser)

    p = sub.add_parser("generate", help="Generate a synthetic dataset")
    p.add_argument("--n", type=int, required=True, help="Subjects across train/val/test")
    p.add_argument("--contamination", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--n-normal", type=int, default=4)
    p.add_argument("--lesion-probability", type=float, default=0.8,
                   help="Chance that a validation or test subject carries a lesion")
    p.add_argument("--raters", action="store_true", help="Also write two simulated raters")
    p.add_argument("--rater-jitter", type=float, default=1.5)
    p.add_argument("--rater-miss-rate", type=float, default=0.1)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="Train a velocity field")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contaminated", type=parse_bool, default=True,
                   help="Keep contaminated training subjects (true|false)")
    p.add_argument("--hidden", type=parse_ints, default=[256])
    p.add_argument("--pairs-per-subject", type=int, default=4)
    p.add_argument("--batch-size", type=int, default=30)
    p.add_argument("--optimizer", choices=[o.value for o in Optimizer],
                   default=Optimizer.SGD_MOMENTUM.value)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--max-train-subjects", type=int, default=None)
    p.add_argument("--loss-history", default=None)
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reconstruct", help="Write anomaly maps")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val,test,normal",
                   help=f"Comma-separated subset of {','.join(SPLITS)}")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate-seg", help="Segmentation metrics on the test split")
    p.add_argument("--maps", required=True)
    p.add_argument("--gt", required=True, help="Dataset directory")
    p.add_argument("--threshold", default="auto", help="Number or 'auto'")
    p.add_argument("--grid", type=parse_floats, default=None)
    p.add_argument("--overlap", type=float, default=0.10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate_seg)

    p = sub.add_parser("evaluate-froc", help="FROC scores")
    p.add_argument("--maps", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--thresholds", type=parse_floats, default=[0.036, 0.1, 0.5])
    p.add_argument("--levels", type=parse_floats, default=[0.25, 0.5, 1.0, 1.5])
    p.add_argument("--filter", nargs="+", choices=[f.value for f in LabelFilter],
                   default=[LabelFilter.LESION.value, LabelFilter.NON_LESIONAL.value,
                            LabelFilter.ALL.value])
    p.add_argument("--tolerance", type=float, default=5.0)
    p.add_argument("--data", default=None, help="Dataset directory restricting the subjects")
    p.add_argument("--split", default="test", choices=list(SPLITS))
    p.add_argument("--calibrate", action="store_true",
                   help="Replace the lowest threshold with the normal-split calibration")
    p.add_argument("--out", required=True)
    p.add_argument("--curve-out", default=None)
    p.set_defaults(func=cmd_evaluate_froc)

    p = sub.add_parser("merge-annotations", help="Merge two raters")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--radius", type=float, default=5.0)
    p.set_defaults(func=cmd_merge_annotations)

    p = sub.add_parser("report", help="Compare two segmentation reports")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--test", choices=["dice", "hd95", "asd"], default="dice")
    p.add_argument("--out", default=None, help="CSV the comparison rows are appended to")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("run", help="Run a full experiment")
    p.add_argument("--config", default=None, help="Experiment JSON, else the config file block")
    p.add_argument("--out", default=None)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("schema", help="Print the experiment configuration schema")
    p.add_argument("--indent", type=int, default=2)
    p.set_defaults(func=cmd_schema)
    return parser


def exit_code(error: BaseException) -> Optional[int]:
    """
    Exit status of an error, None for unexpected ones
    """
    if isinstance(error, StageError) and error.__cause__ is not None:
        return exit_code(error.__cause__) or EXIT_DATA
    if isinstance(error, NumericError):
        return EXIT_NUMERIC
    if isinstance(error, (FormatError, GenerationError, OSError)):
        return EXIT_DATA
    if isinstance(error, (UsageError, ValidationError, ParameterError)):
        return EXIT_USAGE
    return None


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parses the command line, runs the command and maps failures to
    exit codes

    Args:
        argv (Optional[Sequence[str]]): arguments, sys.argv[1:] when
            missing

    Returns:
        (int): exit status
    """
    config = load_config()
    try:
        setup_logging(config.get("logging_level", "info"))
    except KeyError:
        setup_logging("info")
        logging.warning("Unknown logging level '%s', using info", config.get("logging_level"))

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        handler: Callable[[argparse.Namespace], int] = args.func
        return handler(args)
    except SystemExit as e:
        return int(e.code or 0)
    except Exception as e:  # pylint: disable=broad-exception-caught
        code = exit_code(e)
        if code is None:
            raise
        if isinstance(e, UsageError):
            parser.print_usage(sys.stderr)
        logging.error("%s", e)
        print(f"flowlens: error: {e}", file=sys.stderr)
        return code
