"""
Builds the train/validation/test/normal subject splits from the
phantom generators, persists them to disk, and turns training
subjects into flow pairs
"""

import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
from pydantic import BaseModel, Field
from core.annotation_io import read_annotations, write_annotations
from core.errors import FormatError, ParameterError
from core.grid_io import read_grid, write_grid
from core.grids import BinaryMask, Image2D, Subject
from flow_model.model import FlowPair
from prepare_data.lesions import (
    LesionParams,
    SubtleKind,
    SubtleParams,
    inject_lesion,
    inject_lesion_annotated,
    inject_subtle,
)
from prepare_data.phantoms import PhantomParams, gen_healthy_phantom, make_rng

SPLITS = ("train", "val", "test", "normal")
CONTAMINATION_STREAM = 0xC0117A
PAIR_STREAM = 0x9A125
MANIFEST_NAME = "manifest.json"
ANNOTATIONS_NAME = "annotations.csv"


class DatasetConfig(BaseModel):
    """
    Everything `make_dataset` needs, as one validated block of the
    experiment configuration
    """
    n_subjects: int = Field(100, ge=10)
    n_normal: int = Field(4, ge=0, description="Abnormality-free held-out calibration subjects")
    contamination_fraction: float = Field(0.0, ge=0, le=1)
    lesion_probability: float = Field(0.8, ge=0, le=1)
    subtle_probability: float = Field(0.6, ge=0, le=1)
    seed: int = Field(0, ge=0)
    phantom: PhantomParams = PhantomParams()
    lesion: LesionParams = LesionParams()
    subtle: SubtleParams = SubtleParams()
    subtle_kinds: List[SubtleKind] = Field(default_factory=lambda: list(SubtleKind), min_length=1)


@dataclass
class Dataset:
    """
    Subjects of every split, in index order
    """
    train: List[Subject] = field(default_factory=list)
    val: List[Subject] = field(default_factory=list)
    test: List[Subject] = field(default_factory=list)
    normal: List[Subject] = field(default_factory=list)
    seed: int = 0
    contamination_fraction: float = 0.0

    def split(self, name: str) -> List[Subject]:
        """
        Subjects of one split by name
        """
        if name not in SPLITS:
            raise ParameterError(f"Unknown split '{name}', expected one of {SPLITS}")
        return getattr(self, name)

    def subjects(self) -> List[Subject]:
        """
        All subjects, split by split
        """
        return [s for name in SPLITS for s in self.split(name)]


def split_sizes(n_subjects: int) -> Dict[str, int]:
    """
    80/10/10 split sizes: floor(0.8 n), floor(0.1 n), remainder

    Args:
        n_subjects (int): number of subjects

    Returns:
        (Dict[str, int]): size per split
    """
    n_train = (8 * n_subjects) // 10
    n_val = n_subjects // 10
    return {"train": n_train, "val": n_val, "test": n_subjects - n_train - n_val}


def _subject_id(index: int) -> str:
    return f"sub-{index:04d}"


def _make_subject(index: int,
                  split: str,
                  cfg: DatasetConfig,
                  contaminated: bool) -> Subject:
    rng = make_rng(cfg.seed, index)
    phantom_seed = int(rng.integers(2**63))
    lesion_seed = int(rng.integers(2**63))
    subtle_seed = int(rng.integers(2**63))
    kind = cfg.subtle_kinds[int(rng.integers(len(cfg.subtle_kinds)))]
    draw_lesion = rng.uniform() < cfg.lesion_probability
    draw_subtle = rng.uniform() < cfg.subtle_probability

    phantom = gen_healthy_phantom(cfg.phantom.model_copy(update={"seed": phantom_seed}))
    image, brain = phantom.image, phantom.brain_mask
    subtle = cfg.subtle.model_copy(update={"kind": kind})
    subject = Subject(id=_subject_id(index), image=image, brain_mask=brain)

    if split == "train":
        if contaminated:
            image, points = inject_subtle(image, subtle, subtle_seed, phantom.anatomy, brain)
            subject = Subject(id=subject.id, image=image, annotations=points,
                              brain_mask=brain, contaminated=True)
        return subject
    if split == "normal":
        return subject

    if not draw_lesion and not draw_subtle:
        draw_lesion = True
    points = []
    lesion_mask: Optional[BinaryMask] = None
    if draw_lesion:
        image, lesion_mask, lesion_points = inject_lesion_annotated(image, cfg.lesion,
                                                                    lesion_seed, brain)
        points.extend(lesion_points)
    if draw_subtle:
        image, subtle_points = inject_subtle(image, subtle, subtle_seed, phantom.anatomy, brain)
        points.extend(subtle_points)
    return Subject(id=subject.id, image=image, lesion_mask=lesion_mask,
                   annotations=points, brain_mask=brain)


def make_dataset_from_config(cfg: DatasetConfig) -> Dataset:
    """
    Generates all splits. Every subject is a pure function of
    (seed, subject index), so datasets that differ only in their
    contamination fraction share the same validation, test and normal
    subjects

    Args:
        cfg (DatasetConfig): validated dataset configuration

    Returns:
        (Dataset): generated subjects
    """
    if cfg.contamination_fraction < 0 or cfg.contamination_fraction > 1:
        raise ParameterError("contamination_fraction must lie in [0, 1]")
    if cfg.n_subjects < 10:
        raise ParameterError("At least 10 subjects are required")
    if cfg.subtle.contrast >= cfg.lesion.min_abs_delta:
        raise ParameterError(f"Subtle contrast {cfg.subtle.contrast} must stay below the "
                             f"minimum lesion delta {cfg.lesion.min_abs_delta}")

    sizes = split_sizes(cfg.n_subjects)
    n_contaminated = int(round(cfg.contamination_fraction * sizes["train"]))
    order = make_rng(cfg.seed, CONTAMINATION_STREAM).permutation(sizes["train"])
    contaminated = set(int(i) for i in order[:n_contaminated])

    dataset = Dataset(seed=cfg.seed, contamination_fraction=cfg.contamination_fraction)
    index = 0
    for split in ("train", "val", "test"):
        for position in range(sizes[split]):
            dataset.split(split).append(
                _make_subject(index, split, cfg, split == "train" and position in contaminated)
            )
            index += 1
    for _ in range(cfg.n_normal):
        dataset.normal.append(_make_subject(index, "normal", cfg, False))
        index += 1

    logging.info("Generated %d/%d/%d/%d train/val/test/normal subjects "
                 "(%d contaminated, seed %d)",
                 len(dataset.train), len(dataset.val), len(dataset.test),
                 len(dataset.normal), n_contaminated, cfg.seed)
    return dataset


def make_dataset(n_subjects: int,
                 phantom: PhantomParams,
                 lesion: LesionParams,
                 subtle: SubtleParams,
                 contamination_fraction: float,
                 seed: int,
                 **options: object) -> Dataset:
    """
    Keyword-friendly wrapper around `make_dataset_from_config`.
    Further DatasetConfig fields (n_normal, lesion_probability, ...)
    may be passed as keyword options

    Args:
        n_subjects (int): subjects across train/val/test
        phantom (PhantomParams): anatomy ranges
        lesion (LesionParams): lesion ranges
        subtle (SubtleParams): subtle abnormality template
        contamination_fraction (float): share of training subjects
            carrying a subtle abnormality
        seed (int): master seed

    Returns:
        (Dataset): generated subjects
    """
    if not 0.0 <= contamination_fraction <= 1.0:
        raise ParameterError("contamination_fraction must lie in [0, 1]")
    if n_subjects < 10:
        raise ParameterError("At least 10 subjects are required")
    cfg = DatasetConfig(n_subjects=n_subjects, phantom=phantom, lesion=lesion, subtle=subtle,
                        contamination_fraction=contamination_fraction, seed=seed,
                        **options)  # type: ignore[arg-type]
    return make_dataset_from_config(cfg)


def write_dataset(dataset: Dataset, out_dir: Union[str, Path]) -> Path:
    """
    Writes images, masks, annotations and the manifest. The manifest
    is the only file carrying a timestamp

    Args:
        dataset (Dataset): subjects to write
        out_dir (str | Path): destination directory, created if needed

    Returns:
        (Path): path of the manifest
    """
    out = Path(out_dir)
    for sub_dir in ("images", "masks", "brain"):
        (out / sub_dir).mkdir(parents=True, exist_ok=True)

    entries = []
    annotations = {}
    for split in SPLITS:
        for subject in dataset.split(split):
            entry = {"id": subject.id, "split": split, "contaminated": subject.contaminated,
                     "image": f"images/{subject.id}.agrd", "lesion_mask": None,
                     "brain_mask": None}
            write_grid(out / entry["image"], subject.image)
            if subject.lesion_mask is not None:
                entry["lesion_mask"] = f"masks/{subject.id}.agrd"
                write_grid(out / entry["lesion_mask"], subject.lesion_mask)
            if subject.brain_mask is not None:
                entry["brain_mask"] = f"brain/{subject.id}.agrd"
                write_grid(out / entry["brain_mask"], subject.brain_mask)
            if subject.annotations:
                annotations[subject.id] = subject.annotations
            entries.append(entry)

    write_annotations(out / ANNOTATIONS_NAME, annotations)
    manifest = {
        "created": datetime.now(timezone.utc).isoformat(),
        "seed": dataset.seed,
        "contamination_fraction": dataset.contamination_fraction,
        "splits": {split: [s.id for s in dataset.split(split)] for split in SPLITS},
        "subjects": entries,
    }
    manifest_path = out / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=4)
    logging.info("Wrote %d subjects to %s", len(entries), out)
    return manifest_path


def load_manifest(data_dir: Union[str, Path]) -> dict:
    """
    Reads the manifest of a dataset directory

    Args:
        data_dir (str | Path): dataset directory

    Returns:
        (dict): parsed manifest
    """
    path = Path(data_dir) / MANIFEST_NAME
    try:
        with open(path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError as e:
        raise OSError(f"No dataset manifest at {path}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"Invalid JSON in {path}: {e}", field="manifest") from e
    if "subjects" not in manifest:
        raise FormatError(f"{path} lists no subjects", field="subjects")
    return manifest


def _read_typed(path: Path, expected: type) -> object:
    grid = read_grid(path)
    if not isinstance(grid, expected):
        raise FormatError(f"{path} holds a {type(grid).__name__}, expected {expected.__name__}",
                          field="kind")
    return grid


def load_dataset(data_dir: Union[str, Path]) -> Dataset:
    """
    Reads a dataset written by `write_dataset`

    Args:
        data_dir (str | Path): dataset directory

    Returns:
        (Dataset): subjects of every split
    """
    root = Path(data_dir)
    manifest = load_manifest(root)
    annotations = read_annotations(root / ANNOTATIONS_NAME)
    dataset = Dataset(seed=int(manifest.get("seed", 0)),
                      contamination_fraction=float(manifest.get("contamination_fraction", 0.0)))

    for entry in manifest["subjects"]:
        image = _read_typed(root / entry["image"], Image2D)
        lesion_mask = (_read_typed(root / entry["lesion_mask"], BinaryMask)
                       if entry.get("lesion_mask") else None)
        brain_mask = (_read_typed(root / entry["brain_mask"], BinaryMask)
                      if entry.get("brain_mask") else None)
        subject = Subject(id=entry["id"], image=image,  # type: ignore[arg-type]
                          lesion_mask=lesion_mask,  # type: ignore[arg-type]
                          annotations=annotations.get(entry["id"], []),
                          brain_mask=brain_mask,  # type: ignore[arg-type]
                          contaminated=bool(entry.get("contaminated", False)))
        dataset.split(entry["split"]).append(subject)
    return dataset


def select_training_subjects(subjects: Sequence[Subject],
                             include_contaminated: bool = True,
                             max_subjects: Optional[int] = None) -> List[Subject]:
    """
    Training pool of one model variant. Subjects intersecting a lesion
    mask are always left out, contaminated subjects only on request

    Args:
        subjects (Sequence[Subject]): training split
        include_contaminated (bool): keep subjects carrying subtle
            abnormalities
        max_subjects (Optional[int]): keep only the first n subjects

    Returns:
        (List[Subject]): selected subjects
    """
    pool = [s for s in subjects
            if (s.lesion_mask is None or s.lesion_mask.area() == 0)
            and (include_contaminated or not s.contaminated)]
    if max_subjects is not None:
        pool = pool[:max_subjects]
    if not pool:
        raise ParameterError("No training subjects left after filtering")
    return pool


def make_training_pairs(subjects: Sequence[Subject],
                        lesion: LesionParams,
                        pairs_per_subject: int,
                        seed: int) -> List[FlowPair]:
    """
    Pairs every training image x1 with `pairs_per_subject` synthetically
    lesioned counterparts x0

    Args:
        subjects (Sequence[Subject]): training subjects
        lesion (LesionParams): synthetic lesion ranges
        pairs_per_subject (int): counterparts per image
        seed (int): seed of the lesion streams

    Returns:
        (List[FlowPair]): (x0 lesioned, x1 original) pairs
    """
    if pairs_per_subject < 1:
        raise ParameterError("pairs_per_subject must be at least 1")
    pairs = []
    for index, subject in enumerate(subjects):
        for repeat in range(pairs_per_subject):
            lesion_seed = int(make_rng(seed, PAIR_STREAM, index, repeat).integers(2**63))
            lesioned, _ = inject_lesion(subject.image, lesion, lesion_seed, subject.brain_mask)
            pairs.append(FlowPair(x0=lesioned, x1=subject.image))
    logging.info("Built %d training pairs from %d subjects", len(pairs), len(subjects))
    return pairs
