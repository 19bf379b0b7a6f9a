"""
Perturbs healthy phantoms: focal lesions (soft discs, the synthetic
counterparts used to train the flow and the test-time infarct analog)
and subtle non-lesional abnormalities (ventricle enlargement, sulcal
widening, periventricular hyposignal)
"""

import logging
from enum import Enum
from typing import List, Optional, Tuple
import numpy as np
from pydantic import BaseModel, Field, field_validator
from core.errors import GenerationError, ParameterError
from core.grids import BinaryMask, Image2D, Label, PointAnnotation
from prepare_data.phantoms import Anatomy, Ellipse, check_interval, make_rng

MAX_PLACEMENT_ATTEMPTS = 100
REFERENCE_RATER = "reference"


class LesionParams(BaseModel):
    """
    Ranges for the number, radius and intensity change of lesion blobs
    """
    count_range: Tuple[int, int] = (1, 2)
    radius_range: Tuple[float, float] = (1.0, 4.0)
    delta_range: Tuple[float, float] = (-2.5, -1.5)
    softness: float = Field(0.0, ge=0, description="Width of the linear edge falloff in pixels")

    @field_validator("count_range", "delta_range")
    @classmethod
    def check_ranges(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """
        Rejects ranges whose lower bound exceeds the upper bound
        """
        return check_interval(value)

    @field_validator("count_range")
    @classmethod
    def check_count(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        """
        Counts cannot be negative
        """
        if value[0] < 0:
            raise ValueError("lesion count cannot be negative")
        return value

    @field_validator("radius_range")
    @classmethod
    def check_radius(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """
        Radii of at least one pixel
        """
        check_interval(value)
        if value[0] < 1.0:
            raise ValueError("minimum lesion radius must be at least 1 pixel")
        return value

    @property
    def min_abs_delta(self) -> float:
        """
        Smallest absolute intensity change a lesion can apply, zero
        when the delta range straddles zero
        """
        low, high = self.delta_range
        if low <= 0 <= high:
            return 0.0
        return min(abs(low), abs(high))


class SubtleKind(str, Enum):
    """
    Non-lesional abnormality generators
    """
    VENTRICLE_ENLARGEMENT = "ventricle_enlargement"
    SULCAL_WIDENING = "sulcal_widening"
    PERIVENTRICULAR_HYPO = "periventricular_hypo"


class SubtleParams(BaseModel):
    """
    Subtle abnormality: the magnitude controls the extent of the
    altered region, the contrast is the intensity drop applied to
    every altered pixel
    """
    kind: SubtleKind = SubtleKind.VENTRICLE_ENLARGEMENT
    magnitude_range: Tuple[float, float] = (0.3, 0.6)
    contrast: float = Field(1.0, gt=0,
                            description="Intensity drop, kept below the lesion minimum delta")

    @field_validator("magnitude_range")
    @classmethod
    def check_magnitude(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """
        Magnitudes are non-negative ranges
        """
        check_interval(value)
        if value[0] < 0:
            raise ValueError("magnitude cannot be negative")
        return value


def _brain_pixels(img: Image2D, brain_mask: Optional[BinaryMask]) -> np.ndarray:
    if brain_mask is None:
        return img.pixels != 0
    img.check_geometry(brain_mask)
    return brain_mask.pixels


def _blob_weight(distance: np.ndarray, radius: float, softness: float) -> np.ndarray:
    if softness == 0:
        return (distance <= radius).astype(np.float64)
    return np.clip((radius + softness - distance) / softness, 0.0, 1.0)


def inject_lesion_annotated(img: Image2D,
                            params: LesionParams,
                            seed: int,
                            brain_mask: Optional[BinaryMask] = None
                            ) -> Tuple[Image2D, BinaryMask, List[PointAnnotation]]:
    """
    Adds lesion blobs by rejection sampling their centres until the
    whole footprint lies in brain tissue, and returns one lesion click
    at every blob centre

    Args:
        img (Image2D): healthy phantom
        params (LesionParams): lesion ranges
        seed (int): seed of the placement stream
        brain_mask (Optional[BinaryMask]): tissue mask, inferred from
            the non-zero pixels when missing

    Returns:
        image (Image2D): lesioned copy
        mask (BinaryMask): pixels changed by more than half the
            minimum delta
        points (List[PointAnnotation]): one click per blob
    """
    rng = make_rng(seed)
    brain = _brain_pixels(img, brain_mask)
    height, width = img.pixels.shape
    rows, cols = np.mgrid[0:height, 0:width]

    change = np.zeros((height, width), dtype=np.float64)
    points: List[PointAnnotation] = []
    n_blobs = int(rng.integers(params.count_range[0], params.count_range[1] + 1))

    for blob in range(n_blobs):
        radius = rng.uniform(*params.radius_range)
        delta = rng.uniform(*params.delta_range)
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            center_x = rng.uniform(0.0, width - 1.0)
            center_y = rng.uniform(0.0, height - 1.0)
            distance = np.hypot(cols - center_x, rows - center_y)
            footprint = distance <= radius + params.softness
            if footprint.any() and not np.any(footprint & ~brain):
                break
        else:
            raise GenerationError(f"No in-brain placement found for lesion {blob} "
                                  f"after {MAX_PLACEMENT_ATTEMPTS} attempts")
        change += delta * _blob_weight(distance, radius, params.softness)
        points.append(PointAnnotation(x=float(center_x), y=float(center_y),
                                      label=Label.LESION, rater=REFERENCE_RATER))

    lesioned = img.with_pixels(img.pixels + change)
    changed = np.abs(lesioned.pixels - img.pixels) > params.min_abs_delta / 2.0
    logging.debug("Injected %d lesion(s) covering %d pixels", n_blobs, int(changed.sum()))
    return lesioned, BinaryMask(changed, spacing=img.spacing), points


def inject_lesion(img: Image2D,
                  params: LesionParams,
                  seed: int,
                  brain_mask: Optional[BinaryMask] = None) -> Tuple[Image2D, BinaryMask]:
    """
    Lesioned copy of a healthy phantom and its ground-truth mask. The
    input image is left untouched

    Args:
        img (Image2D): healthy phantom
        params (LesionParams): lesion ranges
        seed (int): seed of the placement stream
        brain_mask (Optional[BinaryMask]): tissue mask

    Returns:
        (Tuple[Image2D, BinaryMask]): lesioned image and lesion mask
    """
    lesioned, mask, _ = inject_lesion_annotated(img, params, seed, brain_mask)
    return lesioned, mask


def _segment_distance(cols: np.ndarray, rows: np.ndarray,
                      start: Tuple[float, float], end: Tuple[float, float]) -> np.ndarray:
    start_x, start_y = start
    seg_x, seg_y = end[0] - start_x, end[1] - start_y
    length_sq = seg_x ** 2 + seg_y ** 2
    if length_sq == 0:
        return np.hypot(cols - start_x, rows - start_y)
    along = np.clip(((cols - start_x) * seg_x + (rows - start_y) * seg_y) / length_sq, 0.0, 1.0)
    return np.hypot(cols - (start_x + along * seg_x), rows - (start_y + along * seg_y))


def _subtle_region(anatomy: Anatomy,
                   kind: SubtleKind,
                   magnitude: float,
                   angle: float,
                   brain: np.ndarray) -> Tuple[np.ndarray, Tuple[float, float]]:
    size = anatomy.size
    rows, cols = np.mgrid[0:size, 0:size]
    ventricle = anatomy.ventricle_mask()
    outside_ventricle = brain & ~ventricle
    brain_ellipse: Ellipse = anatomy.brain
    vent: Ellipse = anatomy.ventricle

    if kind == SubtleKind.VENTRICLE_ENLARGEMENT:
        nominal = (vent.center_x, vent.center_y)
        region = vent.scaled(1.0 + magnitude).mask(size, size) & outside_ventricle
    elif kind == SubtleKind.SULCAL_WIDENING:
        direction = (np.cos(angle), np.sin(angle))
        start = (brain_ellipse.center_x + brain_ellipse.semi_x * direction[0],
                 brain_ellipse.center_y + brain_ellipse.semi_y * direction[1])
        length = (0.2 + 0.6 * magnitude) * min(brain_ellipse.semi_x, brain_ellipse.semi_y)
        end = (start[0] - length * direction[0], start[1] - length * direction[1])
        nominal = ((start[0] + end[0]) / 2.0, (start[1] + end[1]) / 2.0)
        half_width = 0.5 + 1.5 * magnitude
        region = (_segment_distance(cols, rows, start, end) <= half_width) & outside_ventricle
    elif kind == SubtleKind.PERIVENTRICULAR_HYPO:
        nominal = (vent.center_x + (vent.semi_x + 1.5) * np.cos(angle),
                   vent.center_y + (vent.semi_y + 1.5) * np.sin(angle))
        radius = 0.8 + 2.5 * magnitude
        region = (np.hypot(cols - nominal[0], rows - nominal[1]) <= radius) & outside_ventricle
    else:
        raise ParameterError(f"Unknown subtle abnormality kind: {kind}")

    if magnitude <= 0:
        region = np.zeros_like(region)
    return region, nominal


def representative_point(region: np.ndarray,
                         fallback: Tuple[float, float]) -> Tuple[float, float]:
    """
    Click position for an altered region: its centroid when that
    rounds into the region, else the region pixel closest to the
    centroid, else the fallback when the region is empty

    Args:
        region (np.ndarray): boolean (height, width) array
        fallback (Tuple[float, float]): (x, y) used for empty regions

    Returns:
        (Tuple[float, float]): (x, y) click position
    """
    height, width = region.shape
    rows, cols = np.nonzero(region)
    if rows.size == 0:
        return (float(np.clip(fallback[0], 0.0, width - 1.0)),
                float(np.clip(fallback[1], 0.0, height - 1.0)))
    centroid_x, centroid_y = float(cols.mean()), float(rows.mean())
    if region[int(np.floor(centroid_y + 0.5)), int(np.floor(centroid_x + 0.5))]:
        return centroid_x, centroid_y
    nearest = int(np.argmin(np.hypot(cols - centroid_x, rows - centroid_y)))
    return float(cols[nearest]), float(rows[nearest])


def inject_subtle(img: Image2D,
                  params: SubtleParams,
                  seed: int,
                  anatomy: Anatomy,
                  brain_mask: Optional[BinaryMask] = None) -> Tuple[Image2D, List[PointAnnotation]]:
    """
    Adds one subtle non-lesional abnormality, lowering every altered
    pixel by `params.contrast`, and returns its reference click

    Args:
        img (Image2D): healthy phantom
        params (SubtleParams): kind, magnitude range and contrast
        seed (int): seed of the magnitude and orientation draws
        anatomy (Anatomy): ellipses the phantom was rendered from
        brain_mask (Optional[BinaryMask]): tissue mask

    Returns:
        image (Image2D): altered copy
        points (List[PointAnnotation]): the non-lesional click
    """
    if not isinstance(params.kind, SubtleKind):
        raise ParameterError(f"Unknown subtle abnormality kind: {params.kind}")
    if anatomy.size != img.width or anatomy.size != img.height:
        raise ParameterError("Anatomy does not match the image size")

    rng = make_rng(seed)
    magnitude = rng.uniform(*params.magnitude_range)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    brain = _brain_pixels(img, brain_mask)

    region, nominal = _subtle_region(anatomy, params.kind, magnitude, angle, brain)
    x, y = representative_point(region, nominal)
    altered = img.with_pixels(np.where(region, img.pixels - params.contrast, img.pixels))
    logging.debug("Injected %s (magnitude %.3f) over %d pixels",
                  params.kind.value, magnitude, int(region.sum()))

    return altered, [PointAnnotation(x=x, y=y, label=Label.NON_LESIONAL, rater=REFERENCE_RATER)]
