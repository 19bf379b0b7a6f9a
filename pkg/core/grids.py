"""
Grid and annotation types used by every other package. Grids are
row-major with the origin at the top-left corner, x is the column
and y is the row
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple
import numpy as np
from core.errors import ParameterError, ShapeError


class _Grid:
    """
    Shared behaviour of the three grid types: geometry checks and
    read-only storage of the (height, width) array
    """

    values: np.ndarray
    spacing: float

    @property
    def width(self) -> int:
        """
        Number of columns
        """
        return int(self.values.shape[1])

    @property
    def height(self) -> int:
        """
        Number of rows
        """
        return int(self.values.shape[0])

    @property
    def geometry(self) -> Tuple[int, int, float]:
        """
        (width, height, spacing) triple that must match for any
        cross-grid operation
        """
        return self.width, self.height, self.spacing

    def check_geometry(self, other: "_Grid") -> None:
        """
        Raises a ShapeError when the two grids do not share
        width, height and spacing

        Args:
            other (_Grid): grid to compare against

        Returns:
            None
        """
        if self.geometry != other.geometry:
            raise ShapeError(f"Geometry mismatch: {self.geometry} vs {other.geometry}")

    def __eq__(self, other: object) -> bool:
        if type(self) is not type(other):
            return NotImplemented
        assert isinstance(other, _Grid)
        return (self.geometry == other.geometry
                and self.values.dtype == other.values.dtype
                and self.values.tobytes() == other.values.tobytes())

    def __hash__(self) -> int:
        return hash((type(self).__name__, self.geometry, self.values.tobytes()))


def _freeze(array: np.ndarray, dtype: type) -> np.ndarray:
    """
    Copies the array into a C-contiguous read-only 2D array of the
    requested dtype

    Args:
        array (np.ndarray): input values
        dtype (type): numpy dtype of the stored copy

    Returns:
        frozen (np.ndarray): read-only copy
    """
    frozen = np.array(array, dtype=dtype, order="C", copy=True)
    if frozen.ndim != 2 or frozen.shape[0] < 1 or frozen.shape[1] < 1:
        raise ShapeError(f"Grid must be a non-empty 2D array, got shape {frozen.shape}")
    frozen.flags.writeable = False
    return frozen


def _check_spacing(spacing: float) -> float:
    spacing = float(spacing)
    if not math.isfinite(spacing) or spacing <= 0:
        raise ParameterError(f"Spacing must be a positive finite number, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Image2D(_Grid):
    """
    Z-score normalised intensity image, stored as a (height, width)
    float64 array
    """
    pixels: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        pixels = _freeze(self.pixels, np.float64)
        if not np.all(np.isfinite(pixels)):
            raise ParameterError("Image pixels must be finite")
        object.__setattr__(self, "pixels", pixels)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def values(self) -> np.ndarray:  # type: ignore[override]
        return self.pixels

    def flatten(self) -> np.ndarray:
        """
        Row-major copy of the pixels as a 1D vector

        Returns:
            (np.ndarray): vector of length width * height
        """
        return self.pixels.reshape(-1).copy()

    def with_pixels(self, pixels: np.ndarray) -> "Image2D":
        """
        New image with the same geometry and the given pixels, which
        may be flat or 2D

        Args:
            pixels (np.ndarray): replacement values

        Returns:
            (Image2D): new image
        """
        pixels = np.asarray(pixels, dtype=np.float64)
        if pixels.size != self.width * self.height:
            raise ShapeError(f"Expected {self.width * self.height} pixels, got {pixels.size}")
        return Image2D(pixels.reshape(self.height, self.width), spacing=self.spacing)


@dataclass(frozen=True, eq=False)
class BinaryMask(_Grid):
    """
    Boolean label grid (lesion masks, brain masks, binarised maps)
    """
    pixels: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pixels", _freeze(self.pixels, np.bool_))
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def values(self) -> np.ndarray:  # type: ignore[override]
        return self.pixels

    def area(self) -> int:
        """
        Number of true pixels

        Returns:
            (int): pixel count
        """
        return int(np.count_nonzero(self.pixels))

    @classmethod
    def empty(cls, width: int, height: int, spacing: float = 1.0) -> "BinaryMask":
        """
        All-false mask of the given geometry
        """
        return cls(np.zeros((height, width), dtype=bool), spacing=spacing)


@dataclass(frozen=True, eq=False)
class AnomalyMap(_Grid):
    """
    Non-negative per-pixel anomaly scores
    """
    scores: np.ndarray
    spacing: float = 1.0

    def __post_init__(self) -> None:
        scores = _freeze(self.scores, np.float64)
        if not np.all(np.isfinite(scores)):
            raise ParameterError("Anomaly scores must be finite")
        if np.any(scores < 0):
            raise ParameterError("Anomaly scores must be non-negative")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def values(self) -> np.ndarray:  # type: ignore[override]
        return self.scores

    def binarize(self, threshold: float) -> BinaryMask:
        """
        Mask of the pixels scoring at least `threshold`

        Args:
            threshold (float): inclusive cutoff

        Returns:
            (BinaryMask): binarised map
        """
        return BinaryMask(self.scores >= threshold, spacing=self.spacing)


class Label(str, Enum):
    """
    Kind of finding marked by a rater click. The values are the
    spellings used in annotation files
    """
    LESION = "lesion"
    NON_LESIONAL = "nonlesion"


def round_half_up(value: float) -> int:
    """
    Rounds to the nearest integer with halves going up, so that a
    click at x.5 always lands on the same pixel

    Args:
        value (float): coordinate

    Returns:
        (int): pixel index
    """
    return int(math.floor(value + 0.5))


@dataclass(frozen=True)
class PointAnnotation:
    """
    A rater click in sub-pixel image coordinates
    """
    x: float
    y: float
    label: Label
    rater: Optional[str] = None
    subject_id: Optional[str] = None

    def pixel(self) -> Tuple[int, int]:
        """
        Pixel (column, row) the click rounds into

        Returns:
            (Tuple[int, int]): column and row indices
        """
        return round_half_up(self.x), round_half_up(self.y)

    def check_inside(self, width: int, height: int) -> None:
        """
        Raises a ParameterError when the click lies outside an image
        of the given size

        Args:
            width (int): image width
            height (int): image height

        Returns:
            None
        """
        if not (0 <= self.x < width and 0 <= self.y < height):
            raise ParameterError(
                f"Annotation ({self.x}, {self.y}) outside a {width}x{height} image"
            )


@dataclass
class Subject:
    """
    One synthetic subject: image, optional ground truth, clicks and
    the bookkeeping flags used when building training sets
    """
    id: str
    image: Image2D
    lesion_mask: Optional[BinaryMask] = None
    annotations: List[PointAnnotation] = field(default_factory=list)
    brain_mask: Optional[BinaryMask] = None
    contaminated: bool = False

    def __post_init__(self) -> None:
        for mask in (self.lesion_mask, self.brain_mask):
            if mask is not None:
                self.image.check_geometry(mask)
        for point in self.annotations:
            point.check_inside(self.image.width, self.image.height)

    def points(self, label: Optional[Label] = None) -> List[PointAnnotation]:
        """
        Annotations of this subject, optionally restricted to a label

        Args:
            label (Optional[Label]): label to keep, or None for all

        Returns:
            (List[PointAnnotation]): matching clicks
        """
        if label is None:
            return list(self.annotations)
        return [p for p in self.annotations if p.label == label]
