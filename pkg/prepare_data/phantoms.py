"""
Generates the synthetic "healthy" brain phantoms: an outer brain
ellipse, a few tissue ellipses, a dark ventricle and Gaussian noise,
z-scored over the brain pixels with an exact-zero background
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple
import numpy as np
from pydantic import BaseModel, Field, field_validator
from core.errors import ParameterError
from core.grids import BinaryMask, Image2D


def make_rng(*entropy: int) -> np.random.Generator:
    """
    Seeded PCG64 generator. Several integers can be combined, which
    is how per-subject streams are derived from a master seed

    Args:
        *entropy (int): seed words

    Returns:
        (np.random.Generator): generator backed by PCG64
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def check_interval(value: Tuple[float, float]) -> Tuple[float, float]:
    """
    Validator shared by every (low, high) range parameter

    Args:
        value (Tuple[float, float]): interval to check

    Returns:
        value (Tuple[float, float]): the same interval
    """
    low, high = value
    if low > high:
        raise ValueError(f"interval lower bound {low} exceeds upper bound {high}")
    return value


class PhantomParams(BaseModel):
    """
    Ranges the phantom anatomy is drawn from. Sizes of ellipses are
    given as fractions of the grid side
    """
    size: int = Field(32, ge=8, description="Grid side length in pixels")
    spacing: float = Field(1.0, gt=0, description="mm per pixel")
    brain_semi_axis_range: Tuple[float, float] = (0.36, 0.44)
    brain_intensity: float = 1.0
    n_tissue_ellipses: int = Field(3, ge=0)
    tissue_semi_axis_range: Tuple[float, float] = (0.06, 0.14)
    tissue_intensity_range: Tuple[float, float] = (-0.4, 0.4)
    ventricle_semi_axis_range: Tuple[float, float] = (0.07, 0.11)
    ventricle_intensity: float = -1.5
    noise_sigma: float = Field(0.05, ge=0)
    seed: int = Field(0, ge=0, lt=2**64)

    @field_validator("brain_semi_axis_range", "tissue_semi_axis_range",
                     "tissue_intensity_range", "ventricle_semi_axis_range")
    @classmethod
    def check_ranges(cls, value: Tuple[float, float]) -> Tuple[float, float]:
        """
        Rejects ranges whose lower bound exceeds the upper bound
        """
        return check_interval(value)


@dataclass(frozen=True)
class Ellipse:
    """
    Axis-aligned ellipse in pixel coordinates
    """
    center_x: float
    center_y: float
    semi_x: float
    semi_y: float
    intensity: float = 0.0

    def mask(self, width: int, height: int) -> np.ndarray:
        """
        Pixels whose centres lie inside the ellipse

        Args:
            width (int): grid width
            height (int): grid height

        Returns:
            (np.ndarray): (height, width) boolean array
        """
        rows, cols = np.mgrid[0:height, 0:width]
        return (((cols - self.center_x) / self.semi_x) ** 2
                + ((rows - self.center_y) / self.semi_y) ** 2) <= 1.0

    def scaled(self, factor: float) -> "Ellipse":
        """
        Same centre, semi-axes multiplied by `factor`
        """
        return Ellipse(self.center_x, self.center_y,
                       self.semi_x * factor, self.semi_y * factor, self.intensity)

    def fits_in(self, width: int, height: int) -> bool:
        """
        Whether the bounding box stays within the grid, whose pixels
        span -0.5 to width - 0.5 in pixel-centre coordinates
        """
        return (self.center_x - self.semi_x >= -0.5 and self.center_x + self.semi_x <= width - 0.5
                and self.center_y - self.semi_y >= -0.5
                and self.center_y + self.semi_y <= height - 0.5)


@dataclass(frozen=True)
class Anatomy:
    """
    Concrete ellipses drawn for one phantom
    """
    size: int
    brain: Ellipse
    tissues: Tuple[Ellipse, ...]
    ventricle: Ellipse

    def brain_mask(self) -> np.ndarray:
        """
        Boolean (size, size) array of brain pixels
        """
        return self.brain.mask(self.size, self.size)

    def ventricle_mask(self) -> np.ndarray:
        """
        Boolean (size, size) array of ventricle pixels inside the brain
        """
        return self.ventricle.mask(self.size, self.size) & self.brain_mask()


@dataclass(frozen=True)
class HealthyPhantom:
    """
    Rendered phantom plus the anatomy it was drawn from
    """
    image: Image2D
    anatomy: Anatomy
    brain_mask: BinaryMask


def _draw_anatomy(params: PhantomParams, rng: np.random.Generator) -> Anatomy:
    size = params.size
    middle = (size - 1) / 2.0
    jitter = 0.02 * size

    brain = Ellipse(center_x=middle + rng.uniform(-jitter, jitter),
                    center_y=middle + rng.uniform(-jitter, jitter),
                    semi_x=rng.uniform(*params.brain_semi_axis_range) * size,
                    semi_y=rng.uniform(*params.brain_semi_axis_range) * size,
                    intensity=params.brain_intensity)

    tissues: List[Ellipse] = []
    for _ in range(params.n_tissue_ellipses):
        angle = rng.uniform(0.0, 2.0 * np.pi)
        radius = rng.uniform(0.2, 0.55)
        tissues.append(Ellipse(center_x=brain.center_x + radius * brain.semi_x * np.cos(angle),
                               center_y=brain.center_y + radius * brain.semi_y * np.sin(angle),
                               semi_x=rng.uniform(*params.tissue_semi_axis_range) * size,
                               semi_y=rng.uniform(*params.tissue_semi_axis_range) * size,
                               intensity=rng.uniform(*params.tissue_intensity_range)))

    ventricle = Ellipse(center_x=brain.center_x + rng.uniform(-0.04, 0.04) * size,
                        center_y=brain.center_y + rng.uniform(-0.04, 0.04) * size,
                        semi_x=rng.uniform(*params.ventricle_semi_axis_range) * size,
                        semi_y=rng.uniform(*params.ventricle_semi_axis_range) * size,
                        intensity=params.ventricle_intensity)

    for ellipse in (brain, *tissues, ventricle):
        if ellipse.semi_x <= 0 or ellipse.semi_y <= 0:
            raise ParameterError(f"Degenerate ellipse with semi-axes "
                                 f"({ellipse.semi_x}, {ellipse.semi_y})")
        if not ellipse.fits_in(size, size):
            raise ParameterError(f"Ellipse centred at ({ellipse.center_x:.2f}, "
                                 f"{ellipse.center_y:.2f}) does not fit in a "
                                 f"{size}x{size} grid")

    return Anatomy(size=size, brain=brain, tissues=tuple(tissues), ventricle=ventricle)


def build_anatomy(params: PhantomParams) -> Anatomy:
    """
    Draws the anatomy of the phantom that `gen_healthy` would render
    for the same parameters

    Args:
        params (PhantomParams): ranges and seed

    Returns:
        (Anatomy): drawn ellipses
    """
    return _draw_anatomy(params, make_rng(params.seed))


def gen_healthy_phantom(params: PhantomParams) -> HealthyPhantom:
    """
    Renders a healthy phantom and keeps its anatomy, which the
    subtle-abnormality generators need

    Args:
        params (PhantomParams): ranges and seed

    Returns:
        (HealthyPhantom): image, anatomy and brain mask
    """
    rng = make_rng(params.seed)
    anatomy = _draw_anatomy(params, rng)
    size = params.size

    brain = anatomy.brain_mask()
    raw = np.zeros((size, size), dtype=np.float64)
    raw[brain] = anatomy.brain.intensity
    for tissue in anatomy.tissues:
        raw[tissue.mask(size, size) & brain] += tissue.intensity
    raw[anatomy.ventricle_mask()] = anatomy.ventricle.intensity
    if params.noise_sigma > 0:
        raw[brain] += rng.normal(0.0, params.noise_sigma, size=int(brain.sum()))

    values = raw[brain]
    mean = values.mean()
    std = values.std()
    if std == 0:
        raise ParameterError("Degenerate phantom: brain intensities have zero variance")

    pixels = np.zeros_like(raw)
    pixels[brain] = (values - mean) / std
    logging.debug("Rendered phantom seed=%d with %d brain pixels", params.seed, int(brain.sum()))

    return HealthyPhantom(image=Image2D(pixels, spacing=params.spacing),
                          anatomy=anatomy,
                          brain_mask=BinaryMask(brain, spacing=params.spacing))


def gen_healthy(params: PhantomParams) -> Image2D:
    """
    Healthy phantom image: exact zero outside the brain ellipse,
    brain pixels z-scored to mean 0 and standard deviation 1

    Args:
        params (PhantomParams): ranges and seed

    Returns:
        (Image2D): rendered image
    """
    return gen_healthy_phantom(params).image
