"""
Reads and writes the AGRD1 binary grid format:

    magic "AGRD1" (5 bytes) | kind (u8) | width (u32 LE) | height (u32 LE)
    | spacing (f64 LE) | row-major payload

The payload holds f64 LE values for images (kind 0) and anomaly maps
(kind 2), and one byte per pixel for masks (kind 1)
"""

import struct
from enum import IntEnum
from pathlib import Path
from typing import Union
import numpy as np
from core.errors import FormatError
from core.grids import AnomalyMap, BinaryMask, Image2D

MAGIC = b"AGRD1"
HEADER = struct.Struct("<5sBIId")

Grid = Union[Image2D, BinaryMask, AnomalyMap]


class GridKind(IntEnum):
    """
    Kind byte stored after the magic
    """
    IMAGE = 0
    MASK = 1
    ANOMALY_MAP = 2


def grid_kind(grid: Grid) -> GridKind:
    """
    Kind byte of an in-memory grid

    Args:
        grid (Grid): image, mask or anomaly map

    Returns:
        (GridKind): matching kind
    """
    if isinstance(grid, Image2D):
        return GridKind.IMAGE
    if isinstance(grid, BinaryMask):
        return GridKind.MASK
    if isinstance(grid, AnomalyMap):
        return GridKind.ANOMALY_MAP
    raise TypeError(f"Unsupported grid type: {type(grid).__name__}")


def encode_grid(grid: Grid) -> bytes:
    """
    Serialises a grid into AGRD1 bytes

    Args:
        grid (Grid): grid to encode

    Returns:
        (bytes): file contents
    """
    kind = grid_kind(grid)
    header = HEADER.pack(MAGIC, int(kind), grid.width, grid.height, grid.spacing)
    if kind == GridKind.MASK:
        payload = grid.values.astype(np.uint8).tobytes(order="C")
    else:
        payload = grid.values.astype("<f8").tobytes(order="C")
    return header + payload


def decode_grid(data: bytes) -> Grid:
    """
    Parses AGRD1 bytes back into a grid

    Args:
        data (bytes): file contents

    Returns:
        (Grid): decoded image, mask or anomaly map
    """
    if len(data) < len(MAGIC) or data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic", field="magic")
    if len(data) < HEADER.size:
        raise FormatError("truncated header", field="header")

    _, kind_byte, width, height, spacing = HEADER.unpack_from(data, 0)
    try:
        kind = GridKind(kind_byte)
    except ValueError as e:
        raise FormatError(f"unknown kind {kind_byte}", field="kind") from e
    if width == 0:
        raise FormatError("width must be positive", field="width")
    if height == 0:
        raise FormatError("height must be positive", field="height")
    if not np.isfinite(spacing) or spacing <= 0:
        raise FormatError(f"invalid spacing {spacing}", field="spacing")

    n_pixels = width * height
    item_size = 1 if kind == GridKind.MASK else 8
    expected = HEADER.size + n_pixels * item_size
    if len(data) < expected:
        raise FormatError(f"truncated payload: expected {expected} bytes, got {len(data)}",
                          field="payload")
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes after payload",
                          field="payload")

    raw = data[HEADER.size:]
    if kind == GridKind.MASK:
        values = np.frombuffer(raw, dtype=np.uint8).reshape(height, width)
        if np.any(values > 1):
            raise FormatError("mask bytes must be 0 or 1", field="payload")
        return BinaryMask(values.astype(bool), spacing=spacing)

    values = np.frombuffer(raw, dtype="<f8").reshape(height, width).astype(np.float64)
    if not np.all(np.isfinite(values)):
        raise FormatError("non-finite values", field="payload")
    if kind == GridKind.IMAGE:
        return Image2D(values, spacing=spacing)
    if np.any(values < 0):
        raise FormatError("negative anomaly scores", field="payload")
    return AnomalyMap(values, spacing=spacing)


def write_grid(path: Union[str, Path], grid: Grid) -> None:
    """
    Writes a grid to disk in AGRD1 format. The parent directory
    must already exist

    Args:
        path (str | Path): destination file
        grid (Grid): grid to write

    Returns:
        None
    """
    data = encode_grid(grid)
    try:
        with open(path, "wb") as f:
            f.write(data)
    except OSError as e:
        raise OSError(f"Failed to write grid to {path}: {e}") from e


def read_grid(path: Union[str, Path]) -> Grid:
    """
    Reads an AGRD1 file

    Args:
        path (str | Path): file to read

    Returns:
        (Grid): decoded grid
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise OSError(f"Failed to read grid from {path}: {e}") from e

    try:
        return decode_grid(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e.detail}", field=e.field) from e
