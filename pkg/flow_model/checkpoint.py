"""
Reads and writes AFLW1 model checkpoints:

    magic "AFLW1" | n_widths (u32 LE) | n_time_pairs (u32 LE)
    | widths (n_widths x u32 LE) | parameters (f64 LE)

Parameters follow `FlowModel.parameters()`: per layer, the weight
matrix row-major and then the bias vector
"""

import struct
from pathlib import Path
from typing import Union
import numpy as np
from core.errors import FormatError, NumericError, ShapeError
from flow_model.model import FlowModel

MAGIC = b"AFLW1"
COUNTS = struct.Struct("<II")


def encode_model(model: FlowModel) -> bytes:
    """
    Serialises a model into AFLW1 bytes
    """
    widths = np.asarray(model.widths, dtype="<u4").tobytes()
    return (MAGIC + COUNTS.pack(len(model.widths), model.n_time_pairs) + widths
            + model.parameters().astype("<f8").tobytes())


def decode_model(data: bytes) -> FlowModel:
    """
    Parses AFLW1 bytes back into a model

    Args:
        data (bytes): checkpoint contents

    Returns:
        (FlowModel): decoded model
    """
    if data[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic", field="magic")
    offset = len(MAGIC)
    if len(data) < offset + COUNTS.size:
        raise FormatError("truncated header", field="header")
    n_widths, n_time_pairs = COUNTS.unpack_from(data, offset)
    offset += COUNTS.size
    if n_widths < 2:
        raise FormatError(f"a model needs at least 2 layer widths, got {n_widths}",
                          field="widths")
    if len(data) < offset + 4 * n_widths:
        raise FormatError("truncated layer widths", field="widths")
    widths = tuple(int(w) for w in np.frombuffer(data, dtype="<u4", count=n_widths,
                                                 offset=offset))
    offset += 4 * n_widths
    if any(w == 0 for w in widths):
        raise FormatError("layer widths must be positive", field="widths")

    n_params = sum(widths[i + 1] * widths[i] + widths[i + 1] for i in range(len(widths) - 1))
    expected = offset + 8 * n_params
    if len(data) != expected:
        raise FormatError(f"expected {expected} bytes for widths {list(widths)}, "
                          f"got {len(data)}", field="parameters")
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(np.float64)

    weights, biases = [], []
    cursor = 0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(flat[cursor:cursor + fan_in * fan_out].reshape(fan_out, fan_in))
        cursor += fan_in * fan_out
        biases.append(flat[cursor:cursor + fan_out])
        cursor += fan_out
    try:
        return FlowModel(widths, tuple(weights), tuple(biases), n_time_pairs)
    except (ShapeError, NumericError) as e:
        raise FormatError(str(e), field="parameters") from e


def save_model(path: Union[str, Path], model: FlowModel) -> None:
    """
    Writes a model checkpoint

    Args:
        path (str | Path): destination file
        model (FlowModel): model to persist

    Returns:
        None
    """
    try:
        with open(path, "wb") as f:
            f.write(encode_model(model))
    except OSError as e:
        raise OSError(f"Failed to write model to {path}: {e}") from e


def load_model(path: Union[str, Path]) -> FlowModel:
    """
    Reads a model checkpoint

    Args:
        path (str | Path): checkpoint file

    Returns:
        (FlowModel): stored model
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise OSError(f"Failed to read model from {path}: {e}") from e
    try:
        return decode_model(data)
    except FormatError as e:
        raise FormatError(f"{path}: {e.detail}", field=e.field) from e
