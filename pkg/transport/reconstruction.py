"""
Counterfactual reconstruction: explicit Euler integration of the
learned field from the pathological (t = 0) to the healthy (t = 1)
end, and the anomaly map derived from it
"""

import logging
from typing import Sequence, List
import numpy as np
from pydantic import BaseModel, Field
from core.errors import NumericError, ShapeError
from core.grids import AnomalyMap, Image2D
from flow_model.model import FlowModel, forward_batch


class TransportConfig(BaseModel):
    """
    Number of Euler steps between t = 0 and t = 1
    """
    steps: int = Field(5, ge=1)


def reconstruct_batch(model: FlowModel,
                      images: Sequence[Image2D],
                      cfg: TransportConfig) -> List[Image2D]:
    """
    Transports several images at once; each row is integrated
    independently, so the result equals per-image `reconstruct`

    Args:
        model (FlowModel): velocity network
        images (Sequence[Image2D]): inputs sharing one geometry
        cfg (TransportConfig): step count

    Returns:
        (List[Image2D]): healthy counterfactuals, in input order
    """
    if not images:
        return []
    for img in images:
        if img.pixels.size != model.n_pixels:
            raise ShapeError(f"Image of {img.width}x{img.height} pixels does not match "
                             f"a model of {model.n_pixels} inputs")
    state = np.stack([img.flatten() for img in images])
    dt = 1.0 / cfg.steps
    for k in range(cfg.steps):
        velocity, _ = forward_batch(model, state, np.full(len(images), k * dt))
        state = state + dt * velocity
        if not np.all(np.isfinite(state)):
            raise NumericError(f"Non-finite state at Euler step {k}", step=k)
    return [img.with_pixels(row.reshape(img.pixels.shape)) for img, row in zip(images, state)]


def reconstruct(model: FlowModel, img: Image2D, cfg: TransportConfig) -> Image2D:
    """
    Healthy counterfactual of one image:
    x <- x + v(x, k / steps) / steps for k = 0 .. steps - 1

    Args:
        model (FlowModel): velocity network
        img (Image2D): input image
        cfg (TransportConfig): step count

    Returns:
        (Image2D): reconstruction with the input geometry
    """
    return reconstruct_batch(model, [img], cfg)[0]


def anomaly_map(input_img: Image2D, recon: Image2D) -> AnomalyMap:
    """
    Absolute per-pixel difference between an image and its
    reconstruction

    Args:
        input_img (Image2D): original image
        recon (Image2D): counterfactual reconstruction

    Returns:
        (AnomalyMap): |input - recon|
    """
    input_img.check_geometry(recon)
    return AnomalyMap(np.abs(input_img.pixels - recon.pixels), spacing=input_img.spacing)


def anomaly_maps(model: FlowModel,
                 images: Sequence[Image2D],
                 cfg: TransportConfig) -> List[AnomalyMap]:
    """
    Reconstructs every image and returns the anomaly maps in order
    """
    recons = reconstruct_batch(model, images, cfg)
    logging.info("Reconstructed %d images with %d Euler steps", len(recons), cfg.steps)
    return [anomaly_map(img, recon) for img, recon in zip(images, recons)]
