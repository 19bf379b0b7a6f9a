"""
Mini-batch training of the velocity network on (lesioned, healthy)
pairs with plain or momentum SGD
"""

import logging
import math
from enum import Enum
from typing import List, Sequence, Tuple
import numpy as np
from pydantic import BaseModel, Field
from tqdm import tqdm
from core.errors import NumericError, ParameterError, ShapeError
from flow_model.model import FlowModel, FlowPair, batch_loss


class Optimizer(str, Enum):
    """
    Parameter update rules
    """
    SGD = "sgd"
    SGD_MOMENTUM = "sgd_momentum"


class TrainConfig(BaseModel):
    """
    Optimisation settings of one training run
    """
    learning_rate: float = Field(1e-3, gt=0)
    epochs: int = Field(200, ge=0)
    batch_size: int = Field(30, ge=1)
    t_samples: int = Field(1, ge=1, description="Times drawn per pair per step")
    seed: int = Field(0, ge=0)
    optimizer: Optimizer = Optimizer.SGD_MOMENTUM
    momentum: float = Field(0.9, ge=0, lt=1)
    divergence_limit: float = Field(1e6, gt=0)
    log_every: int = Field(50, ge=1, description="Epoch interval of the progress log lines")
    progress: bool = False


def _stack(pairs: Sequence[FlowPair], n_pixels: int) -> Tuple[np.ndarray, np.ndarray]:
    x0 = np.stack([p.x0.flatten() for p in pairs])
    x1 = np.stack([p.x1.flatten() for p in pairs])
    if x0.shape[1] != n_pixels:
        raise ShapeError(f"Pairs have {x0.shape[1]} pixels, model expects {n_pixels}")
    return x0, x1


def train(model: FlowModel,
          pairs: Sequence[FlowPair],
          config: TrainConfig) -> Tuple[FlowModel, List[float]]:
    """
    Fits the velocity field to the straight paths between each
    lesioned image and its healthy original. Every epoch visits the
    pairs in a seeded random order; each visit draws `t_samples`
    uniform times

    Args:
        model (FlowModel): starting model, left untouched
        pairs (Sequence[FlowPair]): training pairs
        config (TrainConfig): optimisation settings

    Returns:
        model (FlowModel): trained model
        history (List[float]): mean per-sample loss of every epoch
    """
    if not pairs:
        raise ParameterError("Training needs at least one pair")
    x0_all, x1_all = _stack(pairs, model.n_pixels)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed])))

    params = model.parameters().copy()
    velocity = np.zeros_like(params)
    history: List[float] = []

    for epoch in tqdm(range(config.epochs), desc="Training", disable=not config.progress):
        order = rng.permutation(len(pairs))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = np.repeat(order[start:start + config.batch_size], config.t_samples)
            t = rng.uniform(0.0, 1.0, size=batch.size)
            try:
                losses, gradients = batch_loss(model, x0_all[batch], x1_all[batch], t)
            except NumericError as e:
                raise NumericError(f"Training diverged at epoch {epoch}: {e}", epoch=epoch) from e
            epoch_losses.append(losses)

            grad = gradients.flatten()
            if config.optimizer == Optimizer.SGD_MOMENTUM:
                velocity = config.momentum * velocity + grad
                params = params - config.learning_rate * velocity
            else:
                params = params - config.learning_rate * grad
            if not np.all(np.isfinite(params)):
                raise NumericError(f"Non-finite parameters at epoch {epoch}", epoch=epoch)
            model = model.with_parameters(params)

        mean_loss = float(np.concatenate(epoch_losses).mean())
        if not math.isfinite(mean_loss) or mean_loss > config.divergence_limit:
            raise NumericError(f"Training diverged at epoch {epoch} "
                               f"with mean loss {mean_loss:.6g}", epoch=epoch)
        history.append(mean_loss)
        if epoch % config.log_every == 0 or epoch == config.epochs - 1:
            logging.info("Epoch %d/%d: mean loss %.6f", epoch + 1, config.epochs, mean_loss)

    return model, history
