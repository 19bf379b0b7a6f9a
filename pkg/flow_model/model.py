"""
Velocity-field network of the rectified flow: a fully connected tanh
network fed with the flattened image and sinusoidal time features
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple
import numpy as np
from core.errors import NumericError, ParameterError, ShapeError
from core.grids import Image2D

DEFAULT_TIME_PAIRS = 4


@dataclass(frozen=True)
class FlowPair:
    """
    Training pair: x0 is the synthetically lesioned image, x1 the
    healthy original it must be transported back to
    """
    x0: Image2D
    x1: Image2D

    def __post_init__(self) -> None:
        self.x0.check_geometry(self.x1)

    @property
    def target_velocity(self) -> np.ndarray:
        """
        Constant velocity x1 - x0 of the straight path, flattened
        """
        return self.x1.flatten() - self.x0.flatten()

    def interpolate(self, t: float) -> np.ndarray:
        """
        Flattened point t * x1 + (1 - t) * x0 on the straight path
        """
        return t * self.x1.flatten() + (1.0 - t) * self.x0.flatten()


@dataclass(frozen=True)
class FlowModel:
    """
    Layer widths run from the input (pixels plus 2 * n_time_pairs time
    features) to the output (pixels). weights[l] has shape
    (widths[l + 1], widths[l])
    """
    widths: Tuple[int, ...]
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    n_time_pairs: int = DEFAULT_TIME_PAIRS

    def __post_init__(self) -> None:
        if len(self.widths) < 2 or any(w <= 0 for w in self.widths):
            raise ShapeError(f"Invalid layer widths {list(self.widths)}")
        if self.n_time_pairs < 0:
            raise ParameterError("n_time_pairs cannot be negative")
        if self.widths[0] != self.widths[-1] + 2 * self.n_time_pairs:
            raise ShapeError(f"Input width {self.widths[0]} must equal output width "
                             f"{self.widths[-1]} plus {2 * self.n_time_pairs} time features")
        if len(self.weights) != len(self.widths) - 1 or len(self.biases) != len(self.weights):
            raise ShapeError("One weight matrix and bias vector is needed per layer")
        for layer, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            expected = (self.widths[layer + 1], self.widths[layer])
            if weight.shape != expected or bias.shape != (expected[0],):
                raise ShapeError(f"Layer {layer} has weights {weight.shape} and bias "
                                 f"{bias.shape}, expected {expected} and ({expected[0]},)")
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                raise NumericError(f"Layer {layer} holds non-finite parameters")
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        object.__setattr__(self, "biases", tuple(_frozen(b) for b in self.biases))

    @property
    def n_pixels(self) -> int:
        """
        Size of the flattened image the model transports
        """
        return self.widths[-1]

    @property
    def n_parameters(self) -> int:
        """
        Total number of scalar parameters
        """
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> np.ndarray:
        """
        All parameters as one vector, layer by layer: weights row-major
        then biases
        """
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(self.weights, self.biases)])

    def with_parameters(self, flat: np.ndarray) -> "FlowModel":
        """
        Model of the same architecture holding the given parameter
        vector, laid out as `parameters()` returns it

        Args:
            flat (np.ndarray): parameter vector

        Returns:
            (FlowModel): new model
        """
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.n_parameters,):
            raise ShapeError(f"Expected {self.n_parameters} parameters, got {flat.shape}")
        weights, biases = [], []
        offset = 0
        for weight, bias in zip(self.weights, self.biases):
            weights.append(flat[offset:offset + weight.size].reshape(weight.shape))
            offset += weight.size
            biases.append(flat[offset:offset + bias.size])
            offset += bias.size
        return FlowModel(self.widths, tuple(weights), tuple(biases), self.n_time_pairs)


@dataclass(frozen=True)
class Gradients:
    """
    Loss gradients, shaped like the model parameters
    """
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]

    def flatten(self) -> np.ndarray:
        """
        Gradient vector in the layout of `FlowModel.parameters()`
        """
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in
                               zip(self.weights, self.biases)])


def _frozen(array: np.ndarray) -> np.ndarray:
    copy = np.array(array, dtype=np.float64, copy=True)
    copy.setflags(write=False)
    return copy


def time_features(t: np.ndarray, n_pairs: int) -> np.ndarray:
    """
    Sinusoidal embedding (sin, cos) of 2^k * pi * t for k < n_pairs

    Args:
        t (np.ndarray): times, shape (batch,)
        n_pairs (int): number of frequencies

    Returns:
        (np.ndarray): (batch, 2 * n_pairs) features
    """
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    if n_pairs == 0:
        return np.zeros((t.shape[0], 0))
    angles = t * (np.pi * 2.0 ** np.arange(n_pairs))
    features = np.empty((t.shape[0], 2 * n_pairs))
    features[:, 0::2] = np.sin(angles)
    features[:, 1::2] = np.cos(angles)
    return features


def init_flow_model(n_pixels: int,
                    hidden: Sequence[int],
                    seed: int,
                    n_time_pairs: int = DEFAULT_TIME_PAIRS,
                    zero_output: bool = True) -> FlowModel:
    """
    Glorot-uniform hidden layers with zero biases. With `zero_output`
    the last layer starts at zero, so the initial field is v = 0 and
    transport starts as the identity

    Args:
        n_pixels (int): flattened image size
        hidden (Sequence[int]): hidden layer widths
        seed (int): seed of the initialisation stream
        n_time_pairs (int): sinusoidal time frequencies
        zero_output (bool): zero the last layer

    Returns:
        (FlowModel): initialised model
    """
    if n_pixels <= 0 or any(h <= 0 for h in hidden):
        raise ParameterError("Layer widths must be positive")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
    widths = (n_pixels + 2 * n_time_pairs, *hidden, n_pixels)
    weights, biases = [], []
    for layer in range(len(widths) - 1):
        fan_in, fan_out = widths[layer], widths[layer + 1]
        if zero_output and layer == len(widths) - 2:
            weights.append(np.zeros((fan_out, fan_in)))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return FlowModel(widths, tuple(weights), tuple(biases), n_time_pairs)


def _inputs(model: FlowModel, x: np.ndarray, t: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != model.n_pixels:
        raise ShapeError(f"Expected inputs of length {model.n_pixels}, got shape {x.shape}")
    if t.shape != (x.shape[0],):
        raise ShapeError(f"Expected {x.shape[0]} times, got shape {t.shape}")
    if np.any((t < 0) | (t > 1)):
        raise ParameterError("t must lie in [0, 1]")
    return np.hstack([x, time_features(t, model.n_time_pairs)])


def forward_batch(model: FlowModel,
                  x: np.ndarray,
                  t: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """
    Velocities for a batch, keeping every layer activation for the
    backward pass

    Args:
        model (FlowModel): velocity network
        x (np.ndarray): (batch, n_pixels) flattened states
        t (np.ndarray): (batch,) times in [0, 1]

    Returns:
        velocities (np.ndarray): (batch, n_pixels)
        activations (List[np.ndarray]): network input then the
            output of every hidden layer
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    activations = [_inputs(model, x, t)]
    last = len(model.weights) - 1
    for layer, (weight, bias) in enumerate(zip(model.weights, model.biases)):
        z = activations[-1] @ weight.T + bias
        if layer == last:
            return z, activations
        activations.append(np.tanh(z))
    raise ShapeError("Model has no layers")


def forward(model: FlowModel, x: np.ndarray, t: float) -> np.ndarray:
    """
    Velocity v(x, t) for one flattened image

    Args:
        model (FlowModel): velocity network
        x (np.ndarray): flattened image of length n_pixels
        t (float): time in [0, 1]

    Returns:
        (np.ndarray): velocity of length n_pixels
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError(f"Expected a flat vector, got shape {x.shape}")
    velocity, _ = forward_batch(model, x[np.newaxis, :], np.array([t], dtype=np.float64))
    return velocity[0]


def backward_batch(model: FlowModel,
                   activations: List[np.ndarray],
                   output_grad: np.ndarray) -> Gradients:
    """
    Backpropagates dL/dv through the network

    Args:
        model (FlowModel): velocity network
        activations (List[np.ndarray]): from `forward_batch`
        output_grad (np.ndarray): (batch, n_pixels) dL/dv

    Returns:
        (Gradients): dL/dparameters summed over the batch
    """
    weight_grads: List[np.ndarray] = [np.empty(0)] * len(model.weights)
    bias_grads: List[np.ndarray] = [np.empty(0)] * len(model.weights)
    delta = output_grad
    for layer in range(len(model.weights) - 1, -1, -1):
        weight_grads[layer] = delta.T @ activations[layer]
        bias_grads[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ model.weights[layer]) * (1.0 - activations[layer] ** 2)
    return Gradients(tuple(weight_grads), tuple(bias_grads))


def batch_loss(model: FlowModel,
               x0: np.ndarray,
               x1: np.ndarray,
               t: np.ndarray) -> Tuple[np.ndarray, Gradients]:
    """
    Rectified-flow loss ||(x1 - x0) - v(xt, t)||^2 per sample and its
    gradient averaged over the batch

    Args:
        model (FlowModel): velocity network
        x0 (np.ndarray): (batch, n_pixels) lesioned images
        x1 (np.ndarray): (batch, n_pixels) healthy images
        t (np.ndarray): (batch,) times

    Returns:
        losses (np.ndarray): (batch,) per-sample losses
        gradients (Gradients): gradient of the mean loss
    """
    t = np.asarray(t, dtype=np.float64)
    xt = t[:, np.newaxis] * x1 + (1.0 - t[:, np.newaxis]) * x0
    velocity, activations = forward_batch(model, xt, t)
    residual = (x1 - x0) - velocity
    losses = np.sum(residual ** 2, axis=1)
    if not np.all(np.isfinite(losses)):
        raise NumericError("Non-finite rectified-flow loss")
    gradients = backward_batch(model, activations, -2.0 * residual / x0.shape[0])
    if not all(np.all(np.isfinite(g)) for g in (*gradients.weights, *gradients.biases)):
        raise NumericError("Non-finite gradient")
    return losses, gradients


def rf_loss(model: FlowModel, pair: FlowPair, t: float) -> Tuple[float, Gradients]:
    """
    Loss of one pair at one time and its parameter gradients

    Args:
        model (FlowModel): velocity network
        pair (FlowPair): lesioned and healthy image
        t (float): time in [0, 1]

    Returns:
        loss (float): squared error of the predicted velocity
        gradients (Gradients): dloss/dparameters
    """
    if pair.x0.pixels.size != model.n_pixels:
        raise ShapeError(f"Pair has {pair.x0.pixels.size} pixels, model expects "
                         f"{model.n_pixels}")
    losses, gradients = batch_loss(model, pair.x0.flatten()[np.newaxis, :],
                                   pair.x1.flatten()[np.newaxis, :],
                                   np.array([t], dtype=np.float64))
    return float(losses[0]), gradients
