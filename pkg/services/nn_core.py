"""
Minimal neural network engine for the structured-prediction crack network.

Implements exactly the layer set the network needs (3x3 convolution, dense, ReLU,
sigmoid, inverted dropout, flatten), the per-patch binary cross entropy with an L2
weight penalty, analytic backpropagation and momentum SGD. Activations are numpy
arrays laid out as (N, H, W, C); single samples (H, W, C) are accepted everywhere a
batch is.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from models.network import LayerKind, NetworkParams, NetworkSpec, OUTPUT_UNITS, ParamKey, TrainConfig
from utils.errors import ConfigError, NumericError, ShapeError, StateError

logger = logging.getLogger("nn_core")

CLAMP_EPS = 1e-7
TRAINING = "training"
INFERENCE = "inference"


def conv2d_forward(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray, padding: int = 1) -> np.ndarray:
    """
    Zero-padded, stride-1 convolution

    Args:
        x: Input of shape (H, W, C) or (N, H, W, C)
        kernels: Kernel bank of shape (K, kh, kw, C)
        bias: Bias of shape (K,)
        padding: Zero padding on every border

    Returns:
        Output of shape (H', W', K) (or batched), H' = H + 2*padding - kh + 1
    """
    batched = x.ndim == 4
    xb = x if batched else x[None]
    if xb.ndim != 4 or kernels.ndim != 4 or xb.shape[-1] != kernels.shape[-1]:
        raise ShapeError(f"Convolution input {x.shape} does not match kernels {kernels.shape}")
    if bias.shape != (kernels.shape[0],):
        raise ShapeError(f"Convolution bias {bias.shape} does not match {kernels.shape[0]} kernels")
    k, kh, kw, _ = kernels.shape
    padded = np.pad(xb, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out_h = padded.shape[1] - kh + 1
    out_w = padded.shape[2] - kw + 1
    out = np.empty((xb.shape[0], out_h, out_w, k), dtype=np.result_type(xb, kernels))
    out[...] = bias
    for dy in range(kh):
        for dx in range(kw):
            window = padded[:, dy:dy + out_h, dx:dx + out_w, :]
            out += window @ kernels[:, dy, dx, :].T
    return out if batched else out[0]


def conv2d_backward(
    x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray, padding: int = 1
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of conv2d_forward with respect to input, kernels and bias (batched input)"""
    k, kh, kw, c = kernels.shape
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    out_h, out_w = grad_out.shape[1:3]
    grad_padded = np.zeros_like(padded)
    grad_kernels = np.empty_like(kernels)
    flat_grad = grad_out.reshape(-1, k)
    for dy in range(kh):
        for dx in range(kw):
            window = padded[:, dy:dy + out_h, dx:dx + out_w, :].reshape(-1, c)
            grad_kernels[:, dy, dx, :] = flat_grad.T @ window
            grad_padded[:, dy:dy + out_h, dx:dx + out_w, :] += grad_out @ kernels[:, dy, dx, :]
    grad_bias = flat_grad.sum(axis=0)
    h, w = x.shape[1:3]
    grad_x = grad_padded[:, padding:padding + h, padding:padding + w, :]
    return grad_x, grad_kernels, grad_bias


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, batched: bool = False) -> np.ndarray:
    """flatten(x) . W + b; with ``batched`` the leading axis is kept as the sample axis"""
    flat = x.reshape(x.shape[0], -1) if batched else x.reshape(-1)
    if flat.shape[-1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"Dense input of length {flat.shape[-1]} does not match weights {weights.shape} / bias {bias.shape}"
        )
    return flat @ weights + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


def dropout(
    x: np.ndarray, rate: float, mode: str, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Inverted dropout

    Returns the output and the scale mask that produced it (zeros for dropped
    elements, 1/(1-rate) for survivors; all ones in inference mode).
    """
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"Dropout rate must be in [0, 1), got {rate}")
    if mode == INFERENCE:
        return x, np.ones_like(x)
    if mode != TRAINING:
        raise ConfigError(f"Unknown mode: {mode}")
    if rng is None:
        raise StateError("Training-mode dropout needs a random generator")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def bce_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """
    Summed binary cross entropy over the 25 structured outputs

    For a batch (N, 25) the per-sample sums are averaged over N.
    """
    if pred.shape[-1] != OUTPUT_UNITS or pred.shape != target.shape:
        raise ShapeError(f"Loss expects {OUTPUT_UNITS} predictions per sample, got {pred.shape} vs {target.shape}")
    p = np.clip(pred.astype(np.float64), CLAMP_EPS, 1.0 - CLAMP_EPS)
    y = target.astype(np.float64)
    per_sample = -(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)).sum(axis=-1)
    return float(np.mean(per_sample))


def l2_penalty(params: NetworkParams) -> float:
    """0.5 * sum of squared weights; biases are not penalised"""
    return 0.5 * float(sum(np.sum(params[key].astype(np.float64) ** 2) for key in params.weight_keys()))


def total_loss(loss: float, params: NetworkParams, beta: float) -> float:
    if beta < 0:
        raise ConfigError(f"L2 beta must be >= 0, got {beta}")
    return loss + beta * l2_penalty(params)


@dataclass
class ForwardCache:
    """Per-layer inputs and dropout masks from one forward pass"""

    inputs: List[np.ndarray]
    masks: Dict[int, np.ndarray]
    output: np.ndarray
    batched: bool
    layer_count: int
    consumed: bool = field(default=False)


def network_forward(
    spec: NetworkSpec,
    params: NetworkParams,
    x: np.ndarray,
    mode: str = INFERENCE,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, ForwardCache]:
    """
    Run the layers of ``spec`` in order

    Args:
        spec: Network layout
        params: Weights and biases
        x: One patch (H, W, C) or a batch (N, H, W, C) matching spec.input_shape
        mode: "training" (dropout active) or "inference"
        rng: Generator for dropout masks, required in training mode

    Returns:
        The sigmoid outputs, shape (25,) or (N, 25), and the cache for backprop
    """
    batched = x.ndim == 4
    if tuple(x.shape[-3:]) != tuple(spec.input_shape) or x.ndim not in (3, 4):
        raise ShapeError(f"Network expects input {tuple(spec.input_shape)}, got {x.shape}")
    a = x if batched else x[None]
    inputs: List[np.ndarray] = []
    masks: Dict[int, np.ndarray] = {}
    for index, layer in enumerate(spec.layers):
        inputs.append(a)
        if layer.kind == LayerKind.CONVOLUTION:
            a = conv2d_forward(a, params[(index, "weights")], params[(index, "bias")], layer.padding)
        elif layer.kind == LayerKind.DENSE:
            a = dense_forward(a, params[(index, "weights")], params[(index, "bias")], batched=True)
        elif layer.kind == LayerKind.RELU:
            a = relu(a)
        elif layer.kind == LayerKind.SIGMOID:
            a = sigmoid(a)
        elif layer.kind == LayerKind.DROPOUT:
            a, masks[index] = dropout(a, layer.drop_rate, mode, rng)
        elif layer.kind == LayerKind.FLATTEN:
            a = a.reshape(a.shape[0], -1)
    if not np.all(np.isfinite(a)):
        raise NumericError("Non-finite network output")
    cache = ForwardCache(inputs=inputs, masks=masks, output=a, batched=batched, layer_count=len(spec.layers))
    return (a if batched else a[0]), cache


def network_backward(
    spec: NetworkSpec,
    params: NetworkParams,
    cache: Optional[ForwardCache],
    target: np.ndarray,
    beta: float = 0.0,
) -> NetworkParams:
    """
    Analytic gradient of the mean-over-batch total loss

    The final sigmoid is folded into the cross entropy, so the output delta is
    (prediction - target) / N. The L2 term contributes beta * W to every weight.
    """
    if cache is None or cache.consumed or cache.layer_count != len(spec.layers):
        raise StateError("Backward pass needs the cache of the immediately preceding forward pass")
    y = target if cache.batched else target[None]
    if y.shape != cache.output.shape:
        raise ShapeError(f"Target {target.shape} does not match network output {cache.output.shape}")
    cache.consumed = True

    n = cache.output.shape[0]
    grad = (cache.output - y.astype(cache.output.dtype)) / n
    grads: Dict[ParamKey, np.ndarray] = {}
    for index in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[index]
        a_in = cache.inputs[index]
        if layer.kind == LayerKind.SIGMOID:
            if index != len(spec.layers) - 1:
                s = sigmoid(a_in)
                grad = grad * s * (1 - s)
        elif layer.kind == LayerKind.RELU:
            grad = grad * (a_in > 0)
        elif layer.kind == LayerKind.DROPOUT:
            grad = grad * cache.masks[index]
        elif layer.kind == LayerKind.FLATTEN:
            grad = grad.reshape(a_in.shape)
        elif layer.kind == LayerKind.DENSE:
            weights = params[(index, "weights")]
            flat = a_in.reshape(n, -1)
            grads[(index, "weights")] = flat.T @ grad + beta * weights
            grads[(index, "bias")] = grad.sum(axis=0)
            grad = (grad @ weights.T).reshape(a_in.shape)
        elif layer.kind == LayerKind.CONVOLUTION:
            kernels = params[(index, "weights")]
            grad, grad_k, grad_b = conv2d_backward(a_in, kernels, grad, layer.padding)
            grads[(index, "weights")] = grad_k + beta * kernels
            grads[(index, "bias")] = grad_b
    return NetworkParams(grads)


def sgd_step(
    params: NetworkParams,
    grads: NetworkParams,
    config: TrainConfig,
    velocity: Optional[Dict[ParamKey, np.ndarray]] = None,
) -> NetworkParams:
    """
    Momentum SGD: v <- momentum * v - lr * g; theta <- theta + v

    ``velocity`` is updated in place when given; without it every step starts from v = 0.
    """
    if grads.keys() != params.keys():
        raise ShapeError("Gradient keys do not match parameter keys")
    velocity = {} if velocity is None else velocity
    updated = {}
    for key, theta in params.items():
        g = grads[key]
        if g.shape != theta.shape:
            raise ShapeError(f"Gradient {key} has shape {g.shape}, parameter has {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"Non-finite gradient for layer {key[0]} {key[1]}")
        v = velocity.get(key)
        v = -config.learning_rate * g if v is None else config.momentum * v - config.learning_rate * g
        velocity[key] = v.astype(theta.dtype)
        updated[key] = theta + velocity[key]
    return NetworkParams(updated)


def init_params(spec: NetworkSpec, rng: np.random.Generator, dtype=np.float32) -> NetworkParams:
    """He-uniform weights, zero biases"""
    tensors = {}
    for key, shape in spec.parameter_shapes().items():
        if key[1] == "bias":
            tensors[key] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
        limit = np.sqrt(6.0 / fan_in)
        tensors[key] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return NetworkParams(tensors)
