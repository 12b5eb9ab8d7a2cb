"""Softmax, 1-D convolution, the LSTM cell and parameter initialisers."""
from typing import List, Mapping, Optional, Tuple, Union

import numpy as np

from core.numerics.tensor import (
    ArrayLike, Conv1d, LogSoftmax, Softmax, Tensor, as_tensor, sigmoid, stack, tanh,
)
from utils.errors import InvalidArgumentError, NumericDomainError

FORGET_BIAS = 1.0


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NumericDomainError(f"{what}: non-finite input")


def softmax(v: ArrayLike, axis: int = -1) -> Union[Tensor, np.ndarray]:
    """
    Max-shifted softmax along `axis`.

    Tensors go through the differentiable op; plain arrays return a plain array.
    """
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if data.size == 0:
        raise InvalidArgumentError("softmax of an empty vector")
    _check_finite(data, "softmax")
    if isinstance(v, Tensor):
        return Softmax.apply(v, axis=axis)
    shifted = data - np.max(data, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(v: ArrayLike, axis: int = -1) -> Union[Tensor, np.ndarray]:
    data = v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)
    if data.size == 0:
        raise InvalidArgumentError("log_softmax of an empty vector")
    _check_finite(data, "log_softmax")
    if isinstance(v, Tensor):
        return LogSoftmax.apply(v, axis=axis)
    shifted = data - np.max(data, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def conv1d(signal: ArrayLike, filters: ArrayLike) -> Tensor:
    """
    Same-padded correlation (left pad floor((K-1)/2)).

    Args:
        signal: length-U vector or U x C map
        filters: F x K bank for a vector signal, F x C x K for a map

    Returns:
        U x F map
    """
    signal, filters = as_tensor(signal), as_tensor(filters)
    if signal.data.size == 0:
        raise InvalidArgumentError("conv1d of an empty signal")
    if signal.ndim == 1:
        signal = signal.reshape(signal.shape[0], 1)
    if filters.ndim == 2:
        filters = filters.reshape(filters.shape[0], 1, filters.shape[1])
    if signal.ndim != 2 or filters.ndim != 3:
        raise InvalidArgumentError(f"conv1d expects (U, C) signal and (F, C, K) filters, got {signal.shape}, {filters.shape}")
    if filters.shape[1] != signal.shape[1]:
        raise InvalidArgumentError(f"conv1d channel mismatch: signal {signal.shape}, filters {filters.shape}")
    if filters.shape[2] < 1:
        raise InvalidArgumentError("conv1d filter width must be >= 1")
    return Conv1d.apply(signal, filters)


def _gates(z: Tensor, c: Tensor, hidden: int) -> Tuple[Tensor, Tensor]:
    # gate layout along z: input, forget, candidate, output
    i = sigmoid(z[0:hidden])
    f = sigmoid(z[hidden:2 * hidden])
    g = tanh(z[2 * hidden:3 * hidden])
    o = sigmoid(z[3 * hidden:4 * hidden])
    c_next = f * c + i * g
    return o * tanh(c_next), c_next


def lstm_step(x: ArrayLike, h: ArrayLike, c: ArrayLike, params: Mapping[str, Tensor]) -> Tuple[Tensor, Tensor]:
    """
    One standard LSTM cell step (no peepholes, no projection).

    Args:
        x: input vector (I,)
        h, c: hidden and cell vectors (H,)
        params: "Wx" (4H, I), "Wh" (4H, H), "b" (4H,)

    Returns:
        (h', c')
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    wx, wh, b = params["Wx"], params["Wh"], params["b"]
    hidden = wh.shape[1]
    if wx.shape[0] != 4 * hidden or b.shape != (4 * hidden,):
        raise InvalidArgumentError(f"inconsistent LSTM parameters: Wx {wx.shape}, Wh {wh.shape}, b {b.shape}")
    if x.shape != (wx.shape[1],) or h.shape != (hidden,) or c.shape != (hidden,):
        raise InvalidArgumentError(f"LSTM input shapes x {x.shape}, h {h.shape}, c {c.shape} do not match parameters")
    return _gates(wx @ x + wh @ h + b, c, hidden)


def lstm_sequence(xs: Tensor, params: Mapping[str, Tensor], reverse: bool = False) -> Tensor:
    """Run an LSTM over the rows of a (T, I) map from zero state, returning (T, H) outputs in input order."""
    wx, wh, b = params["Wx"], params["Wh"], params["b"]
    hidden = wh.shape[1]
    if xs.ndim != 2 or xs.shape[1] != wx.shape[1]:
        raise InvalidArgumentError(f"LSTM input map {xs.shape} does not match Wx {wx.shape}")
    projected = xs @ wx.T + b
    h = Tensor(np.zeros(hidden))
    c = Tensor(np.zeros(hidden))
    steps = range(xs.shape[0] - 1, -1, -1) if reverse else range(xs.shape[0])
    outputs: List[Optional[Tensor]] = [None] * xs.shape[0]
    for t in steps:
        h, c = _gates(projected[t] + wh @ h, c, hidden)
        outputs[t] = h
    return stack(outputs)


def uniform_init(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform in [-k, k], k = 1/sqrt(fan_in)."""
    k = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-k, k, size=shape)


def lstm_init(rng: np.random.Generator, input_dim: int, hidden: int) -> Mapping[str, np.ndarray]:
    """Standard cell: forget-gate bias 1.0, other biases 0, weights uniform with fan-in I+H."""
    fan_in = input_dim + hidden
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = FORGET_BIAS
    return {
        "Wx": uniform_init(rng, (4 * hidden, input_dim), fan_in),
        "Wh": uniform_init(rng, (4 * hidden, hidden), fan_in),
        "b": b,
    }
