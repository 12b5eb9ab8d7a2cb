"""Pyramid BLSTM listener: every layer pairs consecutive frames, halving the time axis."""
from typing import NamedTuple, Union

import numpy as np

from core.numerics.graph import Graph
from core.numerics.layers import lstm_init, lstm_sequence
from core.numerics.tensor import Tensor, as_tensor, concat
from utils.errors import InvalidArgumentError


class ListenerOutput(NamedTuple):
    h: Tensor                          # U x 2H encoder states

    @property
    def length(self) -> int:
        return int(self.h.shape[0])


def reduced_length(num_frames: int, num_layers: int) -> int:
    """U after `num_layers` pyramid layers: ceil(T/2) applied once per layer."""
    for _ in range(num_layers):
        num_frames = (num_frames + 1) // 2
    return num_frames


def init_listener(graph: Graph, rng: np.random.Generator, feat_dim: int, hidden: int, num_layers: int) -> None:
    input_dim = 2 * feat_dim
    for layer in range(num_layers):
        for direction in ("fwd", "bwd"):
            graph.add_group(f"listener.layer{layer}.{direction}", lstm_init(rng, input_dim, hidden))
        input_dim = 4 * hidden


def pair_frames(x: Tensor) -> Tensor:
    """Zero-pad odd lengths, then concatenate frames 2k and 2k+1."""
    length, dim = x.shape
    if length % 2:
        x = concat([x, Tensor(np.zeros((1, dim)))], axis=0)
        length += 1
    return x.reshape(length // 2, 2 * dim)


def listen(x: Union[np.ndarray, Tensor], graph: Graph, num_layers: int) -> ListenerOutput:
    """
    Encode a T x D feature map into U x 2H states, U = ceil applied num_layers times to T/2.
    """
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[0] == 0:
        raise InvalidArgumentError(f"listener needs a non-empty T x D feature map, got shape {x.shape}")
    h = x
    for layer in range(num_layers):
        h = pair_frames(h)
        forward = lstm_sequence(h, graph.group(f"listener.layer{layer}.fwd"))
        backward = lstm_sequence(h, graph.group(f"listener.layer{layer}.bwd"), reverse=True)
        h = concat([forward, backward], axis=1)
    return ListenerOutput(h=h)
