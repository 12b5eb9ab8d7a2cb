"""
Content and location-aware attention.

Energies: e_ij = w^T tanh(W s_{i-1} + V h_j + U_loc f_ij + b), where f_i is the alignment
history convolved with the filter bank F (f is U x filters, f_ij its row j). Without F and
U_loc the location term is absent (content-only attention).
"""
from typing import Mapping, NamedTuple, Optional, Tuple

import numpy as np

from core.model.listener import ListenerOutput
from core.numerics.graph import Graph
from core.numerics.layers import conv1d, softmax, uniform_init
from core.numerics.tensor import Tensor, tanh
from utils.errors import InvalidArgumentError

HISTORY_MODES = ("accumulated", "previous")


class AttentionState(NamedTuple):
    previous: Tensor                   # alpha_{i-1}, sums to 1
    accumulated: Tensor                # sum of alignments produced so far
    mode: str = "accumulated"

    def history(self) -> Tensor:
        return self.accumulated if self.mode == "accumulated" else self.previous


def initial_attention_state(length: int, mode: str = "accumulated") -> AttentionState:
    """alpha_0 uniform, nothing accumulated yet."""
    if mode not in HISTORY_MODES:
        raise InvalidArgumentError(f"unknown attention history mode '{mode}'")
    return AttentionState(
        previous=Tensor(np.full(length, 1.0 / length)),
        accumulated=Tensor(np.zeros(length)),
        mode=mode,
    )


def advance(state: AttentionState, alpha: Tensor) -> AttentionState:
    return AttentionState(previous=alpha, accumulated=state.accumulated + alpha, mode=state.mode)


def init_attention(
    graph: Graph,
    rng: np.random.Generator,
    query_dim: int,
    key_dim: int,
    attention_dim: int,
    conv_filters: int,
    conv_width: int,
    location_aware: bool = True,
) -> None:
    graph.add("attention.w", uniform_init(rng, (attention_dim,), attention_dim))
    graph.add("attention.W", uniform_init(rng, (attention_dim, query_dim), query_dim))
    graph.add("attention.V", uniform_init(rng, (attention_dim, key_dim), key_dim))
    if location_aware:
        graph.add("attention.U_loc", uniform_init(rng, (attention_dim, conv_filters), conv_filters))
        graph.add("attention.F", uniform_init(rng, (conv_filters, conv_width), conv_width))
    graph.add("attention.b", np.zeros(attention_dim))


def project_keys(h: ListenerOutput, params: Mapping[str, Tensor]) -> Tensor:
    """V h_j for every encoder position, computed once per utterance."""
    return h.h @ params["V"].T


def energies(
    s_prev: Tensor,
    h: ListenerOutput,
    state: AttentionState,
    params: Mapping[str, Tensor],
    keys: Optional[Tensor] = None,
) -> Tensor:
    if state.previous.shape[0] != h.length or state.accumulated.shape[0] != h.length:
        raise InvalidArgumentError(
            f"alignment length {state.previous.shape[0]} does not match encoder length {h.length}"
        )
    keys = keys if keys is not None else project_keys(h, params)
    pre = keys + (params["W"] @ s_prev + params["b"])
    if "F" in params:
        location = conv1d(state.history(), params["F"])
        pre = pre + location @ params["U_loc"].T
    return tanh(pre) @ params["w"]


def attend(
    s_prev: Tensor,
    h: ListenerOutput,
    state: AttentionState,
    params: Mapping[str, Tensor],
    keys: Optional[Tensor] = None,
) -> Tuple[Tensor, Tensor]:
    """
    One attention step.

    Returns:
        (context c_i = sum_j alpha_ij h_j, alignment alpha_i)
    """
    alpha = softmax(energies(s_prev, h, state, params, keys))
    return alpha @ h.h, alpha
