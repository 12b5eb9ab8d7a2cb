from .tensor import Tensor, no_grad, set_default_dtype, get_default_dtype, concat, stack, tanh, sigmoid, exp, log
from .layers import softmax, log_softmax, conv1d, lstm_step, lstm_sequence
from .graph import Graph, backward, clip_grad_norm, global_norm
from .prng import make_prng, PRNG_ALGORITHM

__all__ = [
    "Tensor",
    "no_grad",
    "set_default_dtype",
    "get_default_dtype",
    "concat",
    "stack",
    "tanh",
    "sigmoid",
    "exp",
    "log",
    "softmax",
    "log_softmax",
    "conv1d",
    "lstm_step",
    "lstm_sequence",
    "Graph",
    "backward",
    "clip_grad_norm",
    "global_norm",
    "make_prng",
    "PRNG_ALGORITHM",
]
