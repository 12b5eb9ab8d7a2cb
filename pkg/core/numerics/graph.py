"""Named parameter store with one gradient slot per parameter."""
from typing import Dict, Iterator, Mapping, Optional, Tuple

import numpy as np

from core.numerics.tensor import Tensor, backpropagate, get_default_dtype
from utils.errors import InvalidArgumentError, NumericDomainError
from utils.logger import logger


class Graph:
    """
    Parameters of one network, addressed by canonical dotted names
    ("listener.layer0.fwd.Wx", "attention.F", ...). Iteration order is insertion order,
    which fixes checkpoint layout and gradient bookkeeping.
    """

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.grads: Dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise InvalidArgumentError(f"parameter '{name}' already registered")
        tensor = Tensor(np.array(value, dtype=get_default_dtype()), requires_grad=True, name=name)
        self.params[name] = tensor
        self.grads[name] = np.zeros_like(tensor.data)
        return tensor

    def add_group(self, prefix: str, values: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {key: self.add(f"{prefix}.{key}", value) for key, value in values.items()}

    def group(self, prefix: str) -> Dict[str, Tensor]:
        """Parameters directly under `prefix`, keyed by their last name component."""
        head = prefix + "."
        return {
            name[len(head):]: tensor
            for name, tensor in self.params.items()
            if name.startswith(head) and "." not in name[len(head):]
        }

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def num_parameters(self) -> int:
        return int(sum(t.data.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for name, tensor in self.params.items():
            tensor.grad = None
            self.grads[name] = np.zeros_like(tensor.data)

    def backward(self, loss: Tensor) -> Dict[str, np.ndarray]:
        """
        Fill every gradient slot with d(loss)/d(parameter).

        Parameters the loss does not reach get exact zeros.
        """
        self.zero_grad()
        backpropagate(loss)
        for name, tensor in self.params.items():
            if tensor.grad is not None:
                grad = np.asarray(tensor.grad, dtype=tensor.data.dtype).reshape(tensor.shape)
                if not np.all(np.isfinite(grad)):
                    logger.error(f"Non-finite gradient for parameter {name}")
                    raise NumericDomainError(f"non-finite gradient for parameter '{name}'")
                self.grads[name] = grad
        return self.grads

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data.copy() for name, tensor in self.params.items()}

    def load_state_dict(self, arrays: Mapping[str, np.ndarray], strict: bool = True) -> None:
        if strict:
            missing = [n for n in self.params if n not in arrays]
            extra = [n for n in arrays if n not in self.params]
            if missing or extra:
                raise InvalidArgumentError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, tensor in self.params.items():
            if name not in arrays:
                continue
            value = np.asarray(arrays[name])
            if value.shape != tensor.shape:
                raise InvalidArgumentError(f"shape mismatch for '{name}': {value.shape} vs {tensor.shape}")
            tensor.data = value.astype(get_default_dtype())

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "Graph":
        graph = cls()
        for name, value in arrays.items():
            graph.add(name, value)
        return graph


def backward(graph: Graph, loss: Tensor) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss for every parameter of `graph`."""
    return graph.backward(loss)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def scale_gradients(grads: Mapping[str, np.ndarray], scale: float) -> Dict[str, np.ndarray]:
    return {name: g * scale for name, g in grads.items()}


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> Tuple[Dict[str, np.ndarray], bool]:
    """
    Rescale so the global L2 norm does not exceed max_norm.

    Returns:
        (gradients, whether clipping happened); the result's norm is never above max_norm
    """
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise NumericDomainError(f"non-finite gradient norm {norm}")
    if norm <= max_norm:
        return dict(grads), False
    scale = max_norm / norm
    clipped = scale_gradients(grads, scale)
    # rounding can leave the rescaled norm an ulp above the cap
    while global_norm(clipped) > max_norm:
        scale = float(np.nextafter(scale, 0.0))
        clipped = scale_gradients(grads, scale)
    return clipped, True


def parameter_summary(graph: Graph, prefix: Optional[str] = None) -> str:
    names = [n for n in graph if prefix is None or n.startswith(prefix)]
    return ", ".join(f"{n}{tuple(graph[n].shape)}" for n in names)
