"""Central finite differences against the analytic gradients."""
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from core.numerics.graph import Graph
from core.numerics.tensor import Tensor


def numerical_gradient(f: Callable[[], float], array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """d f / d array by central differences, perturbing `array` in place and restoring it."""
    grad = np.zeros_like(array)
    for idx in np.ndindex(array.shape):
        original = array[idx]
        array[idx] = original + eps
        plus = f()
        array[idx] = original - eps
        minus = f()
        array[idx] = original
        grad[idx] = (plus - minus) / (2.0 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    diff = float(np.linalg.norm(np.ravel(analytic - numeric)))
    scale = float(np.linalg.norm(np.ravel(analytic)) + np.linalg.norm(np.ravel(numeric)))
    return diff / max(scale, floor)


def check_gradients(
    graph: Graph,
    loss_fn: Callable[[], Tensor],
    names: Optional[Iterable[str]] = None,
    eps: float = 1e-5,
) -> Dict[str, float]:
    """
    Compare Graph.backward against finite differences.

    Returns:
        relative error per parameter name
    """
    analytic = {n: g.copy() for n, g in graph.backward(loss_fn()).items()}
    errors: Dict[str, float] = {}
    for name in names if names is not None else list(graph):
        numeric = numerical_gradient(lambda: loss_fn().item(), graph[name].data, eps)
        errors[name] = relative_error(analytic[name], numeric)
    return errors
