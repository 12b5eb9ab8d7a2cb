"""Parameter update rules over a Graph."""
from typing import Dict, Mapping

import numpy as np

from core.numerics.graph import Graph


class SGD:
    def __init__(self, graph: Graph):
        self.graph = graph

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        for name, tensor in self.graph.items():
            tensor.data = tensor.data - lr * grads[name]


class Adam:
    """Adam with bias correction; the learning rate is supplied per step."""

    def __init__(self, graph: Graph, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.graph = graph
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in graph.items()}
        self.v: Dict[str, np.ndarray] = {n: np.zeros_like(p.data) for n, p in graph.items()}

    def step(self, grads: Mapping[str, np.ndarray], lr: float) -> None:
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, tensor in self.graph.items():
            g = grads[name]
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            m_hat = self.m[name] / correction1
            v_hat = self.v[name] / correction2
            tensor.data = tensor.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(name: str, graph: Graph):
    if name == "adam":
        return Adam(graph)
    return SGD(graph)
