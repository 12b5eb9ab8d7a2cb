"""
Dense tensors with reverse-mode differentiation.

Every operation is a `Function` subclass: `forward` computes numpy arrays and keeps what
`backward` needs, `backward` maps the output gradient to one gradient per parent (None for
inputs that take no gradient). Graphs are recorded only for outputs of tensors that require
gradients and only outside `no_grad()`.
"""
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.errors import InvalidArgumentError, NumericDomainError

_DEFAULT_DTYPE = np.float64
_GRAD_STATE = threading.local()

ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


def set_default_dtype(dtype: Union[str, np.dtype]) -> None:
    """Computation precision for new tensors: float64 (default) or float32."""
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise InvalidArgumentError(f"unsupported computation dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def get_default_dtype():
    return _DEFAULT_DTYPE


def is_grad_enabled() -> bool:
    return getattr(_GRAD_STATE, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording a graph (decoding, validation)."""
    previous = is_grad_enabled()
    _GRAD_STATE.enabled = False
    try:
        yield
    finally:
        _GRAD_STATE.enabled = previous


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_ctx")
    # ndarray <op> Tensor dispatches to the reflected Tensor method
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, _ctx=None):
        self.data = np.asarray(data, dtype=_DEFAULT_DTYPE)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._ctx = _ctx

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return Transpose.apply(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return len(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidArgumentError(f"tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # Operations
    def __add__(self, other):
        return Add.apply(self, other)

    def __radd__(self, other):
        return Add.apply(other, self)

    def __sub__(self, other):
        return Sub.apply(self, other)

    def __rsub__(self, other):
        return Sub.apply(other, self)

    def __mul__(self, other):
        return Mul.apply(self, other)

    def __rmul__(self, other):
        return Mul.apply(other, self)

    def __truediv__(self, other):
        return Div.apply(self, other)

    def __neg__(self):
        return Neg.apply(self)

    def __matmul__(self, other):
        return MatMul.apply(self, other)

    def __rmatmul__(self, other):
        return MatMul.apply(other, self)

    def __getitem__(self, idx):
        return GetItem.apply(self, idx=idx)

    def sum(self, axis=None) -> "Tensor":
        return Sum.apply(self, axis=axis)

    def mean(self) -> "Tensor":
        return Sum.apply(self) * (1.0 / self.data.size)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


class Function:
    """One recorded operation: parents plus whatever forward saved for backward."""

    parents: List[Tensor]

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        ctx = cls()
        tensors = [as_tensor(a) for a in args]
        out = ctx.forward(*[t.data for t in tensors], **kwargs)
        if is_grad_enabled() and any(t.requires_grad for t in tensors):
            ctx.parents = tensors
            return Tensor(out, requires_grad=True, _ctx=ctx)
        return Tensor(out)

    def forward(self, *arrays, **kwargs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return np.asarray(grad).reshape(shape)


class Add(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a + b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, a, b):
        self.shapes = (a.shape, b.shape)
        return a - b

    def backward(self, grad):
        return _unbroadcast(grad, self.shapes[0]), _unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a * b

    def backward(self, grad):
        return _unbroadcast(grad * self.b, self.a.shape), _unbroadcast(grad * self.a, self.b.shape)


class Div(Function):
    def forward(self, a, b):
        self.a, self.b = a, b
        return a / b

    def backward(self, grad):
        return (_unbroadcast(grad / self.b, self.a.shape),
                _unbroadcast(-grad * self.a / (self.b * self.b), self.b.shape))


class Neg(Function):
    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class MatMul(Function):
    """Matrix/vector products: (m,n)@(n,), (m,n)@(n,k), (n,)@(n,k), (n,)@(n,)."""

    def forward(self, a, b):
        if a.ndim not in (1, 2) or b.ndim not in (1, 2):
            raise InvalidArgumentError(f"matmul supports 1-D/2-D operands, got {a.shape} @ {b.shape}")
        if a.shape[-1] != b.shape[0]:
            raise InvalidArgumentError(f"matmul shape mismatch {a.shape} @ {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad):
        a, b = self.a, self.b
        if a.ndim == 2 and b.ndim == 2:
            return grad @ b.T, a.T @ grad
        if a.ndim == 2 and b.ndim == 1:
            return np.outer(grad, b), a.T @ grad
        if a.ndim == 1 and b.ndim == 2:
            return b @ grad, np.outer(a, grad)
        return grad * b, grad * a


class Tanh(Function):
    def forward(self, a):
        self.out = np.tanh(a)
        return self.out

    def backward(self, grad):
        return (grad * (1.0 - self.out * self.out),)


class Sigmoid(Function):
    def forward(self, a):
        self.out = 0.5 * (np.tanh(0.5 * a) + 1.0)
        return self.out

    def backward(self, grad):
        return (grad * self.out * (1.0 - self.out),)


class Exp(Function):
    def forward(self, a):
        self.out = np.exp(a)
        return self.out

    def backward(self, grad):
        return (grad * self.out,)


class Log(Function):
    def forward(self, a):
        if np.any(a <= 0):
            raise NumericDomainError("log of a non-positive value")
        self.a = a
        return np.log(a)

    def backward(self, grad):
        return (grad / self.a,)


class Sum(Function):
    def forward(self, a, axis=None):
        self.shape, self.axis = a.shape, axis
        return np.sum(a, axis=axis)

    def backward(self, grad):
        if self.axis is not None:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape).copy(),)


class GetItem(Function):
    def forward(self, a, idx=None):
        self.shape, self.idx = a.shape, idx
        return a[idx]

    def backward(self, grad):
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.idx, grad)
        return (out,)


class Reshape(Function):
    def forward(self, a, shape=None):
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a):
        return a.T

    def backward(self, grad):
        return (grad.T,)


class Concat(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        bounds = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, bounds, axis=self.axis))


class Stack(Function):
    def forward(self, *arrays, axis=0):
        self.axis = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        return tuple(np.moveaxis(grad, self.axis, 0))


class Softmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.axis = axis
        self.out = e / np.sum(e, axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        dot = np.sum(grad * self.out, axis=self.axis, keepdims=True)
        return (self.out * (grad - dot),)


class LogSoftmax(Function):
    def forward(self, a, axis=-1):
        shifted = a - np.max(a, axis=axis, keepdims=True)
        self.axis = axis
        out = shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
        self.probs = np.exp(out)
        return out

    def backward(self, grad):
        return (grad - self.probs * np.sum(grad, axis=self.axis, keepdims=True),)


class Conv1d(Function):
    """Same-padded 1-D correlation of a (U, C) map with (F, C, K) filters -> (U, F)."""

    def forward(self, signal, filters):
        length, _ = signal.shape
        width = filters.shape[-1]
        left = (width - 1) // 2
        right = width - 1 - left
        padded = np.pad(signal, ((left, right), (0, 0)))
        self.index = np.arange(length)[:, None] + np.arange(width)[None, :]
        self.padded_shape, self.left, self.length = padded.shape, left, length
        self.patches = padded[self.index]                     # (U, K, C)
        self.filters = filters
        return np.einsum("ukc,fck->uf", self.patches, filters)

    def backward(self, grad):
        grad_filters = np.einsum("ukc,uf->fck", self.patches, grad)
        grad_patches = np.einsum("uf,fck->ukc", grad, self.filters)
        grad_padded = np.zeros(self.padded_shape, dtype=grad.dtype)
        np.add.at(grad_padded, self.index, grad_patches)
        return grad_padded[self.left:self.left + self.length], grad_filters


def tanh(x: ArrayLike) -> Tensor:
    return Tanh.apply(x)


def sigmoid(x: ArrayLike) -> Tensor:
    return Sigmoid.apply(x)


def exp(x: ArrayLike) -> Tensor:
    return Exp.apply(x)


def log(x: ArrayLike) -> Tensor:
    return Log.apply(x)


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    return Stack.apply(*tensors, axis=axis)


def topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from root that require gradients, parents before children."""
    order: List[Tensor] = []
    visited = set()
    stack_: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        if node._ctx is not None:
            for parent in reversed(node._ctx.parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack_.append((parent, False))
    return order


def backpropagate(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into `.grad` of every leaf tensor that requires gradients."""
    if loss.data.size != 1:
        raise InvalidArgumentError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topological_order(loss)):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if node._ctx is None:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        for parent, parent_grad in zip(node._ctx.parents, node._ctx.backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            pending[key] = parent_grad if key not in pending else pending[key] + parent_grad
