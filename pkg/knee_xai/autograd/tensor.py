"""Reverse-mode automatic differentiation over dense numpy arrays.

The graph is rebuilt on every forward pass (define-by-run). Each differentiable
operation is a ``Function`` subclass with a ``forward`` over raw arrays and a
``backward`` returning one gradient per input.
"""
from __future__ import annotations
import contextvars
import itertools
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..core.errors import GraphError, ShapeError

logger = logging.getLogger(__name__)

DEFAULT_DTYPE = np.float32

ArrayLike = Union[np.ndarray, float, int, Sequence[float]]
GradientRule = Callable[[np.ndarray, np.ndarray], np.ndarray]

_grad_enabled: contextvars.ContextVar[bool] = contextvars.ContextVar("grad_enabled", default=True)
_gradient_rules: contextvars.ContextVar[Optional[Dict[str, GradientRule]]] = contextvars.ContextVar(
    "gradient_rules", default=None
)
_node_ids = itertools.count(1)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def gradient_rules(**rules: GradientRule) -> Iterator[None]:
    """Temporarily replace backward rules of activation kinds.

    A rule receives the local derivative of the activation and the upstream
    gradient and returns the gradient passed to the activation's input. The
    override lives in a context variable, so it never leaks into other threads
    and disappears when the block exits.
    """
    current = dict(_gradient_rules.get() or {})
    current.update(rules)
    token = _gradient_rules.set(current)
    try:
        yield
    finally:
        _gradient_rules.reset(token)


def get_gradient_rule(kind: str) -> Optional[GradientRule]:
    rules = _gradient_rules.get()
    if not rules:
        return None
    return rules.get(kind)


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so ``grad`` matches ``shape``."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    if grad.shape != shape:
        raise ShapeError(f"Cannot unbroadcast gradient of shape {grad.shape} to {shape}")
    return grad


class Function:
    """Base class for differentiable operations."""

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no forward")

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError(f"{type(self).__name__} has no backward")

    @classmethod
    def apply(cls, *inputs: Any, **kwargs: Any) -> "Tensor":
        tensors = tuple(as_tensor(t) for t in inputs)
        fn = cls(*tensors)
        out = fn.forward(*(t.data for t in tensors), **kwargs)
        dtype = np.result_type(*(t.data.dtype for t in tensors))
        out = np.asarray(out, dtype=dtype)
        requires_grad = is_grad_enabled() and any(t.requires_grad for t in tensors)
        return Tensor(out, requires_grad=requires_grad, _creator=fn if requires_grad else None)


class Tensor:
    """An n-dimensional float array participating in a gradient graph."""

    __array_ufunc__ = None  # numpy defers to the reflected operators below

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[np.dtype] = None,
        _creator: Optional[Function] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype.kind == "f":
            arr = data
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.creator = _creator
        self.name = name
        self.node_id = next(_node_ids)
        self._retain = False

    # -- bookkeeping -------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def retain_grad(self) -> "Tensor":
        self._retain = True
        return self

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> "GradGraph":
        return backward(self)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad}{label})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other: Any) -> "Tensor":
        return Add.apply(self, other)

    def __radd__(self, other: Any) -> "Tensor":
        return Add.apply(other, self)

    def __sub__(self, other: Any) -> "Tensor":
        return Sub.apply(self, other)

    def __rsub__(self, other: Any) -> "Tensor":
        return Sub.apply(other, self)

    def __mul__(self, other: Any) -> "Tensor":
        return Mul.apply(self, other)

    def __rmul__(self, other: Any) -> "Tensor":
        return Mul.apply(other, self)

    def __truediv__(self, other: Any) -> "Tensor":
        return Div.apply(self, other)

    def __rtruediv__(self, other: Any) -> "Tensor":
        return Div.apply(other, self)

    def __neg__(self) -> "Tensor":
        return Neg.apply(self)

    def __pow__(self, exponent: float) -> "Tensor":
        return Pow.apply(self, exponent=float(exponent))

    def __matmul__(self, other: Any) -> "Tensor":
        return MatMul.apply(self, other)

    def __rmatmul__(self, other: Any) -> "Tensor":
        return MatMul.apply(other, self)

    def __getitem__(self, index: Any) -> "Tensor":
        return GetItem.apply(self, index=index)

    # -- reductions and shape ----------------------------------------------
    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        if axis is None:
            count = self.size
        else:
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def max(self, axis: int, keepdims: bool = False) -> "Tensor":
        return Max.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape: Any) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes: int) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Transpose.apply(self, axes=axes or None)

    def swapaxes(self, a: int, b: int) -> "Tensor":
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return self.transpose(*axes)

    def broadcast_to(self, shape: Tuple[int, ...]) -> "Tensor":
        return BroadcastTo.apply(self, shape=tuple(shape))

    def exp(self) -> "Tensor":
        return Exp.apply(self)

    def log(self) -> "Tensor":
        return Log.apply(self)

    def abs(self) -> "Tensor":
        return Abs.apply(self)

    def clip(self, low: float, high: float) -> "Tensor":
        return Clip.apply(self, low=low, high=high)


def as_tensor(value: Any) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class GradGraph:
    """Result of one backward pass.

    ``nodes`` lists every recorded tensor upstream of the loss in topological
    order (inputs before outputs); ``grads`` maps ``node_id`` to its gradient.
    """

    nodes: List[Tensor] = field(default_factory=list)
    grads: Dict[int, np.ndarray] = field(default_factory=dict)

    def grad_of(self, tensor: Tensor) -> Optional[np.ndarray]:
        return self.grads.get(tensor.node_id)


def topological_order(root: Tensor) -> List[Tensor]:
    """Nodes reachable from ``root`` through tensors requiring grad, inputs first."""
    order: List[Tensor] = []
    visited: set[int] = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in visited:
            continue
        visited.add(node.node_id)
        stack.append((node, True))
        if node.creator is not None:
            for parent in node.creator.inputs:
                if parent.requires_grad and parent.node_id not in visited:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor) -> GradGraph:
    """Populate gradients of every requires_grad tensor upstream of ``loss``."""
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise GraphError("backward called on a tensor detached from any tensor requiring grad")

    nodes = topological_order(loss)
    for node in nodes:
        node.grad = None

    grads: Dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(nodes):
        grad = grads.get(node.node_id)
        if grad is None:
            continue
        if node.is_leaf or node._retain:
            node.grad = np.array(grad, copy=True)
        if node.is_leaf:
            continue
        input_grads = node.creator.backward(grad)
        for parent, parent_grad in zip(node.creator.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            parent_grad = unbroadcast(np.asarray(parent_grad), parent.shape).astype(parent.dtype, copy=False)
            previous = grads.get(parent.node_id)
            grads[parent.node_id] = parent_grad if previous is None else previous + parent_grad
    logger.debug(f"backward visited {len(nodes)} node(s)")
    return GradGraph(nodes=nodes, grads=grads)


# ---------------------------------------------------------------------------
# Elementary operations
# ---------------------------------------------------------------------------


class Add(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a + b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return grad, grad


class Sub(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return a - b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return grad, -grad


class Mul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a * b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return grad * self.b, grad * self.a


class Div(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        self.a, self.b = a, b
        return a / b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return grad / self.b, -grad * self.a / (self.b * self.b)


class Neg(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        return -a

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (-grad,)


class Pow(Function):
    def forward(self, a: np.ndarray, exponent: float) -> np.ndarray:
        self.a, self.exponent = a, exponent
        return a ** exponent

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad * self.exponent * self.a ** (self.exponent - 1.0),)


class MatMul(Function):
    def forward(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
        self.a, self.b = a, b
        return a @ b

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        grad_a = grad @ np.swapaxes(self.b, -1, -2)
        grad_b = np.swapaxes(self.a, -1, -2) @ grad
        return grad_a, grad_b


class Sum(Function):
    def forward(self, a: np.ndarray, axis: Any = None, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        return np.sum(a, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.shape),)


class Max(Function):
    """Maximum along one axis; ties go to the first index."""

    def forward(self, a: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
        self.shape, self.axis, self.keepdims = a.shape, axis, keepdims
        self.argmax = np.argmax(a, axis=axis)
        return np.max(a, axis=axis, keepdims=keepdims)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        if self.keepdims:
            grad = np.squeeze(grad, axis=self.axis)
        out = np.zeros(self.shape, dtype=grad.dtype)
        index = np.expand_dims(self.argmax, self.axis)
        np.put_along_axis(out, index, np.expand_dims(grad, self.axis), axis=self.axis)
        return (out,)


class Reshape(Function):
    def forward(self, a: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        self.shape = a.shape
        return a.reshape(shape)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad.reshape(self.shape),)


class Transpose(Function):
    def forward(self, a: np.ndarray, axes: Optional[Tuple[int, ...]]) -> np.ndarray:
        self.axes = axes if axes is not None else tuple(reversed(range(a.ndim)))
        return np.transpose(a, self.axes)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (np.transpose(grad, np.argsort(self.axes)),)


class BroadcastTo(Function):
    def forward(self, a: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        return np.broadcast_to(a, shape).copy()

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        # unbroadcast in backward() reduces to the input shape
        return (grad,)


class GetItem(Function):
    def forward(self, a: np.ndarray, index: Any) -> np.ndarray:
        self.shape, self.index = a.shape, index
        return a[index]

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        out = np.zeros(self.shape, dtype=grad.dtype)
        np.add.at(out, self.index, grad)
        return (out,)


class Concat(Function):
    def forward(self, *arrays: np.ndarray, axis: int = 0) -> np.ndarray:
        self.axis = axis
        self.sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        cuts = np.cumsum(self.sizes)[:-1]
        return tuple(np.split(grad, cuts, axis=self.axis))


class Exp(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.out = np.exp(a)
        return self.out

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad * self.out,)


class Log(Function):
    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        return np.log(a)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad / self.a,)


class Abs(Function):
    """|x| with derivative 0 at the kink."""

    def forward(self, a: np.ndarray) -> np.ndarray:
        self.a = a
        return np.abs(a)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad * np.sign(self.a),)


class Clip(Function):
    def forward(self, a: np.ndarray, low: float, high: float) -> np.ndarray:
        self.inside = (a >= low) & (a <= high)
        return np.clip(a, low, high)

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        return (grad * self.inside,)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = []
    for t in tensors:
        shape = list(t.shape)
        position = axis if axis >= 0 else len(shape) + 1 + axis
        shape.insert(position, 1)
        expanded.append(t.reshape(tuple(shape)))
    return concat(expanded, axis=axis)
