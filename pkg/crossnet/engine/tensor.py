"""
Dense tensors with reverse-mode automatic differentiation.

A `Tensor` wraps a NumPy array. Operations are `Function` subclasses: `apply`
runs the forward pass on raw arrays and, when gradients are tracked, records
the function as the creator of the output. `ComputeGraph` orders the recorded
nodes topologically and `backward` walks them in reverse.
"""
import logging
import threading
from contextlib import contextmanager
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from crossnet.exceptions import ContractError

logger = logging.getLogger(__name__)

_DTYPES = {"f32": np.float32, "f64": np.float64}
_default_dtype = np.float32
_local = threading.local()


def get_default_dtype():
    return _default_dtype


def set_default_dtype(dtype: Union[str, type]) -> None:
    """Select f32 (default) or f64 for newly created tensors."""
    global _default_dtype
    if isinstance(dtype, str):
        if dtype not in _DTYPES:
            raise ValueError(f"unknown precision '{dtype}', expected one of {sorted(_DTYPES)}")
        dtype = _DTYPES[dtype]
    _default_dtype = np.dtype(dtype).type


@contextmanager
def default_dtype(dtype: Union[str, type]):
    previous = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(previous)


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable graph recording on the current thread."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


ArrayLike = Union[np.ndarray, float, int, Sequence]


class Function:
    """
    Base class for differentiable operations.

    `forward` receives the raw arrays of the input tensors, `backward` receives
    dL/d(output) and returns one gradient (or None) per input tensor.
    """

    def __init__(self, *inputs: "Tensor"):
        self.inputs = inputs

    def forward(self, *arrays: np.ndarray, **kwargs: Any) -> np.ndarray:
        raise NotImplementedError("Forward pass not implemented for this function")

    def backward(self, grad: np.ndarray) -> Tuple[Optional[np.ndarray], ...]:
        raise NotImplementedError("Backward pass not implemented for this function")

    @classmethod
    def apply(cls, *inputs: "Tensor", **kwargs: Any) -> "Tensor":
        func = cls(*inputs)
        out_data = func.forward(*(t.data for t in inputs), **kwargs)
        track = is_grad_enabled() and any(t.requires_grad for t in inputs)
        if not track:
            return Tensor(out_data, dtype=out_data.dtype)
        return Tensor(out_data, requires_grad=True, dtype=out_data.dtype, _creator=func)

    @staticmethod
    def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
        """Sum out broadcast dimensions so that `grad` matches `shape`."""
        if grad.shape == shape:
            return grad
        while grad.ndim > len(shape):
            grad = grad.sum(axis=0)
        for axis, extent in enumerate(shape):
            if extent == 1 and grad.shape[axis] != 1:
                grad = grad.sum(axis=axis, keepdims=True)
        return grad


class Tensor:
    """
    Dense row-major array with an optional gradient buffer.

    Leaves created with `requires_grad=True` own a zero-initialised `grad` of
    identical shape; `backward` accumulates into it until `zero_grad`.
    Non-leaf tensors keep their creator for the backward pass and no buffer.
    """

    def __init__(self, data: ArrayLike, requires_grad: bool = False,
                 dtype: Optional[type] = None, _creator: Optional[Function] = None):
        arr = np.asarray(data, dtype=dtype or _default_dtype)
        self.data: np.ndarray = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.creator = _creator
        self.grad: Optional[np.ndarray] = None
        self.grad_version = 0
        if self.requires_grad and _creator is None:
            self.grad = np.zeros_like(self.data)

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self.creator is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0)

    def backward(self) -> None:
        backward(ComputeGraph.from_outputs(self), self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        from crossnet.engine import functional as F
        return F.add(self, _as_tensor(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        from crossnet.engine import functional as F
        return F.add(self, F.scale(_as_tensor(other, self), -1.0))

    def __rsub__(self, other):
        from crossnet.engine import functional as F
        return F.add(_as_tensor(other, self), F.scale(self, -1.0))

    def __neg__(self):
        from crossnet.engine import functional as F
        return F.scale(self, -1.0)

    def __mul__(self, other):
        from crossnet.engine import functional as F
        if isinstance(other, (int, float)):
            return F.scale(self, float(other))
        return F.mul(self, _as_tensor(other, self))

    __rmul__ = __mul__

    def __matmul__(self, other):
        from crossnet.engine import functional as F
        return F.matmul(self, other)

    def reshape(self, *shape) -> "Tensor":
        from crossnet.engine import functional as F
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        from crossnet.engine import functional as F
        return F.transpose(self, axes or None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        from crossnet.engine import functional as F
        return F.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        from crossnet.engine import functional as F
        return F.mean(self, axis=axis, keepdims=keepdims)


def _as_tensor(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=like.dtype)


class ComputeGraph:
    """Topologically ordered view of the nodes reachable from some outputs."""

    def __init__(self, nodes: List[Tensor], outputs: List[Tensor]):
        self.nodes = nodes
        self.outputs = outputs

    @classmethod
    def from_outputs(cls, *outputs: Tensor) -> "ComputeGraph":
        order: List[Tensor] = []
        visited = set()
        for root in outputs:
            if id(root) in visited:
                continue
            stack = [(root, False)]
            while stack:
                node, expanded = stack.pop()
                if expanded:
                    order.append(node)
                    continue
                if id(node) in visited:
                    continue
                visited.add(id(node))
                stack.append((node, True))
                if node.creator is not None:
                    for parent in node.creator.inputs:
                        if id(parent) not in visited and parent.requires_grad:
                            stack.append((parent, False))
        return cls(order, list(outputs))

    def leaves(self) -> List[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]

    def __len__(self):
        return len(self.nodes)


def backward(graph: ComputeGraph, loss: Tensor) -> None:
    """
    Populate `grad` of every requires-grad leaf reachable from `loss`.

    Gradients accumulate across calls; a leaf feeding several consumers
    receives the sum of its branch gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        grad = grads.pop(id(node), None)
        if grad is None:
            continue
        if node.creator is None:
            if node.requires_grad:
                node.grad += grad.astype(node.data.dtype, copy=False)
                node.grad_version += 1
            continue
        input_grads = node.creator.backward(grad)
        for parent, parent_grad in zip(node.creator.inputs, input_grads):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + parent_grad
            else:
                grads[key] = parent_grad
