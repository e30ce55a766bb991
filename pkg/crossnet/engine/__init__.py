# Tensor engine: dense tensors with reverse-mode automatic differentiation
from crossnet.engine.tensor import (
    ComputeGraph,
    Function,
    Tensor,
    backward,
    default_dtype,
    get_default_dtype,
    no_grad,
    set_default_dtype,
)

__all__ = [
    "ComputeGraph",
    "Function",
    "Tensor",
    "backward",
    "default_dtype",
    "get_default_dtype",
    "no_grad",
    "set_default_dtype",
]
