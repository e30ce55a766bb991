"""Adam optimizer and gradient clipping."""
import logging
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from crossnet.exceptions import ContractError
from crossnet.nn.module import Parameter
from crossnet.utils.helpers import build_model

logger = logging.getLogger(__name__)


class AdamState(BaseModel):
    """Hyperparameters, step count and per-parameter moments of one Adam run."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    lr: float = Field(default=1e-3, ge=0.0)
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0)
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0)
    eps: float = Field(default=1e-8, gt=0.0)
    step: int = 0
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)


class Adam:
    """Bias-corrected Adam over a named parameter set."""

    def __init__(self, named_params: List[Tuple[str, Parameter]], lr: float = 1e-3,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(named_params)
        self.state = build_model(AdamState, lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        if not any(p.grad_version > 0 for _, p in self.params):
            raise ContractError("adam step requested before any backward pass")
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for name, p in self.params:
            g = p.grad
            m = s.m[name]
            v = s.v[name]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * (g * g)
            if s.lr == 0.0:
                continue
            update = (m / bc1) / (np.sqrt(v / bc2) + s.eps)
            p.data -= (s.lr * update).astype(p.data.dtype)


def global_grad_norm(params: List[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for p in params)))


def clip_grad_norm(params: List[Parameter], max_norm: float) -> float:
    """Scale all gradients so their global norm is at most `max_norm`; returns the norm before clipping."""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / (norm + 1e-12)
        for p in params:
            p.grad *= p.grad.dtype.type(factor)
    return norm
