"""Central finite-difference checks of analytic gradients."""
import logging
from typing import Callable, Collection, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

from crossnet.engine.tensor import Tensor

logger = logging.getLogger(__name__)


class GradCheckResult(BaseModel):
    """
    Outcome of one gradient comparison.

    `analytic_norm` covers the whole backward() gradient of the checked
    tensors and `numeric_norm` the perturbed entries. A result where both
    vanish fails unless `allow_zero` is set.
    """
    model_config = ConfigDict(frozen=True)

    name: str
    rel_error: float
    analytic_norm: float
    numeric_norm: float
    entries: int
    allow_zero: bool = False

    @property
    def vanished(self) -> bool:
        return self.analytic_norm == 0.0 and self.numeric_norm == 0.0

    def passed(self, tolerance: float) -> bool:
        if self.vanished and not self.allow_zero:
            return False
        return bool(np.isfinite(self.rel_error) and self.rel_error < tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    diff = np.linalg.norm(analytic - numeric)
    denom = max(np.linalg.norm(analytic) + np.linalg.norm(numeric), 1e-12)
    return float(diff / denom)


def numerical_gradient(loss_fn: Callable[[], Tensor], tensor: Tensor,
                       indices: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of `loss_fn` with respect to selected flat entries of `tensor`."""
    flat = tensor.data.reshape(-1)
    out = np.zeros(len(indices), dtype=np.float64)
    for k, idx in enumerate(indices):
        original = flat[idx]
        flat[idx] = original + h
        f_plus = loss_fn().item()
        flat[idx] = original - h
        f_minus = loss_fn().item()
        flat[idx] = original
        out[k] = (f_plus - f_minus) / (2.0 * h)
    return out


def _sample(t: Tensor, max_entries: int, rng: np.random.Generator) -> np.ndarray:
    if t.size <= max_entries:
        return np.arange(t.size)
    return np.sort(rng.choice(t.size, size=max_entries, replace=False))


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Dict[str, Tensor],
                    h: Optional[float] = None, max_entries: int = 24,
                    rng: Optional[np.random.Generator] = None,
                    allow_zero: Collection[str] = ()) -> Dict[str, GradCheckResult]:
    """
    Compare backward() against central differences for every named tensor.

    At most `max_entries` entries per tensor are perturbed, chosen with `rng`.
    The step defaults to 1e-5 in f64 and 1e-3 in f32. Tensors named in
    `allow_zero` may have an identically zero gradient.
    """
    return check_gradient_groups(loss_fn, {name: [t] for name, t in tensors.items()}, h=h,
                                 max_entries=max_entries, rng=rng, allow_zero=allow_zero)


def check_gradient_groups(loss_fn: Callable[[], Tensor], groups: Dict[str, List[Tensor]],
                          h: Optional[float] = None, max_entries: int = 24,
                          rng: Optional[np.random.Generator] = None,
                          allow_zero: Collection[str] = ()) -> Dict[str, GradCheckResult]:
    """Like `check_gradients`, but the relative error is pooled over every tensor of a group."""
    rng = rng or np.random.default_rng(0)
    tensors = [t for members in groups.values() for t in members]
    if h is None:
        h = 1e-5 if tensors[0].dtype == np.float64 else 1e-3
    for t in tensors:
        t.zero_grad()
    loss_fn().backward()
    analytic_grads = {id(t): np.zeros(t.size) if t.grad is None else t.grad.reshape(-1).astype(np.float64)
                      for t in tensors}

    results: Dict[str, GradCheckResult] = {}
    for name, members in groups.items():
        analytic, numeric = [], []
        full_sq = 0.0
        for t in members:
            grad = analytic_grads[id(t)]
            full_sq += float(np.dot(grad, grad))
            indices = _sample(t, max_entries, rng)
            analytic.append(grad[indices])
            numeric.append(numerical_gradient(loss_fn, t, indices, h))
        a = np.concatenate(analytic)
        n = np.concatenate(numeric)
        result = GradCheckResult(name=name, rel_error=relative_error(a, n),
                                 analytic_norm=float(np.sqrt(full_sq)),
                                 numeric_norm=float(np.linalg.norm(n)), entries=len(a),
                                 allow_zero=name in allow_zero)
        if result.vanished and not result.allow_zero:
            logger.warning(f"gradcheck {name}: gradient is identically zero")
        logger.debug(f"gradcheck {name}: rel_error={result.rel_error:.3e}")
        results[name] = result
    return results
