from pydantic import BaseModel, Field
from typing import Dict, List, Optional, Tuple
import math

from crossnet.models.config_models import CLASS_NAMES


def _fmt(value: Optional[float]) -> str:
    return "nan" if value is None else f"{value:.9g}"


def class_name(index: int) -> str:
    return CLASS_NAMES[index] if index < len(CLASS_NAMES) else f"class{index}"


class EvalMetrics(BaseModel):
    pixel_accuracy: float
    mean_cross_entropy: float
    precision: List[Optional[float]]
    recall: List[Optional[float]]
    pixels: int

    @property
    def mean_precision(self) -> Optional[float]:
        defined = [p for p in self.precision if p is not None]
        return sum(defined) / len(defined) if defined else None

    def as_dict(self) -> Dict[str, Optional[float]]:
        out: Dict[str, Optional[float]] = {
            "accuracy": self.pixel_accuracy,
            "cross_entropy": self.mean_cross_entropy,
            "mean_precision": self.mean_precision,
        }
        for k, (p, r) in enumerate(zip(self.precision, self.recall)):
            out[f"precision_{class_name(k)}"] = p
            out[f"recall_{class_name(k)}"] = r
        return out

    def to_text(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.as_dict().items())


class TrainLog(BaseModel):
    """Per-step losses and per-epoch evaluation metrics of one run."""
    steps: List[Tuple[int, float]] = Field(default_factory=list)
    epochs: List[Tuple[int, EvalMetrics]] = Field(default_factory=list)
    wall_time: float = 0.0

    def record_step(self, step: int, loss: float):
        if not math.isfinite(loss):
            raise ValueError(f"non-finite loss at step {step}")
        self.steps.append((step, loss))

    def to_text(self) -> str:
        """Line-oriented log: `step loss` and `epoch N metric=value ...`."""
        lines = [f"{step} {loss:.9g}" for step, loss in self.steps]
        lines += [f"epoch {epoch} {metrics.to_text()}" for epoch, metrics in self.epochs]
        return "\n".join(lines) + "\n"


class PropertyResult(BaseModel):
    suite: str
    name: str
    passed: bool
    detail: str = ""

    def to_text(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.suite}/{self.name}: {self.detail}"


class ComparisonRow(BaseModel):
    """Mean precision of both initializations at one training-set size."""
    size: int
    pretrained: float
    random: float
    repeats: int

    def to_text(self) -> str:
        return f"n={self.size} pretrained={self.pretrained:.6f} random={self.random:.6f} repeats={self.repeats}"
