from pydantic import BaseModel, ConfigDict, model_validator
from typing import Dict, List, Optional, Tuple
import math

import numpy as np

from crossnet.exceptions import ShapeError, TargetValidationError


class LabelMap(BaseModel):
    """Per-cell class distribution of shape (h, w, K)."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    probs: np.ndarray

    @model_validator(mode="after")
    def check_probs(self):
        if self.probs.ndim != 3:
            raise ShapeError(f"label map must be (h, w, K), got {self.probs.shape}")
        return self

    @classmethod
    def from_classes(cls, classes: np.ndarray, num_classes: int) -> "LabelMap":
        classes = np.asarray(classes, dtype=np.int64)
        if classes.min(initial=0) < 0 or classes.max(initial=0) >= num_classes:
            raise TargetValidationError(f"class ids must lie in [0, {num_classes})")
        return cls(probs=np.eye(num_classes, dtype=np.float32)[classes])

    @classmethod
    def from_logits(cls, logits: np.ndarray, shape: Tuple[int, int]) -> "LabelMap":
        logits = np.asarray(logits, dtype=np.float64).reshape(shape[0], shape[1], -1)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return cls(probs=e / e.sum(axis=-1, keepdims=True))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probs.shape[0], self.probs.shape[1]

    @property
    def num_classes(self) -> int:
        return self.probs.shape[2]

    def argmax(self) -> np.ndarray:
        return self.probs.argmax(axis=-1)

    def rows(self) -> np.ndarray:
        """Flatten to (h*w, K) in row-major cell order."""
        return self.probs.reshape(-1, self.num_classes)

    def is_normalized(self, tolerance: float = 1e-5) -> bool:
        return bool(np.all(np.abs(self.probs.sum(axis=-1) - 1.0) <= tolerance))

    def smoothed(self, eps: float = 1e-3) -> "LabelMap":
        p = self.probs.astype(np.float64) + eps
        return LabelMap(probs=p / p.sum(axis=-1, keepdims=True))

    def shifted(self, columns: int) -> "LabelMap":
        """Circularly shift along the panorama columns."""
        return LabelMap(probs=np.roll(self.probs, columns, axis=1))


class AlignedPair(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    aerial_image: np.ndarray
    aerial_labels: LabelMap
    ground_labels: LabelMap
    true_orientation: float = 0.0
    scene_seed: int = 0
    camera_offset: Tuple[float, float] = (0.0, 0.0)

    @model_validator(mode="after")
    def check_pair(self):
        if not 0.0 <= self.true_orientation < 2 * math.pi:
            raise ValueError(f"orientation {self.true_orientation} outside [0, 2pi)")
        if not (self.aerial_labels.is_normalized() and self.ground_labels.is_normalized()):
            raise TargetValidationError("pair label rows must be normalized")
        return self

    def meta_vector(self) -> np.ndarray:
        return np.array([self.scene_seed, self.camera_offset[0], self.camera_offset[1],
                         self.true_orientation], dtype=np.float64)


class OrientationPDF(BaseModel):
    """Energies over candidate orientations, one per panorama column shift."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    energies: np.ndarray
    temperature: float

    @property
    def n_bins(self) -> int:
        return len(self.energies)

    @property
    def probs(self) -> np.ndarray:
        z = -(self.energies - self.energies.min()) / self.temperature
        e = np.exp(z)
        return e / e.sum()

    @property
    def argmin_bin(self) -> int:
        return int(np.argmin(self.energies))

    @property
    def best_energy(self) -> float:
        return float(self.energies[self.argmin_bin])

    @property
    def peak_probability(self) -> float:
        return float(self.probs.max())

    def bin_to_radians(self, bin_index: int) -> float:
        return 2 * math.pi * (bin_index % self.n_bins) / self.n_bins

    @property
    def best_orientation(self) -> float:
        return self.bin_to_radians(self.argmin_bin)


class GeocalibResult(BaseModel):
    """Orientation PDFs over a grid of candidate camera offsets."""
    model_config = ConfigDict(arbitrary_types_allowed=True)

    offsets: List[Tuple[float, float]]
    grid_shape: Tuple[int, int]
    pdfs: List[OrientationPDF]

    @property
    def best_energy_map(self) -> np.ndarray:
        return np.array([p.best_energy for p in self.pdfs]).reshape(self.grid_shape)

    @property
    def best_index(self) -> int:
        return int(np.argmin([p.best_energy for p in self.pdfs]))

    @property
    def best_offset(self) -> Tuple[float, float]:
        return self.offsets[self.best_index]

    @property
    def best_bin(self) -> int:
        return self.pdfs[self.best_index].argmin_bin

    @property
    def best_energy(self) -> float:
        return self.pdfs[self.best_index].best_energy

    def to_text(self) -> str:
        """One line per (offset, bin): offset_x offset_y bin energy prob."""
        lines = []
        for (ox, oy), pdf in zip(self.offsets, self.pdfs):
            probs = pdf.probs
            for b in range(pdf.n_bins):
                lines.append(f"{ox:.6f} {oy:.6f} {b} {pdf.energies[b]:.9g} {probs[b]:.9g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, grid_shape: Tuple[int, int], temperature: float) -> "GeocalibResult":
        rows: Dict[Tuple[float, float], List[Tuple[int, float]]] = {}
        order: List[Tuple[float, float]] = []
        for line in text.strip().splitlines():
            ox, oy, b, energy, _ = line.split()
            key = (float(ox), float(oy))
            if key not in rows:
                rows[key] = []
                order.append(key)
            rows[key].append((int(b), float(energy)))
        pdfs = []
        for key in order:
            entries = sorted(rows[key])
            pdfs.append(OrientationPDF(energies=np.array([e for _, e in entries]),
                                       temperature=temperature))
        return cls(offsets=order, grid_shape=grid_shape, pdfs=pdfs)


__all__ = ["LabelMap", "AlignedPair", "OrientationPDF", "GeocalibResult"]
