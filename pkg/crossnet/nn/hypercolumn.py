"""Hypercolumn assembly: multi-stage features sampled at shared normalized points."""
from typing import List

import numpy as np

from crossnet.engine import functional as F
from crossnet.engine.tensor import Tensor
from crossnet.exceptions import ConfigError, ShapeError


def cell_centers(height: int, width: int) -> np.ndarray:
    """Normalized (u, v) centres of a height x width grid in row-major order."""
    v, u = np.meshgrid((np.arange(height) + 0.5) / height, (np.arange(width) + 0.5) / width,
                       indexing="ij")
    return np.stack([u.reshape(-1), v.reshape(-1)], axis=-1)


def hypercolumn(feature_maps: List[Tensor], query_points: np.ndarray) -> Tensor:
    """
    Bilinearly sample every tapped map at each point and concatenate channels.

    `feature_maps` are (N, C_s, H_s, W_s); `query_points` is (P, 2) shared by
    the batch or (N, P, 2). Returns (N, P, sum C_s).
    """
    if not feature_maps:
        raise ConfigError("hypercolumn needs at least one tapped feature map")
    batch = feature_maps[0].shape[0]
    points = np.asarray(query_points, dtype=np.float64)
    if points.ndim == 2:
        points = np.broadcast_to(points, (batch,) + points.shape)
    if points.ndim != 3 or points.shape[-1] != 2:
        raise ShapeError(f"query points must be (P, 2) or (N, P, 2), got {points.shape}")
    samples = [F.bilinear_sample(fmap, points) for fmap in feature_maps]
    return samples[0] if len(samples) == 1 else F.concat(samples, axis=-1)
