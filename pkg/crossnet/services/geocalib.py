"""
Orientation estimation and fine-grained geocalibration.

The model predicts ground labels from the aerial image once; every candidate
orientation is a circular column shift of the query, scored by mean per-pixel
cross-entropy against the prediction.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np

from crossnet.exceptions import ConfigError, ContractError, ShapeError
from crossnet.models.label_models import GeocalibResult, LabelMap, OrientationPDF
from crossnet.network.crossview import CrossViewModel
from crossnet.services.logging_service import logging_service

logger = logging.getLogger(__name__)

SMOOTHING_EPS = 1e-3


def default_temperature(num_classes: int) -> float:
    return 0.1 * math.log(num_classes)


def orientation_energy(query: LabelMap, prediction: LabelMap, shift: int) -> float:
    """Mean per-pixel cross-entropy of the query rolled by `shift` columns against the prediction."""
    if query.probs.shape != prediction.probs.shape:
        raise ShapeError(f"query labels {query.probs.shape} and prediction {prediction.probs.shape} differ")
    if not query.is_normalized():
        raise ContractError("query label rows must be normalized")
    log_p = np.log(np.clip(prediction.probs.astype(np.float64), 1e-300, None))
    rolled = np.roll(query.probs.astype(np.float64), shift, axis=1)
    h, w = query.shape
    return float(-(rolled * log_p).sum() / (h * w))


def orientation_energies(query: LabelMap, prediction: LabelMap) -> np.ndarray:
    return np.array([orientation_energy(query, prediction, s) for s in range(query.shape[1])])


def predicted_ground(model: CrossViewModel, aerial_image: np.ndarray) -> LabelMap:
    model.eval()
    prediction = model.predict_ground_labels(aerial_image)[0]
    if not np.all(np.isfinite(prediction.probs)):
        raise ContractError("model produced a non-finite ground label distribution")
    return prediction


def estimate_orientation(model: CrossViewModel, aerial_image: np.ndarray, query: LabelMap,
                         temperature: Optional[float] = None, smoothing: float = SMOOTHING_EPS,
                         prediction: Optional[LabelMap] = None) -> OrientationPDF:
    """Energies over every panorama column shift; the argmin bin is the heading estimate."""
    cfg = model.config
    if query.probs.shape != (cfg.h_g, cfg.w_g, cfg.num_classes):
        raise ShapeError(f"query labels {query.probs.shape} do not match the model ground grid "
                         f"{(cfg.h_g, cfg.w_g, cfg.num_classes)}")
    if prediction is None:
        prediction = predicted_ground(model, aerial_image)
    pdf = orientation_pdf(query, prediction, temperature, smoothing)
    logging_service.log_orientation(pdf.argmin_bin, pdf.best_energy, pdf.n_bins)
    return pdf


def orientation_pdf(query: LabelMap, prediction: LabelMap, temperature: Optional[float] = None,
                    smoothing: float = SMOOTHING_EPS) -> OrientationPDF:
    """Scan all column shifts of an ε-smoothed query against a fixed prediction."""
    query = query.smoothed(smoothing) if smoothing > 0 else query
    energies = orientation_energies(query, prediction)
    if not np.all(np.isfinite(energies)):
        raise ContractError("orientation energies are not finite")
    tau = default_temperature(query.num_classes) if temperature is None else temperature
    return OrientationPDF(energies=energies, temperature=tau)


def offset_grid(rows: int, cols: int, cell_px: int) -> List[Tuple[int, int]]:
    """Pixel offsets (dx, dy) of a rows x cols grid centred on zero, row-major from the north-west."""
    ys = (np.arange(rows) - (rows - 1) / 2) * cell_px
    xs = (np.arange(cols) - (cols - 1) / 2) * cell_px
    return [(int(round(x)), int(round(y))) for y in ys for x in xs]


def crop_window(large: np.ndarray, offset: Tuple[int, int], size: int) -> np.ndarray:
    """Square crop of `size` pixels centred `offset` = (dx east, dy south) pixels from the image centre."""
    _, height, width = large.shape
    left = (width - size) // 2 + offset[0]
    top = (height - size) // 2 + offset[1]
    if left < 0 or top < 0 or left + size > width or top + size > height:
        raise ConfigError(f"offset {offset} puts the {size}px crop outside the {width}x{height} aerial image")
    return large[:, top:top + size, left:left + size]


def geocalibrate(model: CrossViewModel, large_aerial: np.ndarray, query: LabelMap,
                 offsets: Sequence[Tuple[int, int]], grid_shape: Tuple[int, int],
                 meters_per_pixel: float = 1.0, threads: int = 1,
                 temperature: Optional[float] = None) -> GeocalibResult:
    """
    Orientation PDFs at every candidate crop offset of a large aerial image.

    Offsets are in pixels; the result stores them in world metres (x east,
    y north).
    """
    if not offsets:
        raise ConfigError("geocalibration needs at least one candidate offset")
    if len(offsets) != grid_shape[0] * grid_shape[1]:
        raise ConfigError(f"{len(offsets)} offsets do not fill a {grid_shape} grid")
    size = model.config.image_size
    crops = [crop_window(large_aerial, off, size) for off in offsets]
    model.eval()

    def score(crop: np.ndarray) -> OrientationPDF:
        return estimate_orientation(model, crop, query, temperature=temperature)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            pdfs = list(pool.map(score, crops))
    else:
        pdfs = [score(crop) for crop in crops]

    world = [(dx * meters_per_pixel, -dy * meters_per_pixel) for dx, dy in offsets]
    result = GeocalibResult(offsets=world, grid_shape=tuple(grid_shape), pdfs=pdfs)
    logging_service.log_geocalibration(len(offsets), result.best_offset, result.best_bin, result.best_energy)
    logger.info(f"Geocalibration best offset {result.best_offset} bin {result.best_bin} "
                f"energy {result.best_energy:.4f}")
    return result
