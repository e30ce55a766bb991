"""
Deterministic PPM renders of label maps, transforms and orientation maps.

Every renderer is a pure function of its inputs and the RenderSpec; output
files are binary PPM (P6) so identical inputs give identical bytes.
"""
import logging
import math
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from crossnet.exceptions import ConfigError, ShapeError
from crossnet.models.config_models import CrossViewConfig, RenderSpec
from crossnet.models.label_models import GeocalibResult, LabelMap
from crossnet.network.crossview import CrossViewModel

logger = logging.getLogger(__name__)

TRANSFORM_MODES = ("raw", "cellgrid", "fields")
FIELD_COLORS = [(255, 0, 0), (0, 255, 255), (255, 0, 255), (255, 255, 0), (0, 128, 255), (255, 128, 0)]

PathLike = Union[str, Path]


# -- PPM ---------------------------------------------------------------------

def encode_ppm(rgb: np.ndarray) -> bytes:
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ShapeError(f"PPM needs an (H, W, 3) image, got {rgb.shape}")
    height, width, _ = rgb.shape
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()


def write_ppm(path: PathLike, rgb: np.ndarray) -> Path:
    path = Path(path)
    path.write_bytes(encode_ppm(rgb))
    logger.debug(f"Wrote {path} ({rgb.shape[1]}x{rgb.shape[0]})")
    return path


def read_ppm(path: PathLike) -> np.ndarray:
    raw = Path(path).read_bytes()
    magic, dims, maxval, body = raw.split(b"\n", 3)
    if magic != b"P6" or maxval != b"255":
        raise ConfigError(f"{path} is not an 8-bit binary PPM")
    width, height = (int(v) for v in dims.split())
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width, 3)


def upscale(rgb: np.ndarray, scale: int) -> np.ndarray:
    if scale == 1:
        return rgb
    return np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)


# -- label maps ----------------------------------------------------------------

def labelmap_to_rgb(labels: Union[LabelMap, np.ndarray], spec: Optional[RenderSpec] = None) -> np.ndarray:
    """Argmax class per cell mapped through the palette, nearest-neighbour upscaled."""
    spec = spec or RenderSpec()
    classes = labels.argmax() if isinstance(labels, LabelMap) else np.asarray(labels, dtype=np.int64)
    unknown = sorted(set(np.unique(classes).tolist()) - set(spec.palette))
    if unknown:
        raise ConfigError(f"class ids {unknown} have no palette colour")
    lut = np.zeros((max(spec.palette) + 1, 3), dtype=np.uint8)
    for cls_id, rgb in spec.palette.items():
        lut[cls_id] = rgb
    return upscale(lut[classes], spec.scale)


def render_labelmap(labels: Union[LabelMap, np.ndarray], path: PathLike,
                    spec: Optional[RenderSpec] = None) -> Path:
    return write_ppm(path, labelmap_to_rgb(labels, spec))


# -- transform matrix ------------------------------------------------------------

def to_gray(values: np.ndarray) -> np.ndarray:
    """Min/max normalize to 0..255; a constant array renders mid-gray."""
    values = values.astype(np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi - lo <= 0:
        return np.full(values.shape, 128, dtype=np.uint8)
    return np.rint((values - lo) / (hi - lo) * 255).astype(np.uint8)


def cellgrid_layout(matrix: np.ndarray, config: CrossViewConfig) -> np.ndarray:
    """Tile (y, x) holds row r = y * w_g + x reshaped to h_a x w_a."""
    h_a, w_a, h_g, w_g = config.h_a, config.w_a, config.h_g, config.w_g
    if matrix.shape != (h_g * w_g, h_a * w_a):
        raise ShapeError(f"transform matrix {matrix.shape} does not match {(h_g * w_g, h_a * w_a)}")
    return matrix.reshape(h_g, w_g, h_a, w_a).transpose(0, 2, 1, 3).reshape(h_g * h_a, w_g * w_a)


def transform_matrix_image(matrix: np.ndarray, config: CrossViewConfig, mode: str = "raw",
                           scale: int = 1) -> np.ndarray:
    if mode == "raw":
        values = matrix
    elif mode == "cellgrid":
        values = cellgrid_layout(matrix, config)
    else:
        raise ConfigError(f"unknown transform render mode {mode!r}")
    gray = to_gray(values)
    return upscale(np.repeat(gray[..., None], 3, axis=2), scale)


def check_transform_size(config: CrossViewConfig) -> None:
    entries = config.ground_cells * config.aerial_cells
    if entries > config.max_naive_entries:
        raise ConfigError(f"full transform has {entries} entries, above the render guard of "
                          f"{config.max_naive_entries}")


def render_transform_matrix(model: CrossViewModel, aerial_image: np.ndarray, path: PathLike,
                            mode: str = "raw", spec: Optional[RenderSpec] = None,
                            ground_pixels: Optional[Sequence[Tuple[int, int]]] = None) -> Path:
    spec = spec or RenderSpec()
    if mode not in TRANSFORM_MODES:
        raise ConfigError(f"unknown transform render mode {mode!r}; expected one of {TRANSFORM_MODES}")
    check_transform_size(model.config)
    if mode == "fields":
        return write_ppm(path, receptive_field_image(model, aerial_image, ground_pixels, spec))
    model.eval()
    matrix = model.full_transform_matrix(aerial_image)[0]
    return write_ppm(path, transform_matrix_image(matrix, model.config, mode, spec.scale))


def default_ground_pixels(config: CrossViewConfig) -> List[Tuple[int, int]]:
    """Four pixels on the lowest band: north, east, south and west of the panorama."""
    y = config.h_g - 1
    north = config.w_g // 2
    return [(y, (north + k * config.w_g // 4) % config.w_g) for k in range(4)]


def receptive_field_image(model: CrossViewModel, aerial_image: np.ndarray,
                          ground_pixels: Optional[Sequence[Tuple[int, int]]] = None,
                          spec: Optional[RenderSpec] = None, quantile: float = 0.9) -> np.ndarray:
    """Aerial image with, per ground pixel, the cells in the top `quantile` of its M row tinted."""
    spec = spec or RenderSpec()
    cfg = model.config
    pixels = list(ground_pixels) if ground_pixels else default_ground_pixels(cfg)
    for y, x in pixels:
        if not (0 <= y < cfg.h_g and 0 <= x < cfg.w_g):
            raise ConfigError(f"ground pixel {(y, x)} outside the {cfg.h_g}x{cfg.w_g} grid")
    model.eval()
    matrix = model.full_transform_matrix(aerial_image)[0]
    image = np.asarray(aerial_image, dtype=np.float64)
    base = np.clip(np.rint(image.transpose(1, 2, 0) * 255), 0, 255)
    size = base.shape[0]
    cell_rows = (np.arange(size) * cfg.h_a) // size
    cell_cols = (np.arange(size) * cfg.w_a) // size
    cell_index = cell_rows[:, None] * cfg.w_a + cell_cols[None, :]
    out = base.copy()
    for k, (y, x) in enumerate(pixels):
        row = matrix[y * cfg.w_g + x]
        marked = row >= np.quantile(row, quantile)
        mask = marked[cell_index]
        color = np.array(FIELD_COLORS[k % len(FIELD_COLORS)], dtype=np.float64)
        out[mask] = 0.5 * out[mask] + 0.5 * color
    return upscale(np.rint(out).astype(np.uint8), spec.scale)


# -- orientation maps ------------------------------------------------------------

def bresenham(x0: int, y0: int, x1: int, y1: int) -> Iterator[Tuple[int, int]]:
    dx, dy = abs(x1 - x0), -abs(y1 - y0)
    sx = 1 if x0 < x1 else -1
    sy = 1 if y0 < y1 else -1
    err = dx + dy
    while True:
        yield x0, y0
        if x0 == x1 and y0 == y1:
            return
        e2 = 2 * err
        if e2 >= dy:
            err += dy
            x0 += sx
        if e2 <= dx:
            err += dx
            y0 += sy


def draw_line(canvas: np.ndarray, start: Tuple[int, int], end: Tuple[int, int],
              color: Tuple[int, int, int]) -> None:
    height, width, _ = canvas.shape
    for x, y in bresenham(start[0], start[1], end[0], end[1]):
        if 0 <= x < width and 0 <= y < height:
            canvas[y, x] = color


def heading_endpoint(center: Tuple[int, int], angle: float, length: float) -> Tuple[int, int]:
    """Image-space end point of a ray clockwise from north (up) by `angle`."""
    return (int(round(center[0] + length * math.sin(angle))),
            int(round(center[1] - length * math.cos(angle))))


def cell_center(index: int, grid_shape: Tuple[int, int], cell_px: int) -> Tuple[int, int]:
    row, col = divmod(index, grid_shape[1])
    return col * cell_px + cell_px // 2, row * cell_px + cell_px // 2


def arrow_segments(result: GeocalibResult, spec: RenderSpec) -> List[Tuple[Tuple[int, int], Tuple[int, int]]]:
    """Shaft of every grid cell's arrow: argmin heading, length proportional to peak probability."""
    max_len = spec.cell_px / 2 - 1
    segments = []
    for index, pdf in enumerate(result.pdfs):
        center = cell_center(index, result.grid_shape, spec.cell_px)
        length = max(1.0, pdf.peak_probability * max_len)
        segments.append((center, heading_endpoint(center, pdf.best_orientation, length)))
    return segments


def _draw_arrow(canvas, start, end, angle, color):
    draw_line(canvas, start, end, color)
    head = max(1.0, 0.3 * math.hypot(end[0] - start[0], end[1] - start[1]))
    for side in (-1, 1):
        draw_line(canvas, end, heading_endpoint(end, angle + math.pi + side * math.pi / 6, head), color)


def _draw_frustum(canvas, center, angle, half_width, length, color):
    for side in (-1, 1):
        draw_line(canvas, center, heading_endpoint(center, angle + side * half_width, length), color)


def orientation_map_image(result: GeocalibResult, spec: Optional[RenderSpec] = None,
                          truth: Optional[Tuple[int, float]] = None, show_best: bool = True) -> np.ndarray:
    """
    Orientation flow map: one arrow per candidate location.

    `truth` is (cell index, heading in radians) of the ground-truth camera.
    """
    spec = spec or RenderSpec()
    if not result.pdfs:
        raise ConfigError("cannot render an orientation map for an empty grid")
    rows, cols = result.grid_shape
    canvas = np.empty((rows * spec.cell_px, cols * spec.cell_px, 3), dtype=np.uint8)
    canvas[...] = spec.background
    for (start, end), pdf in zip(arrow_segments(result, spec), result.pdfs):
        _draw_arrow(canvas, start, end, pdf.best_orientation, spec.arrow_color)
    half_width = math.pi / result.pdfs[0].n_bins
    length = 0.45 * spec.cell_px
    if show_best:
        best = result.best_index
        _draw_frustum(canvas, cell_center(best, result.grid_shape, spec.cell_px),
                      result.pdfs[best].best_orientation, half_width, length, spec.best_color)
    if truth is not None:
        index, heading = truth
        _draw_frustum(canvas, cell_center(index, result.grid_shape, spec.cell_px),
                      heading, half_width, length, spec.truth_color)
    return upscale(canvas, spec.scale)


def render_orientation_map(result: GeocalibResult, path: PathLike, spec: Optional[RenderSpec] = None,
                           truth: Optional[Tuple[int, float]] = None) -> Path:
    return write_ppm(path, orientation_map_image(result, spec, truth))
