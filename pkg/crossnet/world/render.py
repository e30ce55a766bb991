"""
Aerial rasterization and panoramic ground ray casting.

World frame: x east, y north, metres, camera nominally at the origin. The
aerial image is north-up; pixel (row, col) covers the square whose centre is
x = (col + 0.5) * mpp - extent / 2, y = extent / 2 - (row + 0.5) * mpp.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np

from crossnet.exceptions import SceneRejectedError
from crossnet.models.config_models import MAN_MADE, ROAD, SKY, VEGETATION, WorldConfig
from crossnet.models.label_models import LabelMap
from crossnet.models.scene_models import SceneSpec

logger = logging.getLogger(__name__)

GRASS, PAVEMENT, TREES, ROOF = range(4)
SURFACE_CLASS = np.array([VEGETATION, ROAD, VEGETATION, MAN_MADE])
# Base colours overlap so colour alone does not give the class away.
SURFACE_COLOR = np.array([
    [0.36, 0.50, 0.30],
    [0.46, 0.44, 0.42],
    [0.20, 0.38, 0.18],
    [0.52, 0.40, 0.36],
])


def rasterize(scene: SceneSpec, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """
    Surface code at world points; building over road over vegetation over grass.

    Roads stop at the scene square, so points beyond it never read as pavement.
    """
    surface = np.full(np.shape(xs), GRASS, dtype=np.int64)
    half = scene.extent / 2
    in_scene = (np.abs(xs) <= half) & (np.abs(ys) <= half)
    for kind, code in (("vegetation", TREES), ("road", PAVEMENT), ("building", ROOF)):
        for entity in scene.of_kind(kind):
            covered = entity.contains(xs, ys)
            surface[covered & in_scene if kind == "road" else covered] = code
    return surface


def pixel_centers(size: int, cfg: WorldConfig, center: Tuple[float, float] = (0.0, 0.0)):
    mpp = cfg.meters_per_pixel
    coords = (np.arange(size) + 0.5) * mpp - size * mpp / 2
    xs = center[0] + coords[None, :]
    ys = center[1] - coords[:, None]
    return np.broadcast_to(xs, (size, size)), np.broadcast_to(ys, (size, size))


def aerial_label_classes(scene: SceneSpec, cfg: WorldConfig,
                         center: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """Class at each aerial label-cell centre of the window around `center`."""
    span = cfg.image_size * cfg.meters_per_pixel
    u = (np.arange(cfg.w_a) + 0.5) / cfg.w_a
    v = (np.arange(cfg.h_a) + 0.5) / cfg.h_a
    xs = center[0] + (u[None, :] - 0.5) * span
    ys = center[1] + (0.5 - v[:, None]) * span
    xs, ys = np.broadcast_arrays(xs, ys)
    return SURFACE_CLASS[rasterize(scene, xs, ys)]


def render_aerial(scene: SceneSpec, cfg: WorldConfig, rng: Optional[np.random.Generator] = None,
                  size: Optional[int] = None, center: Tuple[float, float] = (0.0, 0.0)):
    """
    Colourized top-down render plus oracle labels.

    Returns (image (3, size, size) float32 in [0, 1], LabelMap of h_a x w_a).
    `size` larger than `cfg.image_size` renders a wider window for geocalibration;
    the labels always describe the standard window around `center`.
    """
    size = cfg.image_size if size is None else size
    rng = rng if rng is not None else np.random.default_rng([scene.seed, 1])
    xs, ys = pixel_centers(size, cfg, center)
    surface = rasterize(scene, xs, ys)
    image = SURFACE_COLOR[surface]
    noise = rng.normal(0.0, cfg.noise_amplitude, size=image.shape)
    # Trees get a coarse blotch pattern on top of the per-pixel noise.
    blotch = rng.normal(0.0, cfg.noise_amplitude, size=(size // 4 + 1, size // 4 + 1))
    blotch = np.repeat(np.repeat(blotch, 4, axis=0), 4, axis=1)[:size, :size]
    image = image + noise + (surface == TREES)[..., None] * blotch[..., None]
    image = np.clip(image, 0.0, 1.0).transpose(2, 0, 1).astype(np.float32)
    labels = LabelMap.from_classes(aerial_label_classes(scene, cfg, center), cfg.num_classes)
    return image, labels


def elevations(cfg: WorldConfig) -> np.ndarray:
    """Band-centre elevation in radians, row 0 highest."""
    low, high = cfg.elevation_range
    step = (high - low) / cfg.h_g
    return np.radians(high - (np.arange(cfg.h_g) + 0.5) * step)


def azimuths(cfg: WorldConfig, orientation: float = 0.0) -> np.ndarray:
    """Clockwise-from-north azimuth of every panorama column."""
    return 2 * math.pi * (np.arange(cfg.w_g) - cfg.north) / cfg.w_g + orientation


def _slab(origin: np.ndarray, direction: np.ndarray, half: float):
    """Entry/exit parameters of 2D rays against |coordinate| <= half."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - origin) / direction
        t2 = (half - origin) / direction
    parallel = np.abs(direction) < 1e-12
    inside = np.abs(origin) <= half
    lo = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    hi = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    return lo, hi


def cast_rays(scene: SceneSpec, cfg: WorldConfig, position: Tuple[float, float],
              azimuth: np.ndarray, elevation: np.ndarray) -> np.ndarray:
    """Class seen along each (elevation, azimuth) ray from a camera at `position`."""
    ox, oy = position
    height = cfg.camera_height
    phi = azimuth[None, :] * np.ones((len(elevation), 1))
    tan_e = np.tan(elevation)[:, None] * np.ones((1, len(azimuth)))
    dx, dy = np.sin(phi), np.cos(phi)

    hit_building = np.zeros(phi.shape, dtype=bool)
    for b in scene.of_kind("building"):
        along_o, across_o = b.to_local(ox, oy)
        s, c = math.sin(b.heading), math.cos(b.heading)
        along_d = dx * s + dy * c
        across_d = dx * c - dy * s
        lo1, hi1 = _slab(np.full(phi.shape, along_o), along_d, b.length / 2)
        lo2, hi2 = _slab(np.full(phi.shape, across_o), across_d, b.width / 2)
        t_in = np.maximum(np.maximum(lo1, lo2), 0.0)
        t_out = np.minimum(hi1, hi2)
        # Height constraint 0 <= height + t * tan_e <= b.height as an interval in t.
        with np.errstate(divide="ignore", invalid="ignore"):
            t_top = (b.height - height) / tan_e
            t_floor = -height / tan_e
        up = tan_e > 0
        down = tan_e < 0
        z_lo = np.where(up, -np.inf, np.where(down, t_top, -np.inf))
        z_hi = np.where(up, t_top, np.where(down, t_floor, np.inf))
        if height > b.height:
            z_hi = np.where(tan_e == 0, -np.inf, z_hi)
        lo = np.maximum(t_in, z_lo)
        hi = np.minimum(t_out, z_hi)
        hit_building |= lo <= hi

    classes = np.full(phi.shape, SKY, dtype=np.int64)
    below = tan_e < 0
    with np.errstate(divide="ignore"):
        t_ground = np.where(below, -height / np.where(below, tan_e, -1.0), 0.0)
    gx = ox + t_ground * dx
    gy = oy + t_ground * dy
    ground = SURFACE_CLASS[rasterize(scene, gx, gy)]
    classes = np.where(below, ground, classes)
    return np.where(hit_building, MAN_MADE, classes)


def ground_classes(scene: SceneSpec, cfg: WorldConfig, orientation: float = 0.0,
                   offset: Tuple[float, float] = (0.0, 0.0)) -> np.ndarray:
    """(h_g, w_g) hard classes seen from the camera at `offset`, heading `orientation`."""
    for b in scene.of_kind("building"):
        if b.contains(offset[0], offset[1]):
            raise SceneRejectedError(f"scene {scene.seed}: camera at {offset} is inside a building")
    orientation = orientation % (2 * math.pi)
    shift = orientation * cfg.w_g / (2 * math.pi)
    if abs(shift - round(shift)) < 1e-9:
        aligned = cast_rays(scene, cfg, offset, azimuths(cfg), elevations(cfg))
        return np.roll(aligned, -int(round(shift)) % cfg.w_g, axis=1)
    return cast_rays(scene, cfg, offset, azimuths(cfg, orientation), elevations(cfg))


def render_ground(scene: SceneSpec, cfg: WorldConfig, orientation: float = 0.0,
                  offset: Tuple[float, float] = (0.0, 0.0)) -> LabelMap:
    return LabelMap.from_classes(ground_classes(scene, cfg, orientation, offset), cfg.num_classes)


def flip_labels(classes: np.ndarray, rate: float, num_classes: int,
                rng: np.random.Generator) -> np.ndarray:
    """Replace each cell with a different random class with probability `rate`."""
    if rate <= 0:
        return classes
    flip = rng.random(classes.shape) < rate
    other = (classes + rng.integers(1, num_classes, size=classes.shape)) % num_classes
    return np.where(flip, other, classes)
