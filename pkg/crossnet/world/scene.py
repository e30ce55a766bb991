"""Seeded procedural scene layout."""
import logging
import math
from typing import List, Tuple

import numpy as np

from crossnet.exceptions import ConfigError, SceneRejectedError
from crossnet.models.config_models import WorldConfig
from crossnet.models.scene_models import CameraSpec, Entity, SceneSpec
from crossnet.world.render import ground_classes

logger = logging.getLogger(__name__)

MAX_ATTEMPTS = 64


def road_span(offset: float, heading: float, half: float) -> Tuple[Tuple[float, float], float]:
    """Centre and length of the road centreline between two edges of the scene square."""
    s, c = math.sin(heading), math.cos(heading)
    # Foot of the perpendicular from the origin, then the along-road direction.
    foot = np.array([offset * c, -offset * s])
    direction = np.array([s, c])
    lo, hi = -np.inf, np.inf
    for axis in range(2):
        if abs(direction[axis]) < 1e-12:
            continue
        t1 = (-half - foot[axis]) / direction[axis]
        t2 = (half - foot[axis]) / direction[axis]
        lo, hi = max(lo, min(t1, t2)), min(hi, max(t1, t2))
    mid = foot + direction * (lo + hi) / 2
    return (float(mid[0]), float(mid[1])), float(hi - lo)


def _roads(rng: np.random.Generator, cfg: WorldConfig) -> List[Entity]:
    roads = []
    for _ in range(int(rng.integers(cfg.min_roads, cfg.max_roads + 1))):
        heading = float(rng.uniform(0.0, math.pi))
        width = float(rng.uniform(*cfg.road_width))
        # Perpendicular offset within the clearance radius.
        limit = min(cfg.clearance, cfg.extent / 4)
        offset = float(rng.uniform(-limit, limit))
        center, length = road_span(offset, heading, cfg.extent / 2)
        roads.append(Entity(kind="road", center=center, length=length, width=width, heading=heading))
    return roads


def _patch_center(rng: np.random.Generator, cfg: WorldConfig, min_radius: float):
    half = cfg.extent / 2
    while True:
        x, y = rng.uniform(-half + 2, half - 2, size=2)
        if math.hypot(x, y) >= min_radius:
            return float(x), float(y)


def _vegetation(rng: np.random.Generator, cfg: WorldConfig) -> List[Entity]:
    patches = []
    for _ in range(int(rng.integers(0, cfg.max_vegetation + 1))):
        center = _patch_center(rng, cfg, min(cfg.clearance, cfg.extent / 2 - 2))
        patches.append(Entity(kind="vegetation", center=center,
                              length=float(rng.uniform(4.0, 12.0)), width=float(rng.uniform(4.0, 10.0)),
                              heading=float(rng.uniform(0.0, math.pi))))
    return patches


def _building(rng: np.random.Generator, cfg: WorldConfig) -> Entity:
    length = float(rng.uniform(6.0, 14.0))
    width = float(rng.uniform(5.0, 10.0))
    radius = cfg.clearance + math.hypot(length, width) / 2
    center = _patch_center(rng, cfg, min(radius, cfg.extent / 2 - 2))
    return Entity(kind="building", center=center, length=length, width=width,
                  heading=float(rng.uniform(0.0, math.pi)),
                  height=float(rng.uniform(*cfg.building_height)))


def _buildings(rng: np.random.Generator, cfg: WorldConfig) -> List[Entity]:
    buildings = []
    for _ in range(int(rng.integers(0, cfg.max_buildings + 1))):
        candidate = _building(rng, cfg)
        if not candidate.contains(0.0, 0.0):
            buildings.append(candidate)
    return buildings


def is_asymmetric(classes: np.ndarray) -> bool:
    """True when circular column autocorrelation of a ground label map peaks only at shift 0."""
    total = classes.size
    for shift in range(1, classes.shape[1]):
        if int(np.sum(np.roll(classes, shift, axis=1) == classes)) >= total:
            return False
    return True


def generate_scene(seed: int, cfg: WorldConfig) -> SceneSpec:
    """
    Random but reproducible layout around a camera at the world origin.

    With `cfg.asymmetric` the layout is regenerated from derived seed streams
    until the aligned ground render has no circular symmetry.
    """
    if cfg.extent <= 0:
        raise ConfigError(f"scene extent must be positive, got {cfg.extent}")
    camera = CameraSpec(position=(0.0, 0.0), height=cfg.camera_height, w_pano=cfg.w_g, h_pano=cfg.h_g)
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        entities = _vegetation(rng, cfg) + _roads(rng, cfg) + _buildings(rng, cfg)
        scene = SceneSpec(seed=seed, extent=cfg.extent, entities=entities, camera=camera)
        if not cfg.asymmetric:
            return scene
        try:
            if is_asymmetric(ground_classes(scene, cfg)):
                return scene
        except SceneRejectedError:
            continue
        logger.debug(f"Scene {seed} attempt {attempt} is symmetric, regenerating")
    raise ConfigError(f"no asymmetric layout found for seed {seed} in {MAX_ATTEMPTS} attempts")
