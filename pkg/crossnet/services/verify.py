"""
Property suites behind `crossnet verify`.

Each check returns a PropertyResult; a suite never raises for a failing
property, only for an unknown suite name.
"""
import logging
import math
from typing import Callable, Dict, List

import numpy as np

from crossnet.engine import functional as F
from crossnet.engine.gradcheck import check_gradient_groups
from crossnet.engine.tensor import Tensor, default_dtype, no_grad
from crossnet.exceptions import ConfigError
from crossnet.models.config_models import CrossViewConfig, ROAD, WorldConfig
from crossnet.models.label_models import LabelMap
from crossnet.models.result_models import PropertyResult
from crossnet.network.crossview import CrossViewModel
from crossnet.nn.optim import Adam
from crossnet.services.geocalib import orientation_pdf
from crossnet.services.labelviz import cellgrid_layout
from crossnet.services.logging_service import logging_service
from crossnet.world.render import azimuths, elevations, ground_classes
from crossnet.world.scene import generate_scene

logger = logging.getLogger(__name__)

GRAD_TOLERANCE = 1e-6
EQUIVALENCE_TOLERANCE = 1e-6
ROW_SUM_TOLERANCE = 1e-5


def _result(suite: str, name: str, passed: bool, detail: str) -> PropertyResult:
    result = PropertyResult(suite=suite, name=name, passed=bool(passed), detail=detail)
    logging_service.log_verify_property(suite, name, result.passed, detail)
    return result


def random_images(rng: np.random.Generator, n: int, size: int) -> np.ndarray:
    return rng.uniform(0.0, 1.0, size=(n, 3, size, size))


def parameter_groups(model: CrossViewModel) -> Dict[str, List[Tensor]]:
    groups: Dict[str, List[Tensor]] = {"A": [], "S": [], "F": [], "b": []}
    for name, p in model.named_parameters():
        groups[name.split(".")[0]].append(p)
    return {k: v for k, v in groups.items() if v}


# -- grad ----------------------------------------------------------------------

def grad_suite(seed: int = 0) -> List[PropertyResult]:
    """End-to-end finite differences on the tiny shape in f64, per parameter group."""
    results = []
    with default_dtype("f64"):
        rng = np.random.default_rng(seed)
        model = CrossViewModel(CrossViewConfig.tiny(seed=seed))
        cfg = model.config
        images = Tensor(random_images(rng, 4, cfg.image_size))
        targets = rng.dirichlet(np.ones(cfg.num_classes), size=4 * cfg.ground_cells)

        def loss_fn():
            logits = model.predict_ground(images)
            return F.cross_entropy(logits.reshape(-1, cfg.num_classes), targets)

        checks = check_gradient_groups(loss_fn, parameter_groups(model), rng=rng)
    for name, check in checks.items():
        results.append(_result("grad", f"theta_{name}", check.passed(GRAD_TOLERANCE),
                               f"rel_error={check.rel_error:.3e} norm={check.analytic_norm:.3e} "
                               f"entries={check.entries}"))
    return results


# -- invariants ------------------------------------------------------------------

def check_row_stochastic(draws: int = 100, seed: int = 0) -> PropertyResult:
    worst = 0.0
    negative = False
    per_model = 10
    for m in range(max(1, draws // per_model)):
        model = CrossViewModel(CrossViewConfig.tiny(seed=seed + m)).eval()
        rng = np.random.default_rng([seed, m])
        images = random_images(rng, per_model, model.config.image_size)
        matrix = model.full_transform_matrix(images)
        worst = max(worst, float(np.abs(matrix.sum(axis=-1) - 1.0).max()))
        negative |= bool(np.any(matrix < 0))
    return _result("invariants", "row_stochastic", worst <= ROW_SUM_TOLERANCE and not negative,
                   f"max |row_sum - 1| = {worst:.3e}")


def check_sparse_full(seed: int = 0) -> PropertyResult:
    err = 0.0
    with default_dtype("f64"):
        model = CrossViewModel(CrossViewConfig.tiny(seed=seed))
        rng = np.random.default_rng(seed)
        images = random_images(rng, 3, model.config.image_size)
        rows = np.sort(rng.choice(model.config.ground_cells, size=3, replace=False))
        # Train mode normalizes with batch statistics, eval mode with running ones.
        for training in (True, False):
            model.train(training)
            with no_grad():
                full = model.predict_ground(images).data
                sparse = model.predict_ground(images, rows).data
                single = np.concatenate([model.predict_ground(images, [r]).data for r in rows], axis=1)
            err = max(err, float(np.abs(full[:, rows] - sparse).max()), float(np.abs(sparse - single).max()))
    return _result("invariants", "sparse_full_equivalence", err <= EQUIVALENCE_TOLERANCE,
                   f"max abs diff = {err:.3e} (train and eval)")


def check_convex_hull(seed: int = 0) -> PropertyResult:
    with default_dtype("f64"):
        model = CrossViewModel(CrossViewConfig.tiny(seed=seed)).eval()
        images = random_images(np.random.default_rng(seed), 2, model.config.image_size)
        with no_grad():
            f_a = model.aerial_features(images).data
            f_g = model.predict_ground(images).data
    lo = f_a.min(axis=1, keepdims=True) - 1e-9
    hi = f_a.max(axis=1, keepdims=True) + 1e-9
    inside = bool(np.all((f_g >= lo) & (f_g <= hi)))
    return _result("invariants", "convex_hull", inside, "zero bias keeps f_g' inside the f_a hull")


def check_adam_zero_lr(seed: int = 0) -> PropertyResult:
    model = CrossViewModel(CrossViewConfig.tiny(seed=seed))
    cfg = model.config
    rng = np.random.default_rng(seed)
    images = random_images(rng, 2, cfg.image_size)
    before = {k: p.data.copy() for k, p in model.named_parameters()}
    optimizer = Adam(model.named_parameters(), lr=0.0)
    logits = model.predict_ground(images)
    targets = np.eye(cfg.num_classes)[rng.integers(0, cfg.num_classes, size=2 * cfg.ground_cells)]
    F.cross_entropy(logits.reshape(-1, cfg.num_classes), targets).backward()
    optimizer.step()
    same = all(np.array_equal(before[k], p.data) for k, p in model.named_parameters())
    return _result("invariants", "adam_zero_lr", same, "lr=0 step leaves parameters bit-identical")


def check_softmax_stability() -> PropertyResult:
    x = Tensor(np.array([[1e3, -1e3, 0.0, 999.0], [-1e3, -1e3, -1e3, -1e3]]))
    p = F.softmax(x).data
    wrong = np.array([[0.0, 1.0, 0.0, 0.0]] * 2)
    smoothed = LabelMap(probs=wrong[None]).smoothed().probs[0]
    ce = F.cross_entropy(x, smoothed).item()
    ok = bool(np.all(np.isfinite(p)) and np.allclose(p.sum(axis=-1), 1.0) and math.isfinite(ce))
    return _result("invariants", "softmax_stability", ok, f"large-logit softmax finite, ce={ce:.3f}")


def invariants_suite(seed: int = 0) -> List[PropertyResult]:
    return [check_row_stochastic(seed=seed), check_sparse_full(seed), check_convex_hull(seed),
            check_adam_zero_lr(seed), check_softmax_stability()]


# -- oracle ----------------------------------------------------------------------

def check_rotation_equivariance(cfg: WorldConfig, seeds) -> PropertyResult:
    bad = []
    for seed in seeds:
        scene = generate_scene(seed, cfg)
        base = ground_classes(scene, cfg)
        for s in range(cfg.w_g):
            rotated = ground_classes(scene, cfg, 2 * math.pi * s / cfg.w_g)
            if not np.array_equal(rotated, np.roll(base, -s, axis=1)):
                bad.append((seed, s))
    return _result("oracle", "rotation_equivariance", not bad, f"mismatches={bad[:5]}")


def check_road_rays(cfg: WorldConfig, seeds) -> PropertyResult:
    """Re-derive every road pixel's ground hit with plain trigonometry."""
    bad = 0
    for seed in seeds:
        scene = generate_scene(seed, cfg)
        classes = ground_classes(scene, cfg)
        elev, azim = elevations(cfg), azimuths(cfg)
        roads = scene.of_kind("road")
        for y, x in zip(*np.nonzero(classes == ROAD)):
            distance = cfg.camera_height / math.tan(-elev[y])
            px, py = distance * math.sin(azim[x]), distance * math.cos(azim[x])
            if not any(bool(r.contains(px, py)) for r in roads):
                bad += 1
    return _result("oracle", "road_ray_consistency", bad == 0, f"inconsistent road pixels={bad}")


def check_determinism(cfg: WorldConfig, seeds) -> PropertyResult:
    same = all(generate_scene(s, cfg).model_dump_json() == generate_scene(s, cfg).model_dump_json()
               for s in seeds)
    return _result("oracle", "scene_determinism", same, "same seed gives identical scenes")


def check_orientation_oracle(cfg: WorldConfig, seeds) -> PropertyResult:
    """With the true aligned labels as prediction, the argmin bin must equal the rendered shift."""
    misses = []
    for seed in seeds:
        scene = generate_scene(seed, cfg)
        truth = LabelMap.from_classes(ground_classes(scene, cfg), cfg.num_classes).smoothed(0.05)
        s = int(np.random.default_rng(seed).integers(cfg.w_g))
        query = LabelMap.from_classes(ground_classes(scene, cfg, 2 * math.pi * s / cfg.w_g), cfg.num_classes)
        pdf = orientation_pdf(query, truth)
        if pdf.argmin_bin != s:
            misses.append((seed, s, pdf.argmin_bin))
    return _result("oracle", "orientation_oracle", not misses, f"misses={misses[:5]}")


def check_cellgrid_mapping(seed: int = 0) -> PropertyResult:
    cfg = CrossViewConfig.tiny()
    matrix = np.random.default_rng(seed).random((cfg.ground_cells, cfg.aerial_cells))
    grid = cellgrid_layout(matrix, cfg)
    ok = all(np.array_equal(grid[y * cfg.h_a:(y + 1) * cfg.h_a, x * cfg.w_a:(x + 1) * cfg.w_a],
                            matrix[y * cfg.w_g + x].reshape(cfg.h_a, cfg.w_a))
             for y in range(cfg.h_g) for x in range(cfg.w_g))
    return _result("oracle", "cellgrid_mapping", ok, "tile (y, x) equals reshaped row y*w_g+x")


def oracle_suite(seed: int = 0) -> List[PropertyResult]:
    cfg = WorldConfig()
    seeds = [seed + k for k in range(8)]
    return [check_determinism(cfg, seeds), check_rotation_equivariance(cfg, seeds),
            check_road_rays(cfg, seeds), check_orientation_oracle(cfg, seeds),
            check_cellgrid_mapping(seed)]


SUITES: Dict[str, Callable[[int], List[PropertyResult]]] = {
    "grad": grad_suite,
    "invariants": invariants_suite,
    "oracle": oracle_suite,
}


def run_suite(name: str, seed: int = 0) -> List[PropertyResult]:
    if name not in SUITES:
        raise ConfigError(f"unknown suite {name!r}; expected one of {sorted(SUITES)}")
    logger.info(f"Running verify suite {name}")
    return SUITES[name](seed)
