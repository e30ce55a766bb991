"""
On-disk aligned-pair datasets.

Layout: `manifest` text at the root, then `train/` and `test/` holding
`pair_%06d.{aerial,alabels,glabels,meta}` TNSR blobs. `meta` is the f64
vector [scene_seed, offset_x, offset_y, orientation].
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from crossnet.engine.tnsr import load_tensor, save_tensor
from crossnet.exceptions import ConfigError, DatasetFormatError
from crossnet.models.config_models import WorldConfig
from crossnet.models.label_models import AlignedPair, LabelMap
from crossnet.services.logging_service import logging_service
from crossnet.world.render import flip_labels, ground_classes, render_aerial
from crossnet.world.scene import generate_scene

logger = logging.getLogger(__name__)

MANIFEST = "manifest"
FORMAT_HEADER = "crossnet-dataset 1"
SPLITS = ("train", "test")
SUFFIXES = ("aerial", "alabels", "glabels", "meta")
SEED_MASK = (1 << 53) - 1


class PairDataset:
    """In-memory stack of aligned pairs."""

    def __init__(self, images: np.ndarray, aerial_labels: np.ndarray, ground_labels: np.ndarray,
                 meta: Optional[np.ndarray] = None):
        if not (len(images) == len(aerial_labels) == len(ground_labels)):
            raise ConfigError(f"pair arrays disagree in length: {len(images)}, "
                              f"{len(aerial_labels)}, {len(ground_labels)}")
        self.images = images
        self.aerial_labels = aerial_labels
        self.ground_labels = ground_labels
        self.meta = meta if meta is not None else np.zeros((len(images), 4))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def pair(self, index: int) -> AlignedPair:
        seed, ox, oy, orientation = self.meta[index]
        return AlignedPair(aerial_image=self.images[index],
                           aerial_labels=LabelMap(probs=self.aerial_labels[index]),
                           ground_labels=LabelMap(probs=self.ground_labels[index]),
                           true_orientation=float(orientation), scene_seed=int(seed),
                           camera_offset=(float(ox), float(oy)))

    def subset(self, indices: Sequence[int]) -> "PairDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return PairDataset(self.images[idx], self.aerial_labels[idx], self.ground_labels[idx],
                           self.meta[idx])

    @classmethod
    def from_pairs(cls, pairs: List[AlignedPair]) -> "PairDataset":
        if not pairs:
            raise ConfigError("cannot stack an empty pair list")
        return cls(np.stack([p.aerial_image for p in pairs]),
                   np.stack([p.aerial_labels.probs for p in pairs]).astype(np.float32),
                   np.stack([p.ground_labels.probs for p in pairs]).astype(np.float32),
                   np.stack([p.meta_vector() for p in pairs]))


def scene_seeds(seed: int, n_train: int, n_test: int) -> Dict[str, List[int]]:
    """Independent seed streams for the two splits."""
    train_ss, test_ss = np.random.SeedSequence(seed).spawn(2)
    out = {}
    for split, ss, n in (("train", train_ss, n_train), ("test", test_ss, n_test)):
        state = ss.generate_state(n, dtype=np.uint64) if n else np.zeros(0, dtype=np.uint64)
        out[split] = [int(s) & SEED_MASK for s in state]
    return out


def make_pair(scene_seed: int, cfg: WorldConfig, orientation: float = 0.0,
              offset: Tuple[float, float] = (0.0, 0.0)) -> AlignedPair:
    scene = generate_scene(scene_seed, cfg)
    image, aerial_labels = render_aerial(scene, cfg, np.random.default_rng([scene_seed, 1]),
                                         center=offset)
    classes = ground_classes(scene, cfg, orientation, offset)
    if cfg.label_noise > 0:
        classes = flip_labels(classes, cfg.label_noise, cfg.num_classes,
                              np.random.default_rng([scene_seed, 2]))
    return AlignedPair(aerial_image=image, aerial_labels=aerial_labels,
                       ground_labels=LabelMap.from_classes(classes, cfg.num_classes),
                       true_orientation=orientation, scene_seed=scene_seed, camera_offset=offset)


def _write_pair(directory: Path, index: int, pair: AlignedPair) -> None:
    stem = directory / f"pair_{index:06d}"
    save_tensor(f"{stem}.aerial", pair.aerial_image.astype(np.float32))
    save_tensor(f"{stem}.alabels", pair.aerial_labels.probs.astype(np.float32))
    save_tensor(f"{stem}.glabels", pair.ground_labels.probs.astype(np.float32))
    save_tensor(f"{stem}.meta", pair.meta_vector())


def manifest_text(seed: int, n_train: int, n_test: int, cfg: WorldConfig) -> str:
    lines = [FORMAT_HEADER, f"train = {n_train}", f"test = {n_test}", f"seed = {seed}"]
    for key, value in sorted(cfg.model_dump(mode="json").items()):
        lines.append(f"world.{key} = {value}")
    return "\n".join(lines) + "\n"


def make_dataset(out: Union[str, Path], n_train: int, n_test: int, seed: int,
                 cfg: WorldConfig, threads: int = 1) -> Path:
    """Render and write both splits; output bytes depend only on (seed, cfg, counts)."""
    if n_train < 0 or n_test < 0:
        raise ConfigError(f"scene counts must be >= 0, got train={n_train} test={n_test}")
    root = Path(out)
    seeds = scene_seeds(seed, n_train, n_test)
    try:
        for split in SPLITS:
            (root / split).mkdir(parents=True, exist_ok=True)
        (root / MANIFEST).write_text(manifest_text(seed, n_train, n_test, cfg))

        def job(item):
            split, index, scene_seed = item
            _write_pair(root / split, index, make_pair(scene_seed, cfg))

        work = [(split, i, s) for split in SPLITS for i, s in enumerate(seeds[split])]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                list(pool.map(job, work))
        else:
            for item in work:
                job(item)
    except OSError as e:
        if isinstance(e, DatasetFormatError):
            raise
        raise DatasetFormatError(getattr(e, "filename", None) or root, str(e)) from e
    logging_service.log_dataset_written(str(root), n_train, n_test, seed)
    logger.info(f"Wrote dataset {root}: {n_train} train / {n_test} test pairs")
    return root


def read_manifest(root: Union[str, Path]) -> Dict[str, str]:
    path = Path(root) / MANIFEST
    try:
        lines = path.read_text().splitlines()
    except FileNotFoundError as e:
        raise DatasetFormatError(path, "dataset manifest not found") from e
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise DatasetFormatError(path, "unrecognised dataset header")
    entries = {}
    for line in lines[1:]:
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_dataset(root: Union[str, Path], split: str = "train") -> PairDataset:
    if split not in SPLITS:
        raise ConfigError(f"unknown split {split!r}; expected one of {SPLITS}")
    entries = read_manifest(root)
    count = int(entries.get(split, 0))
    directory = Path(root) / split
    if count == 0:
        return PairDataset(np.zeros((0, 3, 1, 1), np.float32), np.zeros((0, 1, 1, 1), np.float32),
                           np.zeros((0, 1, 1, 1), np.float32), np.zeros((0, 4)))
    arrays: Dict[str, List[np.ndarray]] = {s: [] for s in SUFFIXES}
    for index in range(count):
        for suffix in SUFFIXES:
            arrays[suffix].append(load_tensor(directory / f"pair_{index:06d}.{suffix}"))
    return PairDataset(np.stack(arrays["aerial"]), np.stack(arrays["alabels"]),
                       np.stack(arrays["glabels"]), np.stack(arrays["meta"]))


def make_permutation_task(n: int, seed: int, h_a: int = 4, w_a: int = 4, h_g: int = 2,
                          w_g: int = 8, image_size: int = 16, num_classes: int = 4,
                          noise: float = 0.1) -> Tuple[PairDataset, np.ndarray]:
    """
    Pairs whose ground labels are a fixed random permutation of the aerial cells.

    Each aerial cell is painted in its class colour plus noise. Returns the
    dataset and `permutation`, where ground row r copies aerial cell
    permutation[r].
    """
    if h_a * w_a != h_g * w_g:
        raise ConfigError(f"permutation task needs equal cell counts, got {h_a * w_a} and {h_g * w_g}")
    if image_size % h_a or image_size % w_a:
        raise ConfigError(f"image size {image_size} must be a multiple of the aerial grid")
    rng = np.random.default_rng(seed)
    permutation = rng.permutation(h_a * w_a)
    colors = rng.uniform(0.0, 1.0, size=(num_classes, 3))
    cell_h, cell_w = image_size // h_a, image_size // w_a
    images, aerial, ground = [], [], []
    for _ in range(n):
        classes = rng.integers(0, num_classes, size=(h_a, w_a))
        pixels = np.repeat(np.repeat(classes, cell_h, axis=0), cell_w, axis=1)
        image = colors[pixels] + rng.normal(0.0, noise, size=(image_size, image_size, 3))
        images.append(np.clip(image, 0, 1).transpose(2, 0, 1).astype(np.float32))
        one_hot = np.eye(num_classes, dtype=np.float32)[classes]
        aerial.append(one_hot)
        ground.append(one_hot.reshape(-1, num_classes)[permutation].reshape(h_g, w_g, num_classes))
    meta = np.zeros((n, 4))
    meta[:, 0] = seed
    if n == 0:
        return PairDataset(np.zeros((0, 3, image_size, image_size), np.float32),
                           np.zeros((0, h_a, w_a, num_classes), np.float32),
                           np.zeros((0, h_g, w_g, num_classes), np.float32), meta), permutation
    return PairDataset(np.stack(images), np.stack(aerial), np.stack(ground), meta), permutation
