"""
Cross-view training, evaluation and the direct aerial finetune protocol.
"""
import logging
import math
import time
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from crossnet.engine import functional as F
from crossnet.engine.tensor import Tensor, no_grad
from crossnet.exceptions import ConfigError, ShapeError, TrainingDivergedError
from crossnet.models.config_models import CLASS_NAMES, CrossViewConfig, TrainConfig
from crossnet.models.result_models import ComparisonRow, EvalMetrics, TrainLog
from crossnet.network.crossview import AerialNet, CrossViewModel
from crossnet.nn.hypercolumn import cell_centers
from crossnet.nn.layers import BatchNorm
from crossnet.nn.module import Module
from crossnet.nn.optim import Adam, clip_grad_norm
from crossnet.services.logging_service import logging_service
from crossnet.world.dataset import PairDataset

logger = logging.getLogger(__name__)

EVAL_BATCH = 32
INIT_MODES = ("pretrained", "random")


def sparse_rows(h_g: int, w_g: int, grid: Tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """Regular g_h x g_w grid of ground rows shifted by one random sub-cell jitter."""
    g_h, g_w = grid
    jitter_y, jitter_x = rng.random(2)
    ys = np.floor((np.arange(g_h) + jitter_y) * h_g / g_h).astype(np.int64)
    xs = np.floor((np.arange(g_w) + jitter_x) * w_g / g_w).astype(np.int64)
    return (ys[:, None] * w_g + xs[None, :]).reshape(-1)


def batches(n: int, batch_size: int, order: np.ndarray, min_size: int = 1) -> Iterator[np.ndarray]:
    """Consecutive slices of `order`; a trailing slice below `min_size` joins the one before it."""
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] < min_size:
        starts.pop()
    for k, start in enumerate(starts):
        stop = starts[k + 1] if k + 1 < len(starts) else n
        yield order[start:stop]


def check_dataset(dataset: PairDataset, config: CrossViewConfig) -> None:
    if len(dataset) == 0:
        raise ConfigError("training needs a non-empty dataset")
    if dataset.image_size != config.image_size:
        raise ShapeError(f"dataset images are {dataset.image_size}px, model expects {config.image_size}px")
    expected = (config.h_g, config.w_g, config.num_classes)
    if dataset.ground_labels.shape[1:] != expected:
        raise ShapeError(f"dataset ground labels are {dataset.ground_labels.shape[1:]}, model expects {expected}")


def set_bn_decay(model: Module, decay: float) -> None:
    for _, module in model.named_modules():
        if isinstance(module, BatchNorm):
            module.decay = decay


def _checked_loss(loss: Tensor, step: int, lr: float) -> float:
    value = loss.item()
    if not math.isfinite(value):
        logging_service.log_error("train", "non-finite loss", f"step={step} lr={lr}")
        raise TrainingDivergedError(step, lr, value)
    return value


def train_crossview(dataset: PairDataset, model: CrossViewModel, cfg: TrainConfig,
                    eval_set: Optional[PairDataset] = None) -> Tuple[CrossViewModel, TrainLog]:
    """Minimize ground-label cross-entropy on sparse row grids with Adam."""
    mcfg = model.config
    check_dataset(dataset, mcfg)
    try:
        cfg.check_grid(mcfg.h_g, mcfg.w_g)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    # S normalizes over the batch, so a single image makes its output constant.
    min_batch = 1 if mcfg.naive else 2
    if min(cfg.batch_size, len(dataset)) < min_batch:
        raise ConfigError(f"cross-view training needs batches of at least {min_batch} images, "
                          f"got batch_size={cfg.batch_size} with {len(dataset)} pairs")

    set_bn_decay(model, cfg.bn_decay)
    rng = np.random.default_rng(cfg.seed)
    params = model.named_parameters()
    optimizer = Adam(list(params), lr=cfg.lr)
    trainable = model.parameters()
    log = TrainLog()
    start = time.perf_counter()
    step = 0
    K = mcfg.num_classes
    targets_all = dataset.ground_labels.reshape(len(dataset), mcfg.ground_cells, K)

    logger.info(f"Training cross-view model on {len(dataset)} pairs for {cfg.epochs} epochs")
    model.train()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for idx in batches(len(dataset), cfg.batch_size, order, min_size=min_batch):
            rows = sparse_rows(mcfg.h_g, mcfg.w_g, cfg.sparse_grid, rng)
            images = Tensor(dataset.images[idx])
            targets = targets_all[idx][:, rows].reshape(-1, K)

            optimizer.zero_grad()
            logits = model.predict_ground(images, rows)
            loss = F.cross_entropy(logits.reshape(-1, K), targets)
            value = _checked_loss(loss, step, cfg.lr)
            loss.backward()
            grad_norm = clip_grad_norm(trainable, cfg.clip_norm)
            optimizer.step()

            log.record_step(step, value)
            logging_service.log_train_step(step, value, cfg.lr, grad_norm)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if eval_set is not None and len(eval_set) and (epoch + 1) % cfg.eval_every == 0:
            metrics = evaluate(model, eval_set)
            log.epochs.append((epoch, metrics))
            logging_service.log_epoch_metrics(epoch, metrics.as_dict())
            logger.info(f"Epoch {epoch}: {metrics.to_text()}")
            model.train()
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break

    log.wall_time = time.perf_counter() - start
    final = log.steps[-1][1] if log.steps else float("nan")
    logging_service.log_training_finished("crossview", step, log.wall_time, final)
    model.eval()
    return model, log


class MetricAccumulator:
    """Confusion counts and per-example cross-entropy sums; order-independent."""

    def __init__(self, num_classes: int):
        self.num_classes = num_classes
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.ce_terms: List[float] = []
        self.pixels = 0

    def add(self, logits: np.ndarray, targets: np.ndarray) -> None:
        """`logits` and `targets` are (n, K) rows."""
        logits = logits.astype(np.float64)
        shifted = logits - logits.max(axis=-1, keepdims=True)
        log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        self.ce_terms.extend((-(targets * log_p).sum(axis=-1)).tolist())
        truth = targets.argmax(axis=-1)
        pred = logits.argmax(axis=-1)
        np.add.at(self.confusion, (truth, pred), 1)
        self.pixels += len(truth)

    def metrics(self) -> EvalMetrics:
        c = self.confusion
        correct = int(np.trace(c))
        predicted = c.sum(axis=0)
        actual = c.sum(axis=1)
        precision = [float(c[k, k] / predicted[k]) if predicted[k] else None for k in range(self.num_classes)]
        recall = [float(c[k, k] / actual[k]) if actual[k] else None for k in range(self.num_classes)]
        return EvalMetrics(pixel_accuracy=correct / self.pixels if self.pixels else 0.0,
                           mean_cross_entropy=math.fsum(sorted(self.ce_terms)) / max(self.pixels, 1),
                           precision=precision, recall=recall, pixels=self.pixels)


def evaluate(model: CrossViewModel, dataset: PairDataset) -> EvalMetrics:
    """Ground-label accuracy, per-class precision/recall and cross-entropy, eval-mode."""
    cfg = model.config
    acc = MetricAccumulator(cfg.num_classes)
    if len(dataset) == 0:
        return acc.metrics()
    check_dataset(dataset, cfg)
    model.eval()
    targets_all = dataset.ground_labels.reshape(len(dataset), cfg.ground_cells, cfg.num_classes)
    with no_grad():
        for idx in batches(len(dataset), EVAL_BATCH, np.arange(len(dataset))):
            logits = model.predict_ground(dataset.images[idx]).data
            acc.add(logits.reshape(-1, cfg.num_classes), targets_all[idx].reshape(-1, cfg.num_classes))
    return acc.metrics()


def evaluate_aerial(net: AerialNet, dataset: PairDataset, config: CrossViewConfig) -> EvalMetrics:
    """Per-cell aerial labeling metrics for a network trained on aerial labels directly."""
    acc = MetricAccumulator(config.num_classes)
    net.eval()
    points = cell_centers(config.h_a, config.w_a)
    with no_grad():
        for idx in batches(len(dataset), EVAL_BATCH, np.arange(len(dataset))):
            logits = net(Tensor(dataset.images[idx]), points).data
            acc.add(logits.reshape(-1, config.num_classes),
                    dataset.aerial_labels[idx].reshape(-1, config.num_classes))
    return acc.metrics()


def copy_backbone(target: AerialNet, source: Module) -> None:
    state = {name: np.array(value, copy=True) for name, value in source.state_dict().items()}
    target.backbone.load_state_dict(state)


def train_aerial_direct(dataset: PairDataset, init: str, cfg: TrainConfig, config: CrossViewConfig,
                        pretrained: Optional[CrossViewModel] = None,
                        eval_set: Optional[PairDataset] = None) -> Tuple[AerialNet, EvalMetrics]:
    """
    Train A on aerial labels with no transform, from a cross-view-pretrained
    backbone or a fresh Xavier one. Both inits share the head initialization
    and the data order for a given `cfg.seed`.
    """
    if init not in INIT_MODES:
        raise ConfigError(f"init must be one of {INIT_MODES}, got {init!r}")
    if len(dataset) == 0:
        raise ConfigError("finetuning needs at least one labeled aerial image")
    if init == "pretrained" and pretrained is None:
        raise ConfigError("pretrained init requested without a cross-view model")

    K = config.num_classes
    net = AerialNet(config, np.random.default_rng(cfg.seed))
    if init == "pretrained":
        copy_backbone(net, pretrained.A.backbone)
    set_bn_decay(net, cfg.bn_decay)
    present = dataset.aerial_labels.reshape(-1, K).argmax(axis=-1)
    for k in range(K):
        if not np.any(present == k):
            name = CLASS_NAMES[k] if k < len(CLASS_NAMES) else str(k)
            logger.warning(f"Class {name} absent from the finetune labels; its precision may be undefined")

    points = cell_centers(config.h_a, config.w_a)
    optimizer = Adam(net.named_parameters(), lr=cfg.lr)
    params = net.parameters()
    rng = np.random.default_rng(cfg.seed)
    net.train()
    step = 0
    value = float("nan")
    for _ in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        for idx in batches(len(dataset), cfg.batch_size, order):
            optimizer.zero_grad()
            logits = net(Tensor(dataset.images[idx]), points)
            loss = F.cross_entropy(logits.reshape(-1, K), dataset.aerial_labels[idx].reshape(-1, K))
            value = _checked_loss(loss, step, cfg.lr)
            loss.backward()
            clip_grad_norm(params, cfg.clip_norm)
            optimizer.step()
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    logging_service.log_training_finished(f"aerial-{init}", step, 0.0, value)
    metrics = evaluate_aerial(net, eval_set if eval_set is not None else dataset, config)
    return net, metrics


def pretraining_comparison(pool: PairDataset, eval_set: PairDataset, pretrained: CrossViewModel,
                           sizes: Sequence[int], repeats: int, cfg: TrainConfig) -> List[ComparisonRow]:
    """Mean aerial precision of both inits per training-set size, paired over repeats."""
    rows = []
    for size in sizes:
        if size < 1 or size > len(pool):
            raise ConfigError(f"training-set size {size} outside [1, {len(pool)}]")
        scores = {mode: [] for mode in INIT_MODES}
        for r in range(repeats):
            seed = int(np.random.SeedSequence([cfg.seed, size, r]).generate_state(1)[0])
            subset = pool.subset(np.random.default_rng(seed).choice(len(pool), size, replace=False))
            run_cfg = cfg.model_copy(update={"seed": seed})
            for mode in INIT_MODES:
                _, metrics = train_aerial_direct(subset, mode, run_cfg, pretrained.config,
                                                 pretrained=pretrained, eval_set=eval_set)
                scores[mode].append(metrics.mean_precision or 0.0)
        row = ComparisonRow(size=size, pretrained=float(np.mean(scores["pretrained"])),
                            random=float(np.mean(scores["random"])), repeats=repeats)
        logger.info(row.to_text())
        rows.append(row)
    return rows
