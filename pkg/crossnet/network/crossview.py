"""
Aerial-to-ground cross-view network.

A (aerial semantic features) samples a hypercolumn at every aerial label cell
and maps it to K logits f_a. S summarizes the aerial image into a conditioning
vector. F~ scores every (ground row r, aerial column c) pair from the
normalized coordinates [i, j, y, x] and S; a softmax over c turns each row
into a convex combination, M. Ground logits are f_g' = M f_a + b.
"""
import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from crossnet.engine import functional as F
from crossnet.engine.tensor import Tensor, get_default_dtype, no_grad
from crossnet.exceptions import ConfigError, ContractError, ShapeError
from crossnet.models.config_models import CrossViewConfig
from crossnet.models.label_models import LabelMap
from crossnet.nn.checkpoint import load_container, save_container
from crossnet.nn.hypercolumn import cell_centers, hypercolumn
from crossnet.nn.layers import BatchNorm, Conv2d, ConvBackbone, Linear, MLP
from crossnet.nn.module import Module, Parameter
from crossnet.services.logging_service import logging_service

logger = logging.getLogger(__name__)

ImageInput = Union[np.ndarray, Tensor]


def normalize_indices(r: int, c: int, config: CrossViewConfig) -> Tuple[float, float, float, float]:
    """Normalized (i, j, y, x) of ground row r and aerial column c."""
    if not 0 <= r < config.ground_cells:
        raise ContractError(f"ground row {r} outside [0, {config.ground_cells})")
    if not 0 <= c < config.aerial_cells:
        raise ContractError(f"aerial column {c} outside [0, {config.aerial_cells})")
    i = (c // config.w_a) / config.h_a
    j = (c % config.w_a) / config.w_a
    y = (r // config.w_g) / config.h_g
    x = (r % config.w_g) / config.w_g
    return i, j, y, x


def coordinate_features(rows: np.ndarray, config: CrossViewConfig) -> np.ndarray:
    """(R, C, 4) array of [i, j, y, x] for the given ground rows and every aerial column."""
    rows = check_rows(rows, config)
    cols = np.arange(config.aerial_cells)
    i = (cols // config.w_a) / config.h_a
    j = (cols % config.w_a) / config.w_a
    y = (rows // config.w_g) / config.h_g
    x = (rows % config.w_g) / config.w_g
    shape = (len(rows), len(cols))
    return np.stack([np.broadcast_to(i[None, :], shape), np.broadcast_to(j[None, :], shape),
                     np.broadcast_to(y[:, None], shape), np.broadcast_to(x[:, None], shape)],
                    axis=-1).astype(get_default_dtype())


def check_rows(rows, config: CrossViewConfig) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.int64).reshape(-1)
    if rows.size and (rows.min() < 0 or rows.max() >= config.ground_cells):
        raise ContractError(f"ground rows must lie in [0, {config.ground_cells}), got "
                            f"[{rows.min()}, {rows.max()}]")
    return rows


def apply_transform(m_rows: Tensor, f_a: Tensor, b_rows: Tensor) -> Tensor:
    """f_g'[r] = sum_c M[r, c] f_a[c] + b[r], batched over a leading axis when present."""
    if m_rows.shape[-1] != f_a.shape[-2] or b_rows.shape[-2:] != (m_rows.shape[-2], f_a.shape[-1]):
        raise ShapeError(f"transform shapes disagree: M {m_rows.shape}, f_a {f_a.shape}, b {b_rows.shape}")
    return F.add(F.matmul(m_rows, f_a), b_rows)


class AerialNet(Module):
    """Backbone hypercolumn followed by per-point 1x1 layers producing K logits."""

    def __init__(self, config: CrossViewConfig, rng: np.random.Generator):
        super().__init__()
        self.backbone = ConvBackbone(config.backbone, rng)
        widths = [config.backbone.hypercolumn_width] + list(config.head_widths) + [config.num_classes]
        self.head = MLP(widths, rng, zero_init_output=config.zero_init_output)

    def forward(self, images: Tensor, points: np.ndarray) -> Tensor:
        features = self.backbone(images)
        return self.head(hypercolumn(features, points))


class ConditioningNet(Module):
    """Stride-2 conv stack, flattened and projected to the d_s conditioning vector."""

    def __init__(self, config: CrossViewConfig, rng: np.random.Generator):
        super().__init__()
        previous = 3
        size = config.image_size
        for k, channels in enumerate(config.s_channels):
            setattr(self, f"conv{k + 1}", Conv2d(previous, channels, 3, rng, stride=2))
            setattr(self, f"bn{k + 1}", BatchNorm(channels, channel_axis=1))
            previous = channels
            size = (size + 1) // 2
        self.n_convs = len(config.s_channels)
        self.flat_width = previous * size * size
        self.project = Linear(self.flat_width, config.d_s, rng)
        self.project_bn = BatchNorm(config.d_s, channel_axis=-1)

    def forward(self, images: Tensor) -> Tensor:
        x = images
        for k in range(self.n_convs):
            x = getattr(self, f"conv{k + 1}")(x)
            x = getattr(self, f"bn{k + 1}")(x)
            x = F.relu(x)
        x = x.reshape(x.shape[0], self.flat_width)
        return F.relu(self.project_bn(self.project(x)))


class TransformNet(Module):
    """F~: MLP over [i, j, y, x, S(I_a)] giving one logit per (row, column) pair."""

    def __init__(self, config: CrossViewConfig, rng: np.random.Generator):
        super().__init__()
        self.config = config
        # Hidden BN statistics are per ground row so a sampled row sees the same
        # normalization as it does inside the full grid.
        self.mlp = MLP([config.f_input_width] + list(config.f_widths), rng, group_axis=1)

    def forward(self, conditioning: Tensor, rows: np.ndarray) -> Tensor:
        cfg = self.config
        batch = conditioning.shape[0]
        n_rows, n_cols = len(rows), cfg.aerial_cells
        coords = Tensor(coordinate_features(rows, cfg))
        coords = F.broadcast_to(coords.reshape(1, n_rows, n_cols, 4), (batch, n_rows, n_cols, 4))
        cond = F.broadcast_to(conditioning.reshape(batch, 1, 1, cfg.d_s),
                              (batch, n_rows, n_cols, cfg.d_s))
        inputs = F.concat([coords, cond], axis=-1)
        return self.mlp(inputs).reshape(batch, n_rows, n_cols)


class NaiveTransform(Module):
    """Input-independent transform: a learnable (ground x aerial) logit table."""

    def __init__(self, config: CrossViewConfig):
        super().__init__()
        entries = config.ground_cells * config.aerial_cells
        if entries > config.max_naive_entries:
            raise ConfigError(f"naive transform needs {entries} table entries, "
                              f"above the guard of {config.max_naive_entries}")
        self.config = config
        self.table = Parameter(np.zeros((config.ground_cells, config.aerial_cells),
                                        dtype=get_default_dtype()))

    def forward(self, batch: int, rows: np.ndarray) -> Tensor:
        selected = F.take(self.table, rows, axis=0)
        return F.broadcast_to(selected.reshape(1, len(rows), self.config.aerial_cells),
                              (batch, len(rows), self.config.aerial_cells))


class CrossViewModel(Module):
    """Parameters Theta_A, Theta_S, Theta_F and bias b, plus the shape configuration."""

    def __init__(self, config: CrossViewConfig, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.config = config
        self.A = AerialNet(config, rng)
        if config.naive:
            self.S = None
            self.F = NaiveTransform(config)
        else:
            self.S = ConditioningNet(config, rng)
            self.F = TransformNet(config, rng)
        self.b = Parameter(np.zeros((config.ground_cells, config.num_classes), dtype=get_default_dtype()))

    # -- inputs ------------------------------------------------------------
    def as_batch(self, images: ImageInput) -> Tensor:
        data = images.data if isinstance(images, Tensor) else np.asarray(images)
        if data.ndim == 3:
            data = data[None]
        size = self.config.image_size
        if data.ndim != 4 or data.shape[1:] != (3, size, size):
            raise ShapeError(f"aerial images must be (N, 3, {size}, {size}), got {data.shape}")
        if isinstance(images, Tensor) and images.ndim == 4:
            return images
        return Tensor(data)

    def aerial_points(self) -> np.ndarray:
        return cell_centers(self.config.h_a, self.config.w_a)

    def all_rows(self) -> np.ndarray:
        return np.arange(self.config.ground_cells)

    # -- the four stages ---------------------------------------------------
    def aerial_features(self, images: ImageInput, points: Optional[np.ndarray] = None) -> Tensor:
        """Per-point K-dim logits f_a, (N, P, K); the full aerial grid by default."""
        images = self.as_batch(images)
        points = self.aerial_points() if points is None else np.asarray(points, dtype=np.float64)
        if points.shape[-2] == 0:
            return Tensor(np.zeros((images.shape[0], 0, self.config.num_classes)))
        return self.A(images, points)

    def conditioning_vector(self, images: ImageInput) -> Tensor:
        if self.S is None:
            raise ConfigError("the naive transform has no conditioning network")
        return self.S(self.as_batch(images))

    def transform_rows(self, images: ImageInput, rows: Sequence[int]) -> Tuple[Tensor, Tensor]:
        """Row-stochastic rows of M for the requested ground rows, with their logits."""
        images = self.as_batch(images)
        rows = check_rows(rows, self.config)
        if self.config.naive:
            logits = self.F(images.shape[0], rows)
        else:
            logits = self.F(self.S(images), rows)
        return F.softmax(logits, axis=-1), logits

    def predict_ground(self, images: ImageInput, rows: Optional[Sequence[int]] = None) -> Tensor:
        """Ground logits f_g' for the requested rows, (N, R, K)."""
        images = self.as_batch(images)
        rows = self.all_rows() if rows is None else check_rows(rows, self.config)
        f_a = self.aerial_features(images)
        m_rows, _ = self.transform_rows(images, rows)
        return apply_transform(m_rows, f_a, F.take(self.b, rows, axis=0))

    # -- inference helpers ---------------------------------------------------
    def full_transform_matrix(self, images: ImageInput) -> np.ndarray:
        with no_grad():
            m_rows, _ = self.transform_rows(images, self.all_rows())
        return m_rows.data

    def predict_ground_labels(self, images: ImageInput) -> List[LabelMap]:
        cfg = self.config
        with no_grad():
            logits = self.predict_ground(images).data
        if not np.all(np.isfinite(logits)):
            raise ContractError("model produced non-finite ground logits")
        return [LabelMap.from_logits(l, (cfg.h_g, cfg.w_g)) for l in logits]

    def predict_aerial_labels(self, images: ImageInput) -> List[LabelMap]:
        cfg = self.config
        with no_grad():
            logits = self.aerial_features(images).data
        return [LabelMap.from_logits(l, (cfg.h_a, cfg.w_a)) for l in logits]

    def with_ground_grid(self, h_g: int, w_g: int) -> "CrossViewModel":
        """Same A, S, F~ evaluated on another ground grid; b is resampled nearest-neighbour."""
        if self.config.naive:
            raise ConfigError("a naive transform table is tied to its ground grid")
        cfg = self.config.model_copy(update={"h_g": h_g, "w_g": w_g})
        other = CrossViewModel.__new__(CrossViewModel)
        Module.__init__(other)
        other.config = cfg
        other.A = self.A
        other.S = self.S
        other.F = TransformNet(cfg, np.random.default_rng(0))
        other.F.mlp = self.F.mlp
        yy = (np.arange(h_g) * self.config.h_g) // h_g
        xx = (np.arange(w_g) * self.config.w_g) // w_g
        src = (yy[:, None] * self.config.w_g + xx[None, :]).reshape(-1)
        other.b = Parameter(self.b.data[src].copy())
        object.__setattr__(other, "training", self.training)
        return other


# -- checkpoints -------------------------------------------------------------

def config_path_for(path: Union[str, Path]) -> Path:
    return Path(str(path) + ".json")


def save_model(model: CrossViewModel, path: Union[str, Path]) -> None:
    state = model.state_dict()
    save_container(path, state)
    config_path_for(path).write_text(
        json.dumps(model.config.model_dump(mode="json"), sort_keys=True, indent=2) + "\n")
    logging_service.log_checkpoint(str(path), len(state), saved=True)
    logger.info(f"Saved checkpoint {path} ({len(state)} entries)")


def load_config(path: Union[str, Path]) -> CrossViewConfig:
    sidecar = config_path_for(path)
    try:
        return CrossViewConfig.model_validate_json(sidecar.read_text())
    except FileNotFoundError as e:
        raise ConfigError(f"checkpoint config {sidecar} not found") from e


def load_model(path: Union[str, Path], expected: Optional[CrossViewConfig] = None) -> CrossViewModel:
    """Rebuild a model from its checkpoint; shapes are validated before any compute."""
    config = load_config(path)
    if expected is not None:
        keys = ("h_a", "w_a", "h_g", "w_g", "num_classes", "d_s", "naive")
        mismatched = {k: (getattr(config, k), getattr(expected, k)) for k in keys
                      if getattr(config, k) != getattr(expected, k)}
        if expected.image_size != config.image_size:
            mismatched["image_size"] = (config.image_size, expected.image_size)
        if mismatched:
            raise ConfigError(f"checkpoint {path} disagrees with the run config: {mismatched}")
    model = CrossViewModel(config)
    state = load_container(path)
    model.load_state_dict(state)
    logging_service.log_checkpoint(str(path), len(state), saved=False)
    return model
