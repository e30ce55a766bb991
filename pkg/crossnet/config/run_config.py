"""
Flat key = value run configuration.

One file holds model shapes, training parameters, world parameters and
paths-independent options. CLI flags and `--set KEY=VALUE` override file
values; unknown keys are rejected.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from crossnet.exceptions import ConfigError
from crossnet.models.config_models import (ConvBackboneConfig, CrossViewConfig, RenderSpec,
                                           TrainConfig, WorldConfig)
from crossnet.utils.helpers import build_model, format_validation_error

logger = logging.getLogger(__name__)

RESOLVED_NAME = "resolved_config.txt"
LIST_FIELDS = {"stage_channels", "tap_points", "head_widths", "s_channels", "f_widths",
               "sparse_grid", "finetune_sizes"}
OPTIONAL_FIELDS = {"max_steps", "north_column", "temperature"}


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    precision: Literal["f32", "f64"] = "f32"
    threads: int = 1

    # model
    image_size: int = 64
    h_a: int = 8
    w_a: int = 8
    h_g: int = 4
    w_g: int = 16
    num_classes: int = 4
    d_s: int = 32
    stage_channels: List[int] = [8, 16, 32, 32]
    tap_points: Optional[List[int]] = None
    convs_per_stage: int = 2
    head_widths: List[int] = [32, 32]
    s_channels: List[int] = [8, 16, 16, 16]
    f_widths: List[int] = [64, 32, 1]
    naive: bool = False
    zero_init_output: bool = False

    # training
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    sparse_grid: Tuple[int, int] = (4, 8)
    bn_decay: float = 0.9
    eval_every: int = 1
    clip_norm: float = 10.0
    max_steps: Optional[int] = None

    # world
    train_scenes: int = 512
    test_scenes: int = 128
    extent: float = 64.0
    asymmetric: bool = True
    label_noise: float = 0.0
    max_buildings: int = 4
    max_vegetation: int = 4
    north_column: Optional[int] = None

    # finetune / geocalibration / rendering
    finetune_sizes: List[int] = [1, 2, 4]
    finetune_repeats: int = 3
    finetune_epochs: int = 40
    geocal_grid: int = 5
    geocal_cell_px: int = 4
    temperature: Optional[float] = None
    render_scale: int = 8
    cell_px: int = 24

    @field_validator(*sorted(LIST_FIELDS), mode="before")
    @classmethod
    def split_lists(cls, value):
        if isinstance(value, str):
            if value.strip().lower() in ("none", "null"):
                return None
            return [v.strip() for v in value.split(",") if v.strip()]
        return value

    @field_validator(*sorted(OPTIONAL_FIELDS), mode="before")
    @classmethod
    def none_strings(cls, value):
        if isinstance(value, str) and value.strip().lower() in ("", "none", "null"):
            return None
        return value

    # -- loading ---------------------------------------------------------------
    @classmethod
    def resolve(cls, path: Optional[Union[str, Path]] = None,
                overrides: Optional[Mapping[str, Any]] = None,
                defaults: Optional[Mapping[str, Any]] = None) -> "RunConfig":
        """Layer `defaults`, then the config file, then `overrides`."""
        values: Dict[str, Any] = dict(defaults or {})
        values.update(parse_config_file(path) if path else {})
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        try:
            return cls(**values)
        except ValidationError as e:
            raise ConfigError(format_validation_error(e)) from e

    # -- derived configs ---------------------------------------------------------
    def backbone_config(self) -> ConvBackboneConfig:
        values = dict(stage_channels=self.stage_channels, input_size=self.image_size,
                      convs_per_stage=self.convs_per_stage)
        if self.tap_points is not None:
            values["tap_points"] = self.tap_points
        return build_model(ConvBackboneConfig, **values)

    def crossview_config(self) -> CrossViewConfig:
        return build_model(CrossViewConfig, h_a=self.h_a, w_a=self.w_a, h_g=self.h_g, w_g=self.w_g,
                           num_classes=self.num_classes, d_s=self.d_s, backbone=self.backbone_config(),
                           head_widths=self.head_widths, s_channels=self.s_channels,
                           f_widths=self.f_widths, naive=self.naive,
                           zero_init_output=self.zero_init_output, seed=self.seed)

    def train_config(self, **updates: Any) -> TrainConfig:
        values = dict(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                      sparse_grid=self.sparse_grid, seed=self.seed, bn_decay=self.bn_decay,
                      eval_every=self.eval_every, clip_norm=self.clip_norm, max_steps=self.max_steps)
        values.update(updates)
        return build_model(TrainConfig, **values)

    def world_config(self, model: Optional[CrossViewConfig] = None, **updates: Any) -> WorldConfig:
        """World parameters; label-grid shapes follow `model` when given."""
        shapes = model or self
        values = dict(extent=self.extent, image_size=getattr(shapes, "image_size", self.image_size),
                      h_a=shapes.h_a, w_a=shapes.w_a, h_g=shapes.h_g, w_g=shapes.w_g,
                      num_classes=shapes.num_classes, north_column=self.north_column,
                      asymmetric=self.asymmetric, label_noise=self.label_noise,
                      max_buildings=self.max_buildings, max_vegetation=self.max_vegetation)
        values.update(updates)
        return build_model(WorldConfig, **values)

    def render_spec(self) -> RenderSpec:
        return build_model(RenderSpec, scale=self.render_scale, cell_px=self.cell_px)

    # -- provenance --------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for key, value in sorted(self.model_dump().items()):
            if isinstance(value, (list, tuple)):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    def dump(self, directory: Union[str, Path]) -> Path:
        path = Path(directory) / RESOLVED_NAME
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        values[key.strip()] = value.strip()
    return values


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError as e:
        raise ConfigError(f"config file {path} not found") from e
    logger.debug(f"Loaded run config {path}")
    return parse_config_text(text, str(path))
