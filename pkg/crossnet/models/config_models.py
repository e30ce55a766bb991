from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import Dict, List, Optional, Tuple


CLASS_NAMES = ("road", "vegetation", "man-made", "sky")
ROAD, VEGETATION, MAN_MADE, SKY = range(4)


DEFAULT_STAGE_CHANNELS = (8, 16, 32, 32)


class ConvBackboneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    stage_channels: List[int] = Field(default_factory=lambda: list(DEFAULT_STAGE_CHANNELS))
    tap_points: List[int]
    input_size: int = 64
    convs_per_stage: int = 2

    @model_validator(mode="before")
    @classmethod
    def default_taps(cls, data):
        # Unset taps read every stage.
        if isinstance(data, dict) and data.get("tap_points") is None:
            stages = data.get("stage_channels") or DEFAULT_STAGE_CHANNELS
            if isinstance(stages, (list, tuple)):
                data = {**data, "tap_points": list(range(len(stages)))}
        return data

    @model_validator(mode="after")
    def check_stages(self):
        if not self.stage_channels or any(c < 1 for c in self.stage_channels):
            raise ValueError(f"stage_channels must be non-empty and >= 1, got {self.stage_channels}")
        if not self.tap_points:
            raise ValueError("tap_points must name at least one stage")
        if any(t < 0 or t >= len(self.stage_channels) for t in self.tap_points):
            raise ValueError(f"tap_points {self.tap_points} outside stages 0..{len(self.stage_channels) - 1}")
        if self.input_size < 1 or self.convs_per_stage < 1:
            raise ValueError("input_size and convs_per_stage must be >= 1")
        return self

    @property
    def hypercolumn_width(self) -> int:
        return sum(self.stage_channels[t] for t in self.tap_points)

    @classmethod
    def full_scale(cls) -> "ConvBackboneConfig":
        return cls(stage_channels=[64, 128, 256, 512], tap_points=[0, 1, 2, 3],
                   input_size=256, convs_per_stage=2)


class CrossViewConfig(BaseModel):
    """Shapes of the aerial network, conditioning network and transform."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    h_a: int = 8
    w_a: int = 8
    h_g: int = 4
    w_g: int = 16
    num_classes: int = 4
    d_s: int = 32
    backbone: ConvBackboneConfig = Field(default_factory=ConvBackboneConfig)
    head_widths: List[int] = Field(default_factory=lambda: [32, 32])
    s_channels: List[int] = Field(default_factory=lambda: [8, 16, 16, 16])
    f_widths: List[int] = Field(default_factory=lambda: [64, 32, 1])
    naive: bool = False
    zero_init_output: bool = False
    max_naive_entries: int = 1_000_000
    seed: int = 0

    @model_validator(mode="after")
    def check_shapes(self):
        if min(self.h_a, self.w_a, self.h_g, self.w_g) < 1:
            raise ValueError("all label-grid extents must be >= 1")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.d_s < 1:
            raise ValueError("d_s must be >= 1")
        if not self.f_widths or self.f_widths[-1] != 1:
            raise ValueError(f"f_widths must end with a single output, got {self.f_widths}")
        if any(w < 1 for w in self.head_widths + self.s_channels + self.f_widths):
            raise ValueError("layer widths must be >= 1")
        if not self.s_channels:
            raise ValueError("s_channels must be non-empty")
        return self

    @property
    def aerial_cells(self) -> int:
        return self.h_a * self.w_a

    @property
    def ground_cells(self) -> int:
        return self.h_g * self.w_g

    @property
    def image_size(self) -> int:
        return self.backbone.input_size

    @property
    def f_input_width(self) -> int:
        return 4 + self.d_s

    @classmethod
    def full_scale(cls) -> "CrossViewConfig":
        return cls(h_a=256, w_a=256, h_g=64, w_g=256, num_classes=4, d_s=289,
                   backbone=ConvBackboneConfig.full_scale(), head_widths=[512, 512],
                   s_channels=[64, 128, 256, 512], f_widths=[128, 64, 1])

    @classmethod
    def tiny(cls, **overrides) -> "CrossViewConfig":
        """Smallest shape used by the gradient checks."""
        values = dict(h_a=3, w_a=3, h_g=2, w_g=4, num_classes=3, d_s=5,
                      backbone=ConvBackboneConfig(stage_channels=[2, 3, 2, 2], input_size=16,
                                                  convs_per_stage=1),
                      head_widths=[4], s_channels=[2, 2, 2], f_widths=[6, 4, 1])
        values.update(overrides)
        return cls(**values)


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    sparse_grid: Tuple[int, int] = (4, 8)
    seed: int = 0
    bn_decay: float = 0.9
    eval_every: int = 1
    clip_norm: float = 10.0
    max_steps: Optional[int] = None

    @model_validator(mode="after")
    def check_values(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1 or self.lr < 0 or self.eval_every < 1:
            raise ValueError("batch_size, eval_every must be >= 1 and lr >= 0")
        if min(self.sparse_grid) < 1:
            raise ValueError(f"sparse_grid must be positive, got {self.sparse_grid}")
        return self

    def check_grid(self, h_g: int, w_g: int) -> None:
        g_h, g_w = self.sparse_grid
        if g_h > h_g or g_w > w_g:
            raise ValueError(f"sparse grid {self.sparse_grid} does not fit ground grid ({h_g}, {w_g})")


class WorldConfig(BaseModel):
    """Procedural world parameters for scene generation and rendering."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    extent: float = 64.0
    image_size: int = 64
    h_a: int = 8
    w_a: int = 8
    h_g: int = 4
    w_g: int = 16
    num_classes: int = 4
    north_column: Optional[int] = None
    camera_height: float = 2.5
    elevation_range: Tuple[float, float] = (-15.0, 45.0)
    min_roads: int = 1
    max_roads: int = 2
    max_vegetation: int = 4
    max_buildings: int = 4
    road_width: Tuple[float, float] = (4.0, 8.0)
    building_height: Tuple[float, float] = (4.0, 14.0)
    clearance: float = 4.0
    margin: float = 16.0
    asymmetric: bool = True
    label_noise: float = 0.0
    noise_amplitude: float = 0.18

    @model_validator(mode="after")
    def check_values(self):
        if self.extent <= 0:
            raise ValueError(f"extent must be positive, got {self.extent}")
        if min(self.image_size, self.h_a, self.w_a, self.h_g, self.w_g) < 1:
            raise ValueError("raster sizes must be >= 1")
        if self.num_classes != 4:
            raise ValueError("the synthetic world renders exactly 4 classes")
        if not 0 <= self.min_roads <= self.max_roads:
            raise ValueError("road count bounds are inconsistent")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if self.north_column is not None and not 0 <= self.north_column < self.w_g:
            raise ValueError(f"north_column must lie in [0, {self.w_g})")
        return self

    @property
    def north(self) -> int:
        return self.w_g // 2 if self.north_column is None else self.north_column

    @property
    def meters_per_pixel(self) -> float:
        return self.extent / self.image_size


DEFAULT_PALETTE: Dict[int, Tuple[int, int, int]] = {
    ROAD: (255, 0, 0),
    VEGETATION: (0, 255, 0),
    MAN_MADE: (0, 0, 255),
    SKY: (255, 255, 255),
}


class RenderSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    palette: Dict[int, Tuple[int, int, int]] = Field(default_factory=lambda: dict(DEFAULT_PALETTE))
    scale: int = 1
    cell_px: int = 24
    arrow_color: Tuple[int, int, int] = (255, 0, 0)
    best_color: Tuple[int, int, int] = (0, 0, 255)
    truth_color: Tuple[int, int, int] = (0, 255, 0)
    background: Tuple[int, int, int] = (0, 0, 0)

    @model_validator(mode="after")
    def check_values(self):
        if self.scale < 1 or self.cell_px < 4:
            raise ValueError("scale must be >= 1 and cell_px >= 4")
        for cls_id, rgb in self.palette.items():
            if any(not 0 <= v <= 255 for v in rgb):
                raise ValueError(f"palette entry {cls_id} is not an 8-bit RGB triple")
        return self

    def covers(self, num_classes: int) -> bool:
        return all(k in self.palette for k in range(num_classes))
