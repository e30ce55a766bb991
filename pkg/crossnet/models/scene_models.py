from pydantic import BaseModel, ConfigDict, Field, model_validator
from typing import List, Literal, Tuple
import math


class Entity(BaseModel):
    """Oriented rectangle in world metres (x east, y north)."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["road", "vegetation", "building"]
    center: Tuple[float, float]
    length: float
    width: float
    heading: float = 0.0
    height: float = 0.0

    @model_validator(mode="after")
    def check_geometry(self):
        if self.width <= 0 or self.length <= 0:
            raise ValueError(f"{self.kind} needs positive width and length")
        if self.kind == "building" and self.height <= 0:
            raise ValueError("buildings need a positive height")
        return self

    def to_local(self, x, y):
        """World coordinates to (along, across) coordinates of the rectangle."""
        dx = x - self.center[0]
        dy = y - self.center[1]
        sin_h, cos_h = math.sin(self.heading), math.cos(self.heading)
        along = dx * sin_h + dy * cos_h
        across = dx * cos_h - dy * sin_h
        return along, across

    def contains(self, x, y):
        along, across = self.to_local(x, y)
        return (abs(along) <= self.length / 2) & (abs(across) <= self.width / 2)


class CameraSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    position: Tuple[float, float] = (0.0, 0.0)
    height: float = 2.5
    w_pano: int = 16
    h_pano: int = 4


class SceneSpec(BaseModel):
    """Procedural world description; a pure function of its seed and config."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int
    extent: float
    entities: List[Entity] = Field(default_factory=list)
    camera: CameraSpec = Field(default_factory=CameraSpec)

    @model_validator(mode="after")
    def check_extent(self):
        if self.extent <= 0:
            raise ValueError(f"scene extent must be positive, got {self.extent}")
        return self

    def of_kind(self, kind: str) -> List[Entity]:
        return [e for e in self.entities if e.kind == kind]
