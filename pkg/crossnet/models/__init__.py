# Data models module for crossnet
from crossnet.models.config_models import (
    CLASS_NAMES,
    ConvBackboneConfig,
    CrossViewConfig,
    RenderSpec,
    TrainConfig,
    WorldConfig,
)
from crossnet.models.label_models import AlignedPair, GeocalibResult, LabelMap, OrientationPDF
from crossnet.models.result_models import EvalMetrics, PropertyResult, TrainLog
from crossnet.models.scene_models import CameraSpec, Entity, SceneSpec
