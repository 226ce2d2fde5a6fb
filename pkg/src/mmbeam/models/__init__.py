from .extractors import (
    MBConv,
    PointNetLite,
    PointNetLiteConfig,
    PositionNet,
    PositionNetConfig,
    VisualNet,
    VisualNetConfig,
)
from .fusion import (
    MODALITIES,
    BeamModelConfig,
    BeamPredictor,
    FusionHeadConfig,
    ModelInputs,
    predict,
    rank_beams,
    top_m,
)
from .training import History, TrainConfig, accuracy, fit, mean_loss, train

__all__ = [
    "MODALITIES", "BeamModelConfig", "BeamPredictor", "FusionHeadConfig", "History", "MBConv",
    "ModelInputs", "PointNetLite", "PointNetLiteConfig", "PositionNet", "PositionNetConfig",
    "TrainConfig", "VisualNet", "VisualNetConfig", "accuracy", "fit", "mean_loss", "predict",
    "rank_beams", "top_m", "train",
]
