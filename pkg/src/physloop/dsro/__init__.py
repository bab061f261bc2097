from .denoiser import Adam, Denoiser, time_features
from .schedule import NoiseSchedule
from .shapes import (
    ChairFamily,
    ShapeParam,
    decode_shape,
    decode_shape_pieces,
    get_family,
)
from .training import (
    DsroOptions,
    DsroResult,
    LabelCache,
    dsro_loss,
    dsro_loss_and_grad,
    forward_diffuse,
    gravity_label_fn,
    pretrain_denoiser,
    sample_shape,
    train_dsro,
)

__all__ = [
    "Adam",
    "ChairFamily",
    "Denoiser",
    "DsroOptions",
    "DsroResult",
    "LabelCache",
    "NoiseSchedule",
    "ShapeParam",
    "decode_shape",
    "decode_shape_pieces",
    "dsro_loss",
    "dsro_loss_and_grad",
    "forward_diffuse",
    "get_family",
    "gravity_label_fn",
    "pretrain_denoiser",
    "sample_shape",
    "time_features",
    "train_dsro",
]
