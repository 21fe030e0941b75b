from . import tensor
from .checkpoint import ModelCheckpoint, load_checkpoint, make_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import (
    EMBED_DIM,
    FusionHead,
    HarHead,
    Module,
    PredictorHead,
    ProjectionHead,
    ScalogramEncoder,
    SignalEncoder,
    init_params,
)
from .optim import AdamState, adam_step
from .tensor import Tensor

__all__ = [
    "tensor",
    "Tensor",
    "Module",
    "SignalEncoder",
    "ScalogramEncoder",
    "ProjectionHead",
    "PredictorHead",
    "HarHead",
    "FusionHead",
    "init_params",
    "EMBED_DIM",
    "AdamState",
    "adam_step",
    "GradCheckReport",
    "grad_check",
    "ModelCheckpoint",
    "make_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
]
