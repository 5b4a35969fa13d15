"""Sequence regression: stacked LSTMs trained with RMSprop on the masked
multitask CCC loss via exact backpropagation through time."""

from affectfusion.seqmodel.network import (
    ModelConfig,
    ParamSet,
    forward,
    init_params,
    loss_and_gradients,
)
from affectfusion.seqmodel.optim import RmspropState, TrainConfig, rmsprop_step
from affectfusion.seqmodel.train import (
    EpochStats,
    SeqData,
    evaluate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)

__all__ = [
    "EpochStats",
    "ModelConfig",
    "ParamSet",
    "RmspropState",
    "SeqData",
    "TrainConfig",
    "evaluate",
    "forward",
    "init_params",
    "load_checkpoint",
    "loss_and_gradients",
    "predict",
    "rmsprop_step",
    "save_checkpoint",
    "train",
]
