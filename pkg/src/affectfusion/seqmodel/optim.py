"""RMSprop: accumulate a decayed mean of squared gradients, scale steps by it."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from affectfusion.metrics import DEFAULT_WEIGHTS, MtlWeights
from affectfusion.seqmodel.network import ParamSet


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 34
    epochs: int = 50
    rmsprop_decay: float = 0.9
    rmsprop_epsilon: float = 1e-7
    weights: MtlWeights = DEFAULT_WEIGHTS
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be > 0")
        if not 0.0 <= self.rmsprop_decay < 1.0:
            raise ValueError("rmsprop_decay must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.rmsprop_epsilon <= 0.0:
            raise ValueError("rmsprop_epsilon must be > 0")


@dataclass
class RmspropState:
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "RmspropState":
        return cls([np.zeros_like(a) for a in params.arrays()])


def rmsprop_step(
    params: ParamSet,
    grads: ParamSet,
    state: RmspropState,
    cfg: TrainConfig,
) -> tuple[ParamSet, RmspropState]:
    """One update: ``v <- d*v + (1-d)*g^2``; ``p <- p - lr*g/(sqrt(v)+eps)``."""
    new_arrays = []
    new_v = []
    for p, g, v in zip(params.arrays(), grads.arrays(), state.v):
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
        v2 = cfg.rmsprop_decay * v + (1.0 - cfg.rmsprop_decay) * g * g
        new_arrays.append(p - cfg.learning_rate * g / (np.sqrt(v2) + cfg.rmsprop_epsilon))
        new_v.append(v2)
    return params.with_arrays(new_arrays), RmspropState(new_v)
