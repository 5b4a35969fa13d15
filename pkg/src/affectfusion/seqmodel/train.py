"""Training loop: RMSprop over shuffled batches, per-epoch dev scoring,
best-epoch parameter selection, and bit-exact checkpoint IO."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from affectfusion.dataio import FeatureScaler
from affectfusion.metrics import AttributeTriple, per_sequence_mean_ccc, pooled_ccc
from affectfusion.seqmodel.network import (
    ModelConfig,
    ParamSet,
    forward,
    init_params,
    loss_and_gradients,
)
from affectfusion.seqmodel.optim import RmspropState, TrainConfig, rmsprop_step

CHECKPOINT_VERSION = 1


@dataclass
class SeqData:
    """One split as stacked arrays: features (B,T,D), labels (B,T,3), mask (B,T)."""

    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 3 or self.y.shape != (*self.x.shape[:2], 3):
            raise ValueError("inconsistent split array shapes")
        if self.mask.shape != self.x.shape[:2]:
            raise ValueError("mask shape does not match features")
        if self.x.shape[0] == 0:
            raise ValueError("empty split")

    @property
    def n_sequences(self) -> int:
        return self.x.shape[0]


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    dev_pooled: AttributeTriple  # CCC on all dev frames concatenated
    dev_seq_mean: AttributeTriple  # per-sequence CCC averaged over dev subjects

    @property
    def dev_average(self) -> float:
        return self.dev_pooled.mean()


def predict(cfg: ModelConfig, params: ParamSet, x: np.ndarray) -> np.ndarray:
    """Deterministic inference, (B, T, D) -> (B, T, 3)."""
    y, _ = forward(cfg, params, x, training=False)
    return y


def evaluate(cfg: ModelConfig, params: ParamSet, data: SeqData):
    """Dev-style scoring under both reporting conventions."""
    preds = predict(cfg, params, data.x)
    return (
        pooled_ccc(preds, data.y, data.mask),
        per_sequence_mean_ccc(preds, data.y, data.mask),
    )


def train(
    train_data: SeqData,
    dev_data: SeqData,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    initial_params: ParamSet | None = None,
) -> tuple[ParamSet, list[EpochStats]]:
    """Train and return the parameters from the best dev-average-CCC epoch.

    Fully reproducible for a given ``train_cfg.rng_seed``: initialization,
    batch shuffling, and dropout all draw from one generator. The last
    partial batch is kept. History has exactly ``epochs`` entries; with
    ``epochs == 0`` the initial parameters come back untouched.
    """
    rng = np.random.default_rng(train_cfg.rng_seed)
    params = initial_params.copy() if initial_params is not None else init_params(model_cfg, rng)
    if train_cfg.epochs == 0:
        return params, []

    state = RmspropState.zeros_like(params)
    history: list[EpochStats] = []
    best_params = params.copy()
    best_score = -np.inf
    n = train_data.n_sequences
    for epoch in range(train_cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, train_cfg.batch_size):
            idx = order[start : start + train_cfg.batch_size]
            loss, _, grads = loss_and_gradients(
                model_cfg,
                params,
                train_data.x[idx],
                train_data.y[idx],
                train_data.mask[idx],
                train_cfg.weights,
                training=True,
                rng=rng,
            )
            params, state = rmsprop_step(params, grads, state, train_cfg)
            loss_sum += loss * len(idx)
        if not params.all_finite():
            raise FloatingPointError(f"non-finite parameters after epoch {epoch}")

        dev_pooled, dev_seq_mean = evaluate(model_cfg, params, dev_data)
        stats = EpochStats(epoch, loss_sum / n, dev_pooled, dev_seq_mean)
        history.append(stats)
        if stats.dev_average > best_score:
            best_score = stats.dev_average
            best_params = params.copy()
    return best_params, history


# ---------------------------------------------------------------------------
# Checkpoints: a versioned .npz holding the config, the flat parameter
# vector (float64, so the round trip is bit-exact), the feature scaler,
# and free-form metadata.
# ---------------------------------------------------------------------------


def save_checkpoint(
    path,
    model_cfg: ModelConfig,
    params: ParamSet,
    scaler: FeatureScaler | None = None,
    meta: dict | None = None,
) -> None:
    payload = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "config_json": np.array(
            json.dumps(
                {
                    "input_dim": model_cfg.input_dim,
                    "lstm_units": list(model_cfg.lstm_units),
                    "dropout_rate": model_cfg.dropout_rate,
                },
                sort_keys=True,
            )
        ),
        "params_flat": params.to_flat(),
        "meta_json": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    if scaler is not None:
        payload["scaler_mean"] = scaler.mean
        payload["scaler_std"] = scaler.std
    np.savez(path, **payload)


def load_checkpoint(path):
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        raw_cfg = json.loads(str(data["config_json"]))
        cfg = ModelConfig(
            input_dim=raw_cfg["input_dim"],
            lstm_units=tuple(raw_cfg["lstm_units"]),
            dropout_rate=raw_cfg["dropout_rate"],
        )
        params = ParamSet.from_flat(cfg, data["params_flat"])
        scaler = None
        if "scaler_mean" in data:
            scaler = FeatureScaler(mean=data["scaler_mean"], std=data["scaler_std"])
        meta = json.loads(str(data["meta_json"]))
    return cfg, params, scaler, meta
