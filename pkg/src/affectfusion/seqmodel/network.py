"""Stacked-LSTM sequence regressor with three per-frame output heads.

Forward pass and exact backpropagation through time are implemented
directly in numpy so gradients can be validated against central finite
differences. Gate order throughout is (input, forget, candidate, output);
recurrence always uses the un-dropped hidden state, dropout applies only
to the output a layer passes upward.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from affectfusion.metrics import (
    AttributeTriple,
    DegenerateCccError,
    MtlWeights,
    _moments,
)

N_HEADS = 3  # arousal, valence, liking


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    lstm_units: tuple[int, ...] = (256, 128, 64)
    dropout_rate: float = 0.4

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.lstm_units or any(u < 1 for u in self.lstm_units):
            raise ValueError("need at least one LSTM layer of positive size")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "lstm_units", tuple(int(u) for u in self.lstm_units))

    def layer_dims(self) -> list[tuple[int, int]]:
        """(input_dim, units) per LSTM layer."""
        dims = []
        d = self.input_dim
        for h in self.lstm_units:
            dims.append((d, h))
            d = h
        return dims


@dataclass
class LstmLayerParams:
    wx: np.ndarray  # (D_in, 4H)
    wh: np.ndarray  # (H, 4H)
    b: np.ndarray  # (4H,)


@dataclass
class ParamSet:
    """All trainable parameters, with a lossless flat-vector view."""

    layers: list[LstmLayerParams]
    head_w: np.ndarray  # (H_last, 3)
    head_b: np.ndarray  # (3,)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend([layer.wx, layer.wh, layer.b])
        out.extend([self.head_w, self.head_b])
        return out

    def to_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    @classmethod
    def from_flat(cls, cfg: ModelConfig, flat: np.ndarray) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        layers = []
        pos = 0

        def take(shape):
            nonlocal pos
            size = int(np.prod(shape))
            chunk = flat[pos : pos + size].reshape(shape).copy()
            pos += size
            return chunk

        for d, h in cfg.layer_dims():
            layers.append(LstmLayerParams(take((d, 4 * h)), take((h, 4 * h)), take((4 * h,))))
        head_w = take((cfg.lstm_units[-1], N_HEADS))
        head_b = take((N_HEADS,))
        if pos != flat.shape[0]:
            raise ValueError(f"flat vector has {flat.shape[0]} values, expected {pos}")
        return cls(layers, head_w, head_b)

    def copy(self) -> "ParamSet":
        return ParamSet(
            [LstmLayerParams(l.wx.copy(), l.wh.copy(), l.b.copy()) for l in self.layers],
            self.head_w.copy(),
            self.head_b.copy(),
        )

    def with_arrays(self, arrays: list[np.ndarray]) -> "ParamSet":
        """Rebuild a ParamSet from arrays in :meth:`arrays` order."""
        expected = self.arrays()
        if len(arrays) != len(expected):
            raise ValueError(f"expected {len(expected)} arrays, got {len(arrays)}")
        for a, e in zip(arrays, expected):
            if a.shape != e.shape:
                raise ValueError(f"shape mismatch: {a.shape} vs {e.shape}")
        it = iter(arrays)
        layers = [LstmLayerParams(next(it), next(it), next(it)) for _ in self.layers]
        return ParamSet(layers, next(it), next(it))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> ParamSet:
    """Glorot-uniform input weights, orthogonal recurrent blocks per gate,
    forget-gate bias 1, heads Glorot."""
    layers = []
    for d, h in cfg.layer_dims():
        wx = _glorot(rng, d, 4 * h, (d, 4 * h))
        wh = np.concatenate([_orthogonal(rng, h) for _ in range(4)], axis=1)
        b = np.zeros(4 * h)
        b[h : 2 * h] = 1.0  # forget gate
        layers.append(LstmLayerParams(wx, wh, b))
    h_last = cfg.lstm_units[-1]
    head_w = _glorot(rng, h_last, 1, (h_last, N_HEADS))
    head_b = np.zeros(N_HEADS)
    return ParamSet(layers, head_w, head_b)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class _LayerCache:
    x_in: np.ndarray  # layer input (post lower-layer dropout), (B, T, D_in)
    gates: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]  # i, f, g, o
    c: np.ndarray  # (B, T, H)
    tanh_c: np.ndarray
    h: np.ndarray  # pre-dropout output
    drop_mask: np.ndarray | None


@dataclass
class ForwardCache:
    layers: list[_LayerCache]
    feats: np.ndarray  # head input: last layer output after dropout


def _lstm_layer_forward(p: LstmLayerParams, x: np.ndarray):
    B, T, _ = x.shape
    H = p.wh.shape[0]
    i = np.empty((B, T, H))
    f = np.empty((B, T, H))
    g = np.empty((B, T, H))
    o = np.empty((B, T, H))
    c = np.empty((B, T, H))
    h = np.empty((B, T, H))
    xw = x @ p.wx  # (B, T, 4H)
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    for t in range(T):
        z = xw[:, t] + h_prev @ p.wh + p.b
        i[:, t] = _sigmoid(z[:, :H])
        f[:, t] = _sigmoid(z[:, H : 2 * H])
        g[:, t] = np.tanh(z[:, 2 * H : 3 * H])
        o[:, t] = _sigmoid(z[:, 3 * H :])
        c[:, t] = f[:, t] * c_prev + i[:, t] * g[:, t]
        h[:, t] = o[:, t] * np.tanh(c[:, t])
        h_prev = h[:, t]
        c_prev = c[:, t]
    return h, (i, f, g, o), c


def forward(
    cfg: ModelConfig,
    params: ParamSet,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Run the network over a (B, T, D) batch.

    Returns ``(predictions, cache)`` with predictions of shape (B, T, 3).
    Dropout is applied only when ``training`` is true (and then requires
    ``rng``); inference is deterministic. Outputs on zero-padded frames are
    computed as usual and must be excluded downstream via the mask.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[2] != cfg.input_dim:
        raise ValueError(f"expected input (B, T, {cfg.input_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    if training and cfg.dropout_rate > 0.0 and rng is None:
        raise ValueError("training-mode dropout requires an rng")

    caches = []
    layer_in = x
    for p in params.layers:
        h, gates, c = _lstm_layer_forward(p, layer_in)
        drop_mask = None
        out = h
        if training and cfg.dropout_rate > 0.0:
            keep = 1.0 - cfg.dropout_rate
            drop_mask = (rng.random(h.shape) < keep).astype(np.float64) / keep
            out = h * drop_mask
        caches.append(_LayerCache(layer_in, gates, c, np.tanh(c), h, drop_mask))
        layer_in = out

    y = layer_in @ params.head_w + params.head_b
    return y, ForwardCache(caches, layer_in)


def _lstm_layer_backward(p: LstmLayerParams, cache: _LayerCache, dh_seq: np.ndarray):
    i, f, g, o = cache.gates
    c = cache.c
    tanh_c = cache.tanh_c
    x = cache.x_in
    h = cache.h
    B, T, H = h.shape

    dwx = np.zeros_like(p.wx)
    dwh = np.zeros_like(p.wh)
    db = np.zeros_like(p.b)
    dx = np.empty_like(x)
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dh = dh_seq[:, t] + dh_next
        it, ft, gt, ot = i[:, t], f[:, t], g[:, t], o[:, t]
        c_prev = c[:, t - 1] if t > 0 else np.zeros((B, H))
        h_prev = h[:, t - 1] if t > 0 else np.zeros((B, H))

        do = dh * tanh_c[:, t]
        dc = dc_next + dh * ot * (1.0 - tanh_c[:, t] ** 2)
        df = dc * c_prev
        di = dc * gt
        dg = dc * it

        dz = np.concatenate(
            [
                di * it * (1.0 - it),
                df * ft * (1.0 - ft),
                dg * (1.0 - gt * gt),
                do * ot * (1.0 - ot),
            ],
            axis=1,
        )
        dwx += x[:, t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ p.wx.T
        dh_next = dz @ p.wh.T
        dc_next = dc * ft
    return dx, LstmLayerParams(dwx, dwh, db)


def _ccc_value_and_grad(x: np.ndarray, y: np.ndarray):
    """CCC of prediction x against target y, plus d(ccc)/dx.

    Uses the shared population-moment helper so the value matches the
    metrics module bit for bit.
    """
    n = x.shape[0]
    mean_x, mean_y, var_x, var_y, cov_xy = _moments(x, y)
    denom = var_x + var_y + (mean_x - mean_y) ** 2
    if denom == 0.0:
        raise DegenerateCccError("ccc undefined: both inputs constant with equal means")
    value = 2.0 * cov_xy / denom
    grad = (2.0 / (n * denom)) * (y - mean_y) - (
        4.0 * cov_xy / (n * denom * denom)
    ) * (x - mean_y)
    return value, grad


def _check_mask(mask: np.ndarray, B: int, T: int) -> np.ndarray:
    m = np.asarray(mask)
    if m.shape != (B, T):
        raise ValueError(f"mask must have shape ({B}, {T}), got {m.shape}")
    mb = m.astype(bool)
    lens = mb.sum(axis=1)
    if np.any(lens < 2):
        raise ValueError("every sequence needs at least 2 valid frames")
    # contiguous valid prefix required
    for bidx in range(B):
        if np.any(mb[bidx, : int(lens[bidx])] != True):  # noqa: E712
            raise ValueError("mask must be a contiguous valid prefix")
    return mb


def loss_and_gradients(
    cfg: ModelConfig,
    params: ParamSet,
    x: np.ndarray,
    labels: np.ndarray,
    mask: np.ndarray,
    weights: MtlWeights,
    training: bool = False,
    rng: np.random.Generator | None = None,
):
    """Masked multitask CCC loss and its exact parameter gradients.

    The loss is the per-sequence weighted CCC loss averaged over the batch.
    Everything is truncated to the longest valid prefix first, so appending
    padded frames cannot change the result, bit for bit.

    Returns ``(loss, per-channel mean losses, ParamSet-shaped gradients)``.
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape != (x.shape[0], x.shape[1], N_HEADS):
        raise ValueError(f"labels must have shape {(x.shape[0], x.shape[1], N_HEADS)}")
    if not np.all(np.isfinite(labels)):
        raise ValueError("labels contain non-finite values")
    B, T = x.shape[0], x.shape[1]
    mb = _check_mask(mask, B, T)

    t_max = int(mb.sum(axis=1).max())
    x = x[:, :t_max]
    labels = labels[:, :t_max]
    mb = mb[:, :t_max]

    y, cache = forward(cfg, params, x, training=training, rng=rng)

    w = weights.as_array()
    dy = np.zeros_like(y)
    total = 0.0
    comp = np.zeros(N_HEADS)
    for bidx in range(B):
        valid = mb[bidx]
        for k in range(N_HEADS):
            value, grad = _ccc_value_and_grad(y[bidx, valid, k], labels[bidx, valid, k])
            comp[k] += 1.0 - value
            total += w[k] * (1.0 - value)
            dy[bidx, valid, k] = -(w[k] / B) * grad
    total /= B
    comp /= B

    # heads
    feats = cache.feats
    dhead_w = np.einsum("bth,btk->hk", feats, dy)
    dhead_b = dy.sum(axis=(0, 1))
    dfeats = dy @ params.head_w.T

    grad_layers: list[LstmLayerParams] = [None] * len(params.layers)
    upstream = dfeats
    for li in range(len(params.layers) - 1, -1, -1):
        lc = cache.layers[li]
        if lc.drop_mask is not None:
            upstream = upstream * lc.drop_mask
        upstream, layer_grads = _lstm_layer_backward(params.layers[li], lc, upstream)
        grad_layers[li] = layer_grads

    grads = ParamSet(grad_layers, dhead_w, dhead_b)
    return float(total), AttributeTriple(*comp), grads
