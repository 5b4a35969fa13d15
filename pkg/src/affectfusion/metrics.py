"""Agreement metrics for dimensional emotion regression.

Implements Pearson correlation, Lin's concordance correlation coefficient
(CCC), the CCC loss ``1 - CCC``, masked variants for zero-padded sequences,
and the weighted multitask loss over the three emotion attributes
(arousal, valence, liking).

All statistics use the population convention (divide by N, not N-1).
This matters: Lin's CCC is defined on population moments, and switching
to sample moments changes results (``ccc([1,2,3],[2,4,6])`` is 4/11 under
the population convention but 4/9 under N-1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Fixed channel order used everywhere a (T, 3) label/prediction array appears.
ATTRIBUTES = ("arousal", "valence", "liking")


class SequenceLengthError(ValueError):
    """Inputs have mismatched lengths or fewer than two usable frames."""


class ZeroVarianceError(ValueError):
    """Pearson correlation is undefined because an input is constant."""


class DegenerateCccError(ValueError):
    """CCC is 0/0: both inputs constant with equal means."""


def _as_1d(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def _check_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    ax = _as_1d("x", x)
    ay = _as_1d("y", y)
    if ax.shape[0] != ay.shape[0]:
        raise SequenceLengthError(
            f"length mismatch: {ax.shape[0]} vs {ay.shape[0]}"
        )
    if ax.shape[0] < 2:
        raise SequenceLengthError("need at least 2 frames")
    return ax, ay


def _moments(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float, float, float]:
    """Population mean/variance/covariance shared by every CCC code path."""
    mean_x = float(x.mean())
    mean_y = float(y.mean())
    dx = x - mean_x
    dy = y - mean_y
    var_x = float((dx * dx).mean())
    var_y = float((dy * dy).mean())
    cov_xy = float((dx * dy).mean())
    return mean_x, mean_y, var_x, var_y, cov_xy


@dataclass(frozen=True)
class CccStats:
    """Population summary statistics feeding the concordance formula."""

    mean_x: float
    mean_y: float
    std_x: float
    std_y: float
    pearson: float
    cov_xy: float

    @classmethod
    def from_sequences(cls, x, y) -> "CccStats":
        ax, ay = _check_pair(x, y)
        mean_x, mean_y, var_x, var_y, cov_xy = _moments(ax, ay)
        std_x = math.sqrt(var_x)
        std_y = math.sqrt(var_y)
        if std_x > 0.0 and std_y > 0.0:
            r = cov_xy / (std_x * std_y)
            # guard against rounding pushing |r| just past 1
            r = min(1.0, max(-1.0, r))
        else:
            r = 0.0
        return cls(mean_x, mean_y, std_x, std_y, r, cov_xy)


def pearson(x, y) -> float:
    """Pearson correlation coefficient.

    Raises ZeroVarianceError when either input is constant; correlation is
    undefined there, unlike the covariance-form CCC which stays finite.
    """
    ax, ay = _check_pair(x, y)
    _, _, var_x, var_y, cov_xy = _moments(ax, ay)
    if var_x == 0.0 or var_y == 0.0:
        raise ZeroVarianceError("pearson undefined: zero variance input")
    r = cov_xy / math.sqrt(var_x * var_y)
    return min(1.0, max(-1.0, r))


def ccc(x, y) -> float:
    """Lin's concordance correlation coefficient in [-1, 1].

    Computed in the covariance form
    ``2*cov / (var_x + var_y + (mean_x - mean_y)^2)`` so that a constant
    prediction scores 0 rather than raising. The only undefined case is
    both inputs constant with equal means (0/0), which raises: returning
    a silent 1.0 there would mask a broken pipeline.
    """
    ax, ay = _check_pair(x, y)
    mean_x, mean_y, var_x, var_y, cov_xy = _moments(ax, ay)
    denom = var_x + var_y + (mean_x - mean_y) ** 2
    if denom == 0.0:
        raise DegenerateCccError("ccc undefined: both inputs constant with equal means")
    return 2.0 * cov_xy / denom


def ccc_loss(x, y) -> float:
    """Concordance loss ``1 - ccc(x, y)``, in [0, 2]."""
    return 1.0 - ccc(x, y)


def _apply_mask(x, y, mask) -> tuple[np.ndarray, np.ndarray]:
    ax = _as_1d("x", x)
    ay = _as_1d("y", y)
    m = np.asarray(mask)
    if m.shape != ax.shape or ax.shape != ay.shape:
        raise SequenceLengthError(
            f"shape mismatch: x {ax.shape}, y {ay.shape}, mask {m.shape}"
        )
    valid = m.astype(bool)
    if int(valid.sum()) < 2:
        raise SequenceLengthError("mask keeps fewer than 2 frames")
    return ax[valid], ay[valid]


def masked_ccc(x, y, mask) -> float:
    """CCC restricted to masked-in frames (mask entry truthy = valid)."""
    mx, my = _apply_mask(x, y, mask)
    return ccc(mx, my)


def masked_ccc_loss(x, y, mask) -> float:
    return 1.0 - masked_ccc(x, y, mask)


def masked_mse(x, y, mask) -> float:
    """Mean squared error over valid frames. Diagnostic only; never trained on."""
    mx, my = _apply_mask(x, y, mask)
    d = mx - my
    return float((d * d).mean())


@dataclass(frozen=True)
class AttributeTriple:
    """One (arousal, valence, liking) value triple."""

    arousal: float
    valence: float
    liking: float

    def __post_init__(self):
        for name in ATTRIBUTES:
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, v)

    @classmethod
    def from_array(cls, values) -> "AttributeTriple":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape[0] != 3:
            raise ValueError(f"expected 3 values, got {arr.shape[0]}")
        return cls(float(arr[0]), float(arr[1]), float(arr[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.arousal, self.valence, self.liking], dtype=np.float64)

    def mean(self) -> float:
        return (self.arousal + self.valence + self.liking) / 3.0


@dataclass(frozen=True)
class MtlWeights:
    """Weighting factors (alpha, beta, gamma) of the multitask loss.

    The weights are free nonnegative reals; their sum is deliberately not
    bounded by 1. ``mtl1_comparator`` builds the constrained variant where
    gamma is pinned to ``1 - (alpha + beta)`` and all three lie in [0, 1].
    """

    alpha: float
    beta: float
    gamma: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def mtl1_comparator(cls, alpha: float, beta: float) -> "MtlWeights":
        gamma = 1.0 - (alpha + beta)
        for name, v in (("alpha", alpha), ("beta", beta), ("gamma", gamma)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(
                    f"comparator weights must lie in [0, 1]; {name} = {v}"
                )
        return cls(alpha, beta, gamma)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma], dtype=np.float64)


#: Weights shipped as the default multitask configuration.
DEFAULT_WEIGHTS = MtlWeights(0.7, 0.2, 1.0)


@dataclass(frozen=True)
class MtlLossResult:
    """Weighted total plus the three per-attribute concordance losses."""

    total: float
    components: AttributeTriple


def mtl_loss(pred, truth, weights: MtlWeights, mask=None) -> MtlLossResult:
    """Weighted multitask concordance loss over one (T, 3) sequence pair.

    ``total == alpha*L_arousal + beta*L_valence + gamma*L_liking`` exactly,
    where each component is the (masked) CCC loss of its channel.
    """
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 3:
        raise ValueError(f"pred must have shape (T, 3), got {p.shape}")
    if p.shape != t.shape:
        raise SequenceLengthError(f"shape mismatch: pred {p.shape}, truth {t.shape}")
    losses = []
    for k in range(3):
        if mask is None:
            losses.append(ccc_loss(p[:, k], t[:, k]))
        else:
            losses.append(masked_ccc_loss(p[:, k], t[:, k], mask))
    w = weights.as_array()
    total = w[0] * losses[0] + w[1] * losses[1] + w[2] * losses[2]
    return MtlLossResult(float(total), AttributeTriple(*losses))


def pooled_ccc(preds: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> AttributeTriple:
    """Per-attribute CCC on the global concatenation of all valid frames.

    ``preds`` and ``labels`` are (B, T, 3); ``mask`` is (B, T). This is one
    of the two evaluation conventions the harness reports (the other being
    :func:`per_sequence_mean_ccc`); reports label which one they carry.
    """
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if p.shape != t.shape or p.shape[:2] != m.shape:
        raise SequenceLengthError("preds/labels/mask shapes are inconsistent")
    values = [ccc(p[:, :, k][m], t[:, :, k][m]) for k in range(3)]
    return AttributeTriple(*values)


def per_sequence_mean_ccc(
    preds: np.ndarray, labels: np.ndarray, mask: np.ndarray
) -> AttributeTriple:
    """Per-attribute CCC computed per sequence, then averaged over sequences."""
    p = np.asarray(preds, dtype=np.float64)
    t = np.asarray(labels, dtype=np.float64)
    m = np.asarray(mask).astype(bool)
    if p.shape != t.shape or p.shape[:2] != m.shape:
        raise SequenceLengthError("preds/labels/mask shapes are inconsistent")
    sums = np.zeros(3)
    for b in range(p.shape[0]):
        valid = m[b]
        for k in range(3):
            sums[k] += ccc(p[b, :, k][valid], t[b, :, k][valid])
    sums /= p.shape[0]
    return AttributeTriple(*sums)
