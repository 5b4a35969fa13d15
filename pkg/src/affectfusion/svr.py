"""Epsilon-insensitive support vector regression solved by sequential
minimal optimization, used as the static late-fusion regressor.

The dual is solved in the doubled variable space z = (alpha, alpha*) with
box [0, C] and the balance constraint sum(alpha - alpha*) = 0. Working
pairs are chosen by maximal KKT violation; a seeded random second choice
is the fallback when the maximal pair cannot move. Coefficients reported
by the model are beta = alpha - alpha*, so |beta| <= C always holds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

MODEL_DUMP_VERSION = 1


@dataclass(frozen=True)
class SvrConfig:
    c: float = 1.0
    epsilon: float = 0.01
    kernel: str = "rbf"  # "linear" or "rbf"
    gamma: float | None = None  # rbf width; None means 1/D at fit time
    tol: float = 1e-3
    max_passes: int = 200  # pair-update budget: max_passes * n_samples iterations
    seed: int = 0

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError("c must be > 0")
        if self.epsilon < 0.0:
            raise ValueError("epsilon must be >= 0")
        if self.kernel not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.gamma is not None and self.gamma <= 0.0:
            raise ValueError("gamma must be > 0")
        if self.tol <= 0.0 or self.max_passes < 1:
            raise ValueError("bad tol/max_passes")


def kernel_eval(a, b, config: SvrConfig) -> float:
    """Kernel value for a single vector pair."""
    av = np.asarray(a, dtype=np.float64).reshape(-1)
    bv = np.asarray(b, dtype=np.float64).reshape(-1)
    if av.shape != bv.shape:
        raise ValueError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    if config.kernel == "linear":
        return float(av @ bv)
    gamma = config.gamma if config.gamma is not None else 1.0 / av.shape[0]
    d = av - bv
    return float(np.exp(-gamma * (d @ d)))


def _gram(xa: np.ndarray, xb: np.ndarray, kernel: str, gamma: float | None) -> np.ndarray:
    if kernel == "linear":
        return xa @ xb.T
    sq = (
        (xa * xa).sum(axis=1)[:, None]
        + (xb * xb).sum(axis=1)[None, :]
        - 2.0 * (xa @ xb.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-gamma * sq)


@dataclass
class SvrModel:
    support_vectors: np.ndarray  # (S, D)
    dual_coefs: np.ndarray  # (S,) in [-c, c]
    bias: float
    config: SvrConfig  # with gamma resolved
    converged: bool = True
    n_iter: int = 0


def fit_svr(x, y, config: SvrConfig | None = None) -> SvrModel:
    """Fit epsilon-SVR by SMO on the dual.

    If the iteration budget runs out before the maximal KKT violation
    drops below ``tol``, the partial model is returned with
    ``converged=False``.
    """
    config = config or SvrConfig()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"x {x.shape} and y {y.shape} are inconsistent")
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    gamma = config.gamma
    if config.kernel == "rbf" and gamma is None:
        gamma = 1.0 / x.shape[1]
    resolved = replace(config, gamma=gamma if config.kernel == "rbf" else None)

    K = _gram(x, x, resolved.kernel, resolved.gamma)
    beta, bias, converged, n_iter = _smo(K, y, resolved)

    keep = beta != 0.0
    return SvrModel(
        support_vectors=x[keep].copy(),
        dual_coefs=beta[keep].copy(),
        bias=bias,
        config=resolved,
        converged=converged,
        n_iter=n_iter,
    )


def _smo(K: np.ndarray, y: np.ndarray, cfg: SvrConfig):
    n = y.shape[0]
    C = cfg.c
    rng = np.random.default_rng(cfg.seed)
    s = np.concatenate([np.ones(n), -np.ones(n)])
    z = np.zeros(2 * n)
    # gradient of the dual objective; starts at the linear term
    G = np.concatenate([cfg.epsilon - y, cfg.epsilon + y])
    snap = 1e-12 * max(1.0, C)
    max_iter = cfg.max_passes * n
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        crit = -s * G
        in_up = ((s > 0) & (z < C)) | ((s < 0) & (z > 0))
        in_low = ((s < 0) & (z < C)) | ((s > 0) & (z > 0))
        up_vals = np.where(in_up, crit, -np.inf)
        low_vals = np.where(in_low, crit, np.inf)
        i = int(np.argmax(up_vals))
        j = int(np.argmin(low_vals))
        m = up_vals[i]
        M = low_vals[j]
        if m - M <= cfg.tol:
            converged = True
            break

        t = _pair_step(K, s, z, G, i, j, m - M, C, n)
        if t <= 0.0:
            # maximal pair cannot move: random second choice from the low set
            candidates = np.flatnonzero(in_low & (np.arange(2 * n) != i))
            moved = False
            for j2 in rng.permutation(candidates):
                if m - crit[j2] <= cfg.tol:
                    continue
                if _pair_step(K, s, z, G, i, int(j2), m - crit[j2], C, n) > 0.0:
                    moved = True
                    break
            if not moved:
                break

    # bias from free variables, or the midpoint of the violation interval
    crit = -s * G
    free = (z > snap) & (z < C - snap)
    if np.any(free):
        bias = float(crit[free].mean())
    else:
        in_up = ((s > 0) & (z < C)) | ((s < 0) & (z > 0))
        in_low = ((s < 0) & (z < C)) | ((s > 0) & (z > 0))
        hi = crit[in_up].max() if np.any(in_up) else 0.0
        lo = crit[in_low].min() if np.any(in_low) else 0.0
        bias = float(0.5 * (hi + lo))

    beta = z[:n] - z[n:]
    beta[np.abs(beta) < snap] = 0.0
    return beta, bias, converged, it


def _pair_step(K, s, z, G, i, j, violation, C, n) -> float:
    """Closed-form two-variable update; returns the applied step size."""
    ih, jh = i % n, j % n
    eta = K[ih, ih] + K[jh, jh] - 2.0 * K[ih, jh]
    if eta < 1e-12:
        eta = 1e-12
    t = violation / eta
    # box limits: variable i moves by +s_i*t, variable j by -s_j*t
    t_max_i = (C - z[i]) if s[i] > 0 else z[i]
    t_max_j = z[j] if s[j] > 0 else (C - z[j])
    t = min(t, t_max_i, t_max_j)
    if t <= 0.0:
        return 0.0
    z[i] += s[i] * t
    z[j] -= s[j] * t
    # land exactly on the box when the step was boundary-limited
    if t == t_max_i:
        z[i] = C if s[i] > 0 else 0.0
    if t == t_max_j:
        z[j] = 0.0 if s[j] > 0 else C
    dk = K[:, ih] - K[:, jh]
    G += s * t * np.concatenate([dk, dk])
    return t


def dual_objective(K: np.ndarray, y: np.ndarray, epsilon: float, beta: np.ndarray) -> float:
    """Value of the dual objective at beta (with alpha, alpha* = beta+-)."""
    return float(0.5 * beta @ K @ beta + epsilon * np.abs(beta).sum() - y @ beta)


def predict_svr(model: SvrModel, x) -> np.ndarray:
    """f(x) = sum_i dual_coef_i * K(sv_i, x) + bias."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"query must be a matrix, got shape {x.shape}")
    if x.shape[0] == 0:
        return np.zeros(0)
    if model.support_vectors.shape[0] == 0:
        return np.full(x.shape[0], model.bias)
    if x.shape[1] != model.support_vectors.shape[1]:
        raise ValueError(
            f"query dimension {x.shape[1]} != training dimension "
            f"{model.support_vectors.shape[1]}"
        )
    K = _gram(x, model.support_vectors, model.config.kernel, model.config.gamma)
    return K @ model.dual_coefs + model.bias


@dataclass
class Standardizer:
    """Column-wise zero-mean unit-variance scaling with frozen statistics."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        std = np.where(std == 0.0, 1.0, std)
        return cls(mean, std)

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std


def save_svr(path, model: SvrModel) -> None:
    """Versioned .npz dump; float64 arrays round-trip bit-exactly."""
    cfg = model.config
    np.savez(
        path,
        format_version=np.array(MODEL_DUMP_VERSION),
        support_vectors=model.support_vectors,
        dual_coefs=model.dual_coefs,
        bias=np.array(model.bias),
        converged=np.array(model.converged),
        n_iter=np.array(model.n_iter),
        config_json=np.array(
            json.dumps(
                {
                    "c": cfg.c,
                    "epsilon": cfg.epsilon,
                    "kernel": cfg.kernel,
                    "gamma": cfg.gamma,
                    "tol": cfg.tol,
                    "max_passes": cfg.max_passes,
                    "seed": cfg.seed,
                },
                sort_keys=True,
            )
        ),
    )


def load_svr(path) -> SvrModel:
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != MODEL_DUMP_VERSION:
            raise ValueError(f"unsupported model dump version {version}")
        raw = json.loads(str(data["config_json"]))
        return SvrModel(
            support_vectors=data["support_vectors"],
            dual_coefs=data["dual_coefs"],
            bias=float(data["bias"]),
            config=SvrConfig(**raw),
            converged=bool(data["converged"]),
            n_iter=int(data["n_iter"]),
        )
