"""Squared and logistic losses, their empirical risks and gradients, and
estimators for the smoothness / strong-convexity / Lipschitz constants.

Logistic labels live in {-1, +1} and the loss is ``log(1 + exp(-2 y w.x))``.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .linalg import as_matrix, as_support, as_vector, top_eigenvalue

__all__ = [
    "LossModel",
    "Dataset",
    "ConstantEstimates",
    "softplus",
    "sigmoid",
    "pointwise_loss",
    "loss_value",
    "empirical_risk",
    "empirical_gradient",
    "restricted_gradient",
    "gram_top_eigenvalue",
    "estimate_constants",
    "check_inputs",
]


class LossModel(enum.Enum):
    SQUARED = "squared"
    LOGISTIC = "logistic"

    @classmethod
    def parse(cls, value) -> "LossModel":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


@dataclass(frozen=True)
class Dataset:
    """n samples (rows of ``X``) with responses or ±1 labels ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = as_matrix(self.X)
        y = as_vector(self.y)
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def is_binary(self) -> bool:
        return bool(np.all(np.abs(self.y) == 1.0))

    def replace(self, i, x, y) -> "Dataset":
        """Copy of the dataset with sample ``i`` swapped for ``(x, y)``."""
        X = self.X.copy()
        yy = self.y.copy()
        X[i] = x
        yy[i] = y
        return Dataset(X, yy)


@dataclass(frozen=True)
class ConstantEstimates:
    """Estimated problem constants.

    ``mu_strong`` comes from sampled supports unless every support of the
    requested size was enumerated (``mu_exact``).
    """

    L_smooth: float
    mu_strong: float
    G_lip: float
    M_bound: float
    mu_exact: bool = False

    @property
    def condition_number(self) -> float:
        return self.L_smooth / self.mu_strong if self.mu_strong > 0 else math.inf


def softplus(t):
    """log(1 + exp(t)) without overflow."""
    t = np.asarray(t, dtype=np.float64)
    # log1p(exp(-z)) for z >= 0, -z + log1p(exp(z)) for z < 0, with z = -t
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def check_inputs(model, w, data):
    if w.shape[0] != data.p:
        raise ValueError(f"w has dimension {w.shape[0]}, data has {data.p} features")
    if model is LossModel.LOGISTIC and not data.is_binary():
        raise ValueError("logistic loss needs labels in {-1, +1}")


def pointwise_loss(model, w, X, y) -> np.ndarray:
    """Per-sample losses for rows of ``X``."""
    z = X @ w
    if model is LossModel.SQUARED:
        return 0.5 * (y - z) ** 2
    return softplus(-2.0 * y * z)


def _slope(model, w, X, y) -> np.ndarray:
    # derivative of each sample loss w.r.t. the margin w.x
    z = X @ w
    if model is LossModel.SQUARED:
        return z - y
    return -2.0 * y * sigmoid(-2.0 * y * z)


def loss_value(model, w, x, y) -> float:
    model = LossModel.parse(model)
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise ValueError(f"dimension mismatch: w {w.shape} vs x {x.shape}")
    if model is LossModel.LOGISTIC and abs(y) != 1.0:
        raise ValueError("logistic loss needs a label in {-1, +1}")
    return float(pointwise_loss(model, w, x[None, :], np.array([y]))[0])


def empirical_risk(model, w, data: Dataset) -> float:
    """Mean loss over the dataset (numpy pairwise summation)."""
    model = LossModel.parse(model)
    w = np.asarray(w, dtype=np.float64)
    check_inputs(model, w, data)
    return float(np.mean(pointwise_loss(model, w, data.X, data.y)))


def empirical_gradient(model, w, data: Dataset) -> np.ndarray:
    model = LossModel.parse(model)
    w = np.asarray(w, dtype=np.float64)
    check_inputs(model, w, data)
    return data.X.T @ _slope(model, w, data.X, data.y) / data.n


def restricted_gradient(model, w, data: Dataset, J) -> np.ndarray:
    """Empirical gradient with every coordinate outside ``J`` zeroed."""
    J = as_support(J, data.p)
    g = empirical_gradient(model, w, data)
    out = np.zeros_like(g)
    out[J] = g[J]
    return out


def gram_top_eigenvalue(X, tol=1e-10, seed=0) -> float:
    """λ_max(XᵀX/n) by power iteration."""
    n, p = X.shape
    if n >= p:
        G = X.T @ X / n
        return top_eigenvalue(lambda v: G @ v, p, tol=tol, seed=seed)
    return top_eigenvalue(lambda v: X.T @ (X @ v) / n, p, tol=tol, seed=seed)


def _restricted_min_eig(gram, k, n_supports, rng):
    p = gram.shape[0]
    k = min(k, p)
    if math.comb(p, k) <= n_supports:
        supports = (list(c) for c in itertools.combinations(range(p), k))
        exact = True
    else:
        supports = (np.sort(rng.choice(p, size=k, replace=False)) for _ in range(n_supports))
        exact = False
    best = math.inf
    for J in supports:
        sub = gram[np.ix_(J, J)]
        best = min(best, float(np.linalg.eigvalsh(sub)[0]))
    return max(best, 0.0), exact


def estimate_constants(model, data: Dataset, k: int, radius: float,
                       n_supports=200, seed=0) -> ConstantEstimates:
    """Estimate L_s, μ_s, G and M for ``data`` on the ball of radius ``radius``.

    L is λ_max(XᵀX/n) for both losses (the logistic curvature factor
    4s(1-s) never exceeds 1). μ is the smallest restricted eigenvalue of
    XᵀX/n over ``n_supports`` random size-k supports; for logistic loss it is
    further scaled by the smallest curvature factor reachable inside the
    ball. G and M bound the per-sample slope and loss over the ball.
    """
    model = LossModel.parse(model)
    if k < 1:
        raise ValueError("k must be >= 1")
    if radius <= 0:
        raise ValueError("radius must be positive")
    X, y = data.X, data.y
    if not np.any(X):
        raise ValueError("degenerate data: all-zero design matrix")
    check_inputs(model, np.zeros(data.p), data)
    n = data.n
    L = gram_top_eigenvalue(X, seed=seed)
    gram = X.T @ X / n
    mu, exact = _restricted_min_eig(gram, k, n_supports, np.random.default_rng(seed))
    xnorm = np.linalg.norm(X, axis=1)
    if model is LossModel.SQUARED:
        slope = np.abs(y) + radius * xnorm
        G = float(np.max(xnorm * slope))
        M = float(np.max(0.5 * slope ** 2))
    else:
        zmax = 2.0 * radius * float(np.max(xnorm))
        s = float(sigmoid(zmax))
        mu *= 4.0 * s * (1.0 - s)
        G = 2.0 * float(np.max(xnorm))
        M = float(softplus(zmax))
    mu = min(mu, L)
    return ConstantEstimates(L_smooth=L, mu_strong=mu, G_lip=G, M_bound=M, mu_exact=exact)
