"""Stability diagnostics for IHT.

* margin profiles of the IHT recursion on an arbitrary gradient field
  (population or empirical), which certify hard-thresholding stability;
* the exact IHT trajectory on the isotropic linear population risk;
* leave-one-out estimates of uniform stability for ℓ2-regularized ERM
  restricted to a support;
* the strong-signal condition under which IHT's support contains supp(w_bar).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .linalg import as_support, as_vector, hard_threshold, support_of, thresholding_margin
from .losses import Dataset, LossModel, pointwise_loss
from .solver import regularized_restricted_erm
from .synth import GenerativeSpec, generate, make_rng

__all__ = [
    "StabilityReport",
    "iht_stability_trace",
    "population_iht_linear_oracle",
    "linear_population_gradient",
    "support_overlap",
    "loo_uniform_stability",
    "strong_signal_predicate",
    "strong_signal_threshold",
    "estimation_error_bound",
]


@dataclass
class StabilityReport:
    margins: np.ndarray
    min_margin: float
    iterates: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    support_match_rate: float | None = None
    loo_gamma_hat: float | None = None

    def is_stable(self, eps) -> bool:
        """Whether every pre-threshold vector was ``eps``-hard-thresholding stable."""
        return self.min_margin >= eps


def linear_population_gradient(w_tilde) -> Callable[[np.ndarray], np.ndarray]:
    """∇F for F(w) = ½||w - w̃||² + σ²/2."""
    w_tilde = np.asarray(w_tilde, dtype=np.float64)
    return lambda w: w - w_tilde


def iht_stability_trace(risk_gradient, k, eta, T, w0) -> StabilityReport:
    """Run T IHT steps on ``risk_gradient`` from ``w0`` and record the
    thresholding margin of every pre-threshold vector.

    The field is (ε, eta, T, w0)-IHT stable for every ε <= ``min_margin``.
    """
    w = as_vector(w0)
    if np.count_nonzero(w) > k:
        raise ValueError("w0 must have at most k nonzeros")
    if T < 1:
        raise ValueError("T must be >= 1")
    p = w.shape[0]
    margins = np.empty(T)
    iterates, supports = [w], [support_of(w)]
    for t in range(T):
        g = np.asarray(risk_gradient(w), dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"gradient field returned non-finite values at step {t + 1}")
        u = w - eta * g
        margins[t] = thresholding_margin(u, k) if k < p else math.inf
        w, supp = hard_threshold(u, k)
        iterates.append(w)
        supports.append(supp)
    return StabilityReport(margins=margins, min_margin=float(margins.min()),
                           iterates=iterates, supports=supports)


def population_iht_linear_oracle(w_tilde, sigma, k, eta, T) -> list:
    """Closed-form IHT iterates on F(w) = ½||w - w̃||² + σ²/2 from w = 0.

    Returns ``[w0, w1, ..., wT]`` with w_t = (1 - (1 - eta)^t) w̃_J, J the
    top-k support of w̃. ``sigma`` only shifts F and does not enter the
    iterates.
    """
    w_tilde = as_vector(w_tilde)
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if k < w_tilde.shape[0] and thresholding_margin(w_tilde, k) <= 0:
        raise ValueError("top-k support of w_tilde is ambiguous (zero gap)")
    w_J, _ = hard_threshold(w_tilde, k)
    return [(1.0 - (1.0 - eta) ** t) * w_J for t in range(T + 1)]


def support_overlap(a, b):
    """(exact equality, Jaccard index) of two index sets; two empty sets match."""
    a = set(np.asarray(a, dtype=np.int64).tolist())
    b = set(np.asarray(b, dtype=np.int64).tolist())
    union = a | b
    if not union:
        return True, 1.0
    return a == b, len(a & b) / len(union)


def loo_uniform_stability(data: Dataset, model, J, lam, trials, seed=0, *,
                          spec: GenerativeSpec | None = None, replacement="auto",
                          pool_size=1000, tol=1e-10) -> float:
    """Empirical (lower) estimate of the uniform stability of ℓ2-regularized
    ERM restricted to ``J``.

    Each trial replaces one random training sample, re-solves, and records
    the largest loss change over the evaluation points: a pool of
    ``pool_size`` fresh draws from ``spec`` (when given) plus the training
    points of both datasets. The result is the max over trials.

    ``replacement`` chooses the substitute sample: ``"spec"`` draws it from
    ``spec``, ``"bootstrap"`` resamples it from ``data``, ``"duplicate"``
    reuses the removed sample, and ``"auto"`` means spec if given else
    bootstrap.
    """
    model = LossModel.parse(model)
    J = as_support(J, data.p)
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if replacement == "auto":
        replacement = "spec" if spec is not None else "bootstrap"
    if replacement == "spec" and spec is None:
        raise ValueError("replacement='spec' needs a GenerativeSpec")
    if replacement not in ("spec", "bootstrap", "duplicate"):
        raise ValueError(f"unknown replacement mode {replacement!r}")

    w_S = regularized_restricted_erm(data, model, J, lam, tol=tol)
    if spec is not None and pool_size > 0:
        pool = generate(spec, pool_size, make_rng(seed, "loo-pool"))
        X_eval, y_eval = np.vstack([pool.X, data.X]), np.concatenate([pool.y, data.y])
    else:
        X_eval, y_eval = data.X, data.y
    base = pointwise_loss(model, w_S, X_eval, y_eval)

    gamma = 0.0
    for trial in range(trials):
        rng = make_rng(seed, "loo-trial", trial)
        i = int(rng.integers(data.n))
        if replacement == "spec":
            fresh = generate(spec, 1, rng)
            x_new, y_new = fresh.X[0], fresh.y[0]
        elif replacement == "bootstrap":
            j = int(rng.integers(data.n))
            x_new, y_new = data.X[j], data.y[j]
        else:
            x_new, y_new = data.X[i], data.y[i]
        data_i = data.replace(i, x_new, y_new)
        w_i = regularized_restricted_erm(data_i, model, J, lam, tol=tol)
        diff = np.abs(pointwise_loss(model, w_i, X_eval, y_eval) - base)
        extra = abs(float(pointwise_loss(model, w_i, x_new[None, :], np.array([y_new]))[0]
                          - pointwise_loss(model, w_S, x_new[None, :], np.array([y_new]))[0]))
        gamma = max(gamma, float(diff.max()), extra)
    return gamma


def strong_signal_threshold(grad_inf, mu, G, k, n, p, delta) -> float:
    """Right-hand side of the strong-signal condition:
    2√(2k)·grad_inf/μ + (3G/μ)·√(k log(4p/δ)/n)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    if min(n, k, p) < 1:
        raise ValueError("n, k and p must be >= 1")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    return (2.0 * math.sqrt(2.0 * k) * grad_inf / mu
            + 3.0 * G / mu * math.sqrt(k * math.log(4.0 * p / delta) / n))


def strong_signal_predicate(w_bar, grad_inf, mu, G, k, n, p, delta) -> bool:
    """Whether the smallest nonzero |w_bar_i| exceeds :func:`strong_signal_threshold`."""
    w_bar = np.asarray(w_bar, dtype=np.float64)
    nz = np.abs(w_bar[w_bar != 0])
    if nz.size == 0:
        raise ValueError("w_bar is all zero; its smallest nonzero entry is undefined")
    return bool(nz.min() > strong_signal_threshold(grad_inf, mu, G, k, n, p, delta))


def estimation_error_bound(grad_inf, mu, s, eps=0.0) -> float:
    """Bound on ||w - w'|| when f is μ_s-strongly convex, ||w - w'||_0 <= s and
    f(w) <= f(w') + eps: 2√s·||∇f(w')||_∞/μ + √(2 eps/μ)."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return 2.0 * math.sqrt(s) * grad_inf / mu + math.sqrt(2.0 * eps / mu)
