"""Iterative hard thresholding, refitting on a support, and (ℓ2-regularized)
ERM restricted to a fixed support."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .linalg import ConvergenceError, as_support, hard_threshold, support_of, thresholding_margin
from .losses import (
    Dataset,
    LossModel,
    check_inputs,
    empirical_gradient,
    empirical_risk,
    gram_top_eigenvalue,
    pointwise_loss,
    sigmoid,
)

__all__ = [
    "DivergenceError",
    "IhtConfig",
    "IhtTrace",
    "auto_step_size",
    "iht_run",
    "restricted_erm",
    "regularized_restricted_erm",
    "refit",
]

NEWTON_MAX_ITERS = 500


class DivergenceError(RuntimeError):
    def __init__(self, iteration, value):
        super().__init__(f"non-finite objective {value!r} at IHT iteration {iteration}; "
                         "step size too large?")
        self.iteration = iteration


@dataclass
class IhtConfig:
    k: int
    eta: float | str = "auto"
    max_iters: int = 500
    obj_tol: float = 1e-10
    refit: bool = False
    refit_tol: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.obj_tol < 0:
            raise ValueError("obj_tol must be >= 0")
        if self.eta != "auto" and not (float(self.eta) > 0):
            raise ValueError("eta must be positive or 'auto'")


@dataclass
class IhtTrace:
    """Per-iteration record of one IHT run.

    ``iterates[0]`` is the zero start; ``margins[t-1]`` is the thresholding
    margin of the pre-threshold vector that produced ``iterates[t]``.
    """

    eta: float
    iterates: list = field(default_factory=list)
    supports: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    margins: list = field(default_factory=list)
    refit_iterate: np.ndarray | None = None
    refit_objective: float | None = None

    @property
    def iterations(self) -> int:
        return len(self.iterates) - 1

    @property
    def last(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def final(self) -> np.ndarray:
        return self.refit_iterate if self.refit_iterate is not None else self.iterates[-1]

    @property
    def min_margin(self) -> float:
        return min(self.margins) if self.margins else math.inf


def auto_step_size(data: Dataset, seed=0) -> float:
    """2 / (3L) with L = λ_max(XᵀX/n), an upper bound on every restricted L_s."""
    return 2.0 / (3.0 * gram_top_eigenvalue(data.X, seed=seed))


def iht_run(data: Dataset, model, cfg: IhtConfig) -> IhtTrace:
    """Run w ← H_k(w − η∇F_S(w)) from w = 0.

    Stops after ``cfg.max_iters`` steps or once the objective changes by
    less than ``cfg.obj_tol`` between consecutive iterates. With
    ``cfg.refit`` the final support is refit by :func:`restricted_erm`.
    """
    model = LossModel.parse(model)
    p = data.p
    eta = auto_step_size(data, cfg.seed) if cfg.eta == "auto" else float(cfg.eta)
    w = np.zeros(p)
    check_inputs(model, w, data)
    obj = empirical_risk(model, w, data)
    trace = IhtTrace(eta=eta)
    trace.iterates.append(w)
    trace.supports.append(support_of(w))
    trace.objectives.append(obj)

    for t in range(1, cfg.max_iters + 1):
        # a divergent step overflows; that is reported below as DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            u = w - eta * empirical_gradient(model, w, data)
            if not np.all(np.isfinite(u)):
                raise DivergenceError(t, math.inf)
            margin = thresholding_margin(u, cfg.k) if cfg.k < p else math.inf
            w, supp = hard_threshold(u, cfg.k)
            new_obj = empirical_risk(model, w, data)
        if not math.isfinite(new_obj):
            raise DivergenceError(t, new_obj)
        trace.iterates.append(w)
        trace.supports.append(supp)
        trace.objectives.append(new_obj)
        trace.margins.append(margin)
        if abs(obj - new_obj) < cfg.obj_tol:
            break
        obj = new_obj

    if cfg.refit and trace.last.any():
        trace.refit_iterate = refit(trace.last, data, model, tol=cfg.refit_tol)
        trace.refit_objective = empirical_risk(model, trace.refit_iterate, data)
    return trace


def _solve_spd(A, b, ridge_fallback):
    try:
        c = scipy.linalg.cho_factor(A, lower=True)
        d = np.abs(np.diag(c[0]))
        # a pivot this small means A is singular up to round-off
        if d.min() ** 2 <= A.shape[0] * np.finfo(np.float64).eps * d.max() ** 2:
            raise np.linalg.LinAlgError("restricted Gram matrix is numerically singular")
        return scipy.linalg.cho_solve(c, b)
    except np.linalg.LinAlgError:
        if not ridge_fallback:
            raise
    ridge = 1e-10 * np.trace(A) / A.shape[0]
    if ridge <= 0:
        ridge = 1e-10
    warnings.warn(f"singular restricted Gram matrix; adding ridge {ridge:.3g}", RuntimeWarning)
    return np.linalg.solve(A + ridge * np.eye(A.shape[0]), b)


def _newton(XJ, y, lam, tol, w0=None):
    # damped Newton with Armijo backtracking for mean logistic loss + lam/2 |w|^2
    n, m = XJ.shape
    w = np.zeros(m) if w0 is None else w0.copy()

    def objective(v):
        return float(np.mean(pointwise_loss(LossModel.LOGISTIC, v, XJ, y))) + 0.5 * lam * (v @ v)

    f = objective(w)
    for _ in range(NEWTON_MAX_ITERS):
        z = XJ @ w
        sneg = sigmoid(-2.0 * y * z)
        g = XJ.T @ (-2.0 * y * sneg) / n + lam * w
        if np.max(np.abs(g)) <= tol:
            return w
        curv = 4.0 * sneg * (1.0 - sneg)
        H = (XJ.T * curv) @ XJ / n + lam * np.eye(m)
        try:
            d = -scipy.linalg.solve(H, g, assume_a="pos")
        except (np.linalg.LinAlgError, ValueError):
            d = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        elif -slope <= 1e-14 * max(1.0, abs(f)):
            # decrease is below round-off in f, so Armijo cannot see it; inside
            # the quadratic region the full Newton step is safe
            w = w + d
            f = objective(w)
            continue
        step = 1.0
        while True:
            w_new = w + step * d
            f_new = objective(w_new)
            if f_new <= f + 1e-4 * step * slope or step < 1e-12:
                break
            step *= 0.5
        if step < 1e-12 and f_new >= f:
            # no further progress possible in floating point
            if np.max(np.abs(g)) <= 10 * tol:
                return w
            break
        w, f = w_new, f_new
    raise ConvergenceError(
        f"Newton solver did not reach gradient tolerance {tol:g} in {NEWTON_MAX_ITERS} "
        "iterations (restricted problem may be unbounded)", estimate=w)


def _restricted(data, model, J, lam, tol, ridge_fallback):
    model = LossModel.parse(model)
    J = as_support(J, data.p)
    if J.size == 0:
        raise ValueError("support must be nonempty")
    check_inputs(model, np.zeros(data.p), data)
    XJ = data.X[:, J]
    n = data.n
    if model is LossModel.SQUARED:
        A = XJ.T @ XJ / n
        if lam > 0:
            A = A + lam * np.eye(J.size)
        wJ = _solve_spd(A, XJ.T @ data.y / n, ridge_fallback=ridge_fallback or lam > 0)
    else:
        wJ = _newton(XJ, data.y, lam, tol)
    w = np.zeros(data.p)
    w[J] = wJ
    return w


def restricted_erm(data: Dataset, model, J, tol=1e-9, ridge_fallback=True) -> np.ndarray:
    """argmin F_S(w) subject to supp(w) ⊆ J.

    Squared loss solves the normal equations on the J columns (a tiny ridge
    is added, with a warning, if they are singular and ``ridge_fallback``);
    logistic loss runs damped Newton until the restricted gradient is below
    ``tol`` in sup-norm.
    """
    return _restricted(data, model, J, 0.0, tol, ridge_fallback)


def regularized_restricted_erm(data: Dataset, model, J, lam, tol=1e-9) -> np.ndarray:
    """argmin F_S(w) + lam/2 ||w||² subject to supp(w) ⊆ J (unique, lam > 0)."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return _restricted(data, model, J, float(lam), tol, ridge_fallback=False)


def refit(w, data: Dataset, model, tol=1e-9) -> np.ndarray:
    """Re-solve the ERM on supp(w)."""
    J = support_of(np.asarray(w))
    if J.size == 0:
        raise ValueError("cannot refit on an empty support")
    return restricted_erm(data, model, J, tol=tol)
