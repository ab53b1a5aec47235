"""Vector primitives: validated dense vectors, top-k magnitude selection,
thresholding margins and power iteration.

Vectors are plain 1-D ``float64`` numpy arrays and supports are sorted
``int64`` index arrays. Validation happens once, in :func:`as_vector` /
:func:`as_matrix`; the other functions assume their input already passed.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "ConvergenceError",
    "as_vector",
    "as_matrix",
    "as_support",
    "support_of",
    "hard_threshold",
    "thresholding_margin",
    "top_eigenvalue",
]


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of iterations.

    ``estimate`` holds the last value computed before giving up.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


def as_vector(values, p=None) -> np.ndarray:
    """Return ``values`` as a finite 1-D float64 array, optionally of length ``p``."""
    w = np.array(values, dtype=np.float64, copy=True)
    if w.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {w.shape}")
    if p is not None and w.shape[0] != p:
        raise ValueError(f"expected length {p}, got {w.shape[0]}")
    if not np.all(np.isfinite(w)):
        raise ValueError("vector contains NaN or Inf")
    return w


def as_matrix(values) -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array (rows are samples)."""
    X = np.array(values, dtype=np.float64, copy=True)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix contains NaN or Inf")
    return X


def as_support(indices, p) -> np.ndarray:
    """Sorted, duplicate-free index array with every entry in ``[0, p)``."""
    J = np.unique(np.asarray(indices, dtype=np.int64).reshape(-1))
    if J.size and (J[0] < 0 or J[-1] >= p):
        raise IndexError(f"support index out of range for dimension {p}")
    return J


def support_of(w) -> np.ndarray:
    return np.flatnonzero(w).astype(np.int64)


def _topk_order(w: np.ndarray) -> np.ndarray:
    # |w| descending, index ascending on ties; lexsort is stable and keys
    # are read last-to-first.
    return np.lexsort((np.arange(w.shape[0]), -np.abs(w)))


def hard_threshold(w, k):
    """Keep the ``k`` largest-magnitude entries of ``w`` and zero the rest.

    Ties in magnitude go to the lower index, so the result is deterministic.
    Returns ``(vector, support)`` where ``support`` lists the nonzero entries
    of the returned vector; it is shorter than ``k`` when ``w`` has fewer than
    ``k`` nonzeros. ``k >= len(w)`` returns a copy of ``w``.

    >>> hard_threshold(np.array([3.0, -5.0, 1.0]), 2)[0]
    array([ 3., -5.,  0.])
    """
    w = np.asarray(w, dtype=np.float64)
    if k < 0:
        raise ValueError("k must be nonnegative")
    p = w.shape[0]
    if k >= p:
        out = w.copy()
    else:
        out = np.zeros_like(w)
        if k > 0:
            keep = _topk_order(w)[:k]
            out[keep] = w[keep]
    return out, support_of(out)


def thresholding_margin(w, k) -> float:
    """Gap between the k-th and (k+1)-th largest magnitudes of ``w``.

    ``w`` is ε-hard-thresholding stable for every ε up to this value: any
    perturbation with sup-norm below half the margin leaves the top-k
    support unchanged.
    """
    w = np.asarray(w, dtype=np.float64)
    p = w.shape[0]
    if not 1 <= k < p:
        raise ValueError(f"margin needs 1 <= k < p, got k={k}, p={p}")
    a = np.abs(w)
    # partition puts the (p-k-1)-th and (p-k)-th smallest in place
    part = np.partition(a, (p - k - 1, p - k))
    return float(part[p - k] - part[p - k - 1])


def top_eigenvalue(apply: Callable[[np.ndarray], np.ndarray], p: int, tol=1e-10,
                   max_iter=20000, seed=0) -> float:
    """Largest eigenvalue of a symmetric PSD operator by power iteration.

    ``apply(v)`` must return the operator applied to ``v``. Iteration stops
    once the Rayleigh quotient changes by less than ``tol`` relative to its
    current value. Raises :class:`ConvergenceError` carrying the last
    estimate if that never happens within ``max_iter`` steps.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(p)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        u = apply(v)
        lam_new = float(v @ u)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v = u / nrm
        if abs(lam_new - lam) <= tol * abs(lam_new):
            # one more application so the returned value uses the updated vector
            return max(lam_new, float(v @ apply(v)))
        lam = lam_new
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations", estimate=lam)
