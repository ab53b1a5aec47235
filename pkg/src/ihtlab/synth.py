"""Seeded generators for the synthetic sparse linear / logistic models and the
signal-gap construction, plus CSV round-tripping of datasets.

Randomness comes from :func:`make_rng`: a Philox counter-based generator
keyed by ``SeedSequence(seed, spawn_key=keys)``. Distinct key tuples give
independent streams, so replicate ``r`` of grid point ``g`` can be
regenerated on its own with ``make_rng(seed, g, r)``.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .linalg import as_vector, hard_threshold, support_of, thresholding_margin
from .losses import Dataset, sigmoid

__all__ = [
    "ModelKind",
    "GenerativeSpec",
    "make_rng",
    "stream_key",
    "sparse_truth",
    "gen_linear",
    "gen_logistic",
    "generate",
    "draw_features",
    "gen_gap_model",
    "misspecify",
    "write_dataset_csv",
    "read_dataset_csv",
]


class ModelKind(enum.Enum):
    LINEAR_GAUSSIAN = "linear"
    LOGISTIC_GAUSSIAN = "logistic"


def stream_key(*keys) -> tuple:
    """Normalise stream keys to the nonnegative ints SeedSequence accepts.

    Strings are hashed with a fixed (non-salted) FNV-1a so keys are stable
    across processes.
    """
    out = []
    for key in keys:
        if isinstance(key, str):
            h = 0xCBF29CE484222325
            for b in key.encode():
                h = ((h ^ b) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
            out.append(h)
        else:
            key = int(key)
            if key < 0:
                raise ValueError("stream keys must be nonnegative")
            out.append(key)
    return tuple(out)


def make_rng(seed, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=stream_key(*keys))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class GenerativeSpec:
    """Ground truth for a synthetic model.

    ``w_bar`` is the population minimiser. It is k_bar-sparse for the
    well-specified generators; the gap construction and :func:`misspecify`
    produce dense vectors and set ``well_specified=False``.
    """

    kind: ModelKind
    p: int
    k_bar: int
    w_bar: np.ndarray
    sigma: float = 0.0
    gap: float = 0.0
    seed: int = 0
    normalize: bool = False
    well_specified: bool = True

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        w = as_vector(self.w_bar, self.p)
        w.setflags(write=False)
        object.__setattr__(self, "w_bar", w)
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.gap < 0:
            raise ValueError("gap must be >= 0")
        if not 0 <= self.k_bar <= self.p:
            raise ValueError("k_bar must lie in [0, p]")
        if self.well_specified and np.count_nonzero(w) > self.k_bar:
            raise ValueError("w_bar has more than k_bar nonzeros")

    @property
    def identity_covariance(self) -> bool:
        return not self.normalize

    @classmethod
    def sparse(cls, kind, p, k_bar, *, sigma=0.0, magnitude=1.0, seed=0,
               normalize=False) -> "GenerativeSpec":
        """Well-specified model with ±magnitude on a random k_bar-subset."""
        w = sparse_truth(p, k_bar, magnitude, make_rng(seed, "truth"))
        return cls(ModelKind(kind), p, k_bar, w, sigma=sigma, seed=seed, normalize=normalize)

    @classmethod
    def gap_model(cls, p, k_bar, gap, *, sigma=1.0, scale=1.0, seed=0) -> "GenerativeSpec":
        """Dense linear model whose top-k_bar block is separated by ``gap``."""
        w = gen_gap_model(p, k_bar, gap, seed, scale=scale)
        return cls(ModelKind.LINEAR_GAUSSIAN, p, k_bar, w, sigma=sigma, gap=gap,
                   seed=seed, well_specified=False)


def sparse_truth(p, k_bar, magnitude, rng) -> np.ndarray:
    w = np.zeros(p)
    J = np.sort(rng.choice(p, size=k_bar, replace=False))
    w[J] = magnitude * rng.choice([-1.0, 1.0], size=k_bar)
    return w


def draw_features(spec: GenerativeSpec, n, rng) -> np.ndarray:
    X = rng.standard_normal((n, spec.p))
    if spec.normalize:
        X /= np.maximum(1.0, np.linalg.norm(X, axis=1))[:, None]
    return X


def gen_linear(spec: GenerativeSpec, n, rng=None) -> Dataset:
    """x ~ N(0, I_p), y = w_bar.x + N(0, sigma²)."""
    if spec.kind is not ModelKind.LINEAR_GAUSSIAN:
        raise ValueError("gen_linear needs a linear spec")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(spec.seed, "data", n) if rng is None else rng
    X = draw_features(spec, n, rng)
    noise = rng.standard_normal(n)
    return Dataset(X, X @ spec.w_bar + spec.sigma * noise)


def gen_logistic(spec: GenerativeSpec, n, rng=None) -> Dataset:
    """x ~ N(0, I_p) (optionally projected into the unit ball), then
    P(y = +1 | x) = s(2 w_bar.x)."""
    if spec.kind is not ModelKind.LOGISTIC_GAUSSIAN:
        raise ValueError("gen_logistic needs a logistic spec")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(spec.seed, "data", n) if rng is None else rng
    X = draw_features(spec, n, rng)
    u = rng.random(n)
    y = np.where(u < sigmoid(2.0 * (X @ spec.w_bar)), 1.0, -1.0)
    return Dataset(X, y)


def generate(spec: GenerativeSpec, n, rng=None) -> Dataset:
    if spec.kind is ModelKind.LINEAR_GAUSSIAN:
        return gen_linear(spec, n, rng)
    return gen_logistic(spec, n, rng)


def gen_gap_model(p, k_bar, gap, seed, scale=1.0) -> np.ndarray:
    """ŵ ~ N(0, scale² I_p) with its top-k_bar entries pushed out by ``gap``.

    Returns w̃ where w̃_j = ŵ_j + gap·sign(ŵ_j) on the top-k_bar set of ŵ and
    w̃_j = ŵ_j elsewhere, so the k_bar-th and (k_bar+1)-th magnitudes of w̃
    differ by at least ``gap``.
    """
    if not 1 <= k_bar < p:
        raise ValueError("need 1 <= k_bar < p")
    if gap < 0:
        raise ValueError("gap must be >= 0")
    if not scale > 0:
        raise ValueError("scale must be positive")
    w_hat = scale * make_rng(seed, "gap-model").standard_normal(p)
    if gap == 0:
        return w_hat
    _, J = hard_threshold(w_hat, k_bar)
    w = w_hat.copy()
    w[J] += gap * np.sign(w_hat[J])
    # rounding in |w|+gap can cost an ulp of the guaranteed gap
    while thresholding_margin(w, k_bar) < gap:
        w[J] = np.nextafter(w[J], np.sign(w[J]) * np.inf)
    return w


def misspecify(w_bar, tail_mass, seed) -> np.ndarray:
    """Spread ``tail_mass`` (ℓ1) evenly over the coordinates outside supp(w_bar),
    with random signs."""
    if tail_mass < 0:
        raise ValueError("tail_mass must be >= 0")
    w = np.array(w_bar, dtype=np.float64)
    if tail_mass == 0:
        return w
    off = np.setdiff1d(np.arange(w.shape[0]), support_of(w))
    if off.size == 0:
        raise ValueError("w_bar has no zero coordinates to perturb")
    signs = make_rng(seed, "misspecify").choice([-1.0, 1.0], size=off.size)
    w[off] = signs * (tail_mass / off.size)
    return w


def write_dataset_csv(data: Dataset, path) -> None:
    """Header ``0,1,...,p-1,y``; values at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([str(j) for j in range(data.p)] + ["y"])
        for x, y in zip(data.X, data.y):
            writer.writerow([f"{v:.17g}" for v in x] + [f"{y:.17g}"])


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "y":
            raise ValueError(f"{path}: last header column must be 'y'")
        rows = [[float(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return Dataset(arr[:, :-1], arr[:, -1])
