import itertools
import math

import numpy as np
import pytest

from ihtlab.losses import LossModel, pointwise_loss
from ihtlab.risk import (
    RiskEstimate,
    excess_risk,
    gradient_concentration_check,
    optimal_sparse_risk,
    population_risk_linear,
    population_risk_mc,
)
from ihtlab.solver import IhtConfig, iht_run
from ihtlab.synth import GenerativeSpec, ModelKind, generate, make_rng

LIN, LOGI = ModelKind.LINEAR_GAUSSIAN, ModelKind.LOGISTIC_GAUSSIAN


def e1(p):
    w = np.zeros(p)
    w[0] = 1.0
    return w


def test_linear_closed_form_examples():
    spec = GenerativeSpec.sparse(LIN, 10, 3, sigma=0.7, seed=0)
    r = population_risk_linear(spec.w_bar, spec)
    assert r.value == pytest.approx(0.7 ** 2 / 2, rel=1e-15) and r.stderr == 0 and r.n_mc == 0
    spec1 = GenerativeSpec(LIN, 5, 1, e1(5), sigma=1.0)
    assert population_risk_linear(np.zeros(5), spec1).value == 1.0


def test_linear_closed_form_identity():
    rng = np.random.default_rng(1)
    spec = GenerativeSpec.sparse(LIN, 8, 2, sigma=1.3, seed=1)
    for _ in range(50):
        w = rng.standard_normal(8)
        d = w - spec.w_bar
        assert population_risk_linear(w, spec).value - 1.3 ** 2 / 2 == pytest.approx(
            0.5 * d @ d, rel=1e-14)


def test_closed_form_errors():
    with pytest.raises(ValueError):
        population_risk_linear(np.zeros(5), GenerativeSpec(LOGI, 5, 1, e1(5)))
    with pytest.raises(ValueError):
        population_risk_linear(np.zeros(5), GenerativeSpec(LIN, 5, 1, e1(5), normalize=True))


def test_closed_form_matches_mc():
    rng = np.random.default_rng(2)
    spec = GenerativeSpec.sparse(LIN, 12, 3, sigma=0.8, seed=2)
    for i in range(3):
        w = spec.w_bar + 0.5 * rng.standard_normal(12)
        mc = population_risk_mc(w, spec, n_mc=1_000_000, seed=i)
        exact = population_risk_linear(w, spec).value
        assert abs(mc.value - exact) <= 3 * mc.stderr
        assert mc.n_mc == 1_000_000


def test_reduced_mc_matches_full_draws():
    # the 2-D reduction must agree with brute-force p-dimensional sampling
    spec = GenerativeSpec.sparse(LOGI, 40, 4, magnitude=0.8, seed=3)
    w = spec.w_bar + 0.3 * np.random.default_rng(3).standard_normal(40)
    fast = population_risk_mc(w, spec, n_mc=200_000, seed=3)
    d = generate(spec, 200_000, make_rng(99, "brute"))
    brute = pointwise_loss(LossModel.LOGISTIC, w, d.X, d.y)
    se = math.hypot(fast.stderr, brute.std(ddof=1) / math.sqrt(brute.size))
    assert abs(fast.value - brute.mean()) <= 4 * se


def test_logistic_mc_at_zero():
    spec = GenerativeSpec.sparse(LOGI, 10, 2, seed=4)
    r = population_risk_mc(np.zeros(10), spec, n_mc=1000, seed=0)
    assert abs(r.value - math.log(2)) <= max(3 * r.stderr, 1e-15)


def test_mc_reproducible_and_stderr_scaling():
    spec = GenerativeSpec.sparse(LOGI, 10, 2, magnitude=1.0, seed=5)
    w = np.full(10, 0.1)
    assert population_risk_mc(w, spec, 5000, seed=1) == population_risk_mc(w, spec, 5000, seed=1)
    ratios = [population_risk_mc(w, spec, 20_000, seed=s).stderr
              / population_risk_mc(w, spec, 40_000, seed=s).stderr for s in range(10)]
    assert all(1.2 <= r <= 1.7 for r in ratios)
    with pytest.raises(ValueError):
        population_risk_mc(w, spec, 0)


def brute_force_best_k(w_bar, k, sigma):
    p = w_bar.size
    best = math.inf
    for J in itertools.combinations(range(p), k):
        A = np.eye(p)[:, J]  # least squares of w_bar on the J coordinates
        coef = np.linalg.lstsq(A, w_bar, rcond=None)[0]
        r = w_bar - A @ coef
        best = min(best, 0.5 * r @ r + 0.5 * sigma ** 2)
    return best


def test_optimal_sparse_risk_linear():
    rng = np.random.default_rng(6)
    for trial in range(5):
        p = int(rng.integers(4, 13))
        k_bar = int(rng.integers(2, p))
        w = np.zeros(p)
        w[rng.choice(p, k_bar, replace=False)] = rng.standard_normal(k_bar)
        spec = GenerativeSpec(LIN, p, k_bar, w, sigma=0.6)
        for k in range(1, p + 1):
            got = optimal_sparse_risk(spec, k).value
            if k >= k_bar:
                assert got == pytest.approx(0.18, rel=1e-14)
            assert got == pytest.approx(brute_force_best_k(w, k, 0.6), rel=1e-12)
        vals = [optimal_sparse_risk(spec, k).value for k in range(1, p + 1)]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_optimal_sparse_risk_logistic():
    spec = GenerativeSpec.sparse(LOGI, 10, 3, seed=7)
    r = optimal_sparse_risk(spec, 3, n_mc=10_000)
    assert r.value == population_risk_mc(spec.w_bar, spec, 10_000).value and r.stderr > 0
    with pytest.raises(NotImplementedError):
        optimal_sparse_risk(spec, 2)


def test_excess_risk_examples():
    spec = GenerativeSpec.sparse(LIN, 10, 3, sigma=1.0, seed=8)
    assert excess_risk(spec.w_bar, spec, 3).value == 0.0
    assert excess_risk(np.zeros(10), spec, 3).value == pytest.approx(0.5 * spec.w_bar @ spec.w_bar)
    lspec = GenerativeSpec.sparse(LOGI, 10, 3, seed=8)
    r = excess_risk(lspec.w_bar, lspec, 3, n_mc=10_000)
    assert abs(r.value) <= 3 * r.stderr + 1e-15


def test_excess_risk_nonnegative_on_iht_outputs():
    spec = GenerativeSpec.sparse(LOGI, 30, 3, magnitude=0.5, seed=9)
    for rep in range(100):
        d = generate(spec, 200, make_rng(9, "nonneg", rep))
        w = iht_run(d, LossModel.LOGISTIC, IhtConfig(k=3 + rep % 4, max_iters=100)).final
        r = excess_risk(w, spec, 3, n_mc=20_000, seed=rep)
        assert r.value >= -3 * r.stderr


def test_excess_risk_seed_invariance():
    spec = GenerativeSpec.sparse(LOGI, 20, 3, magnitude=0.5, seed=10)
    w = spec.w_bar + 0.2 * np.random.default_rng(10).standard_normal(20)
    a = excess_risk(w, spec, 3, n_mc=50_000, seed=1)
    b = excess_risk(w, spec, 3, n_mc=50_000, seed=2)
    assert abs(a.value - b.value) <= 6 * math.hypot(a.stderr, b.stderr)
    assert (a - b).stderr == pytest.approx(math.hypot(a.stderr, b.stderr))


def test_risk_estimate_subtraction():
    d = RiskEstimate(1.0, 0.3, 10) - RiskEstimate(0.5, 0.4, 20)
    assert d.value == 0.5 and d.stderr == pytest.approx(0.5) and d.n_mc == 20


def test_gradient_concentration():
    p, sigma = 50, 1.0
    spec = GenerativeSpec.sparse(LIN, p, 5, sigma=sigma, seed=11)
    q1 = gradient_concentration_check(spec, spec.w_bar, 500, 200, seed=1)
    q4 = gradient_concentration_check(spec, spec.w_bar, 2000, 200, seed=2)
    assert q1 <= 1.5 * sigma * math.sqrt(2 * math.log(p / 0.1) / 500)
    assert 1.6 <= q1 / q4 <= 2.6
    noiseless = GenerativeSpec.sparse(LIN, p, 5, sigma=0.0, seed=11)
    assert gradient_concentration_check(noiseless, noiseless.w_bar, 100, 10) == 0.0
