import math
import warnings

import numpy as np
import pytest

from ihtlab.linalg import ConvergenceError, hard_threshold, support_of
from ihtlab.losses import Dataset, LossModel, empirical_gradient, empirical_risk, restricted_gradient
from ihtlab.solver import (
    DivergenceError,
    IhtConfig,
    auto_step_size,
    iht_run,
    refit,
    regularized_restricted_erm,
    restricted_erm,
)
from ihtlab.synth import GenerativeSpec, ModelKind, generate, make_rng

SQ, LOG = LossModel.SQUARED, LossModel.LOGISTIC


def logistic_data(n, p, rng, scale=0.3):
    X = rng.standard_normal((n, p))
    w = scale * rng.standard_normal(p)
    y = np.where(rng.random(n) < 1 / (1 + np.exp(-2 * X @ w)), 1.0, -1.0)
    return Dataset(X, y)


def test_config_validation():
    with pytest.raises(ValueError):
        IhtConfig(k=0)
    with pytest.raises(ValueError):
        IhtConfig(k=1, max_iters=0)
    with pytest.raises(ValueError):
        IhtConfig(k=1, eta=-1.0)
    with pytest.raises(ValueError):
        IhtConfig(k=1, obj_tol=-1.0)


def test_orthonormal_design_converges_exactly():
    rng = np.random.default_rng(0)
    n, p, k = 64, 20, 4
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    X = math.sqrt(n) * Q  # X^T X / n = I
    w_bar = np.zeros(p)
    w_bar[rng.choice(p, k, replace=False)] = rng.standard_normal(k)
    trace = iht_run(Dataset(X, X @ w_bar), SQ, IhtConfig(k=k, eta=1.0, max_iters=50))
    assert trace.iterations <= 50
    assert np.allclose(trace.last, w_bar, atol=1e-12)
    assert trace.objectives[-1] < 1e-25


def test_one_step_from_zero():
    rng = np.random.default_rng(1)
    d = logistic_data(50, 12, rng)
    eta, k = 0.7, 3
    trace = iht_run(d, LOG, IhtConfig(k=k, eta=eta, max_iters=1))
    expected, supp = hard_threshold(eta * (d.y @ d.X) / d.n, k)
    assert np.allclose(trace.iterates[1], expected, rtol=0, atol=1e-15)
    assert np.array_equal(trace.supports[1], supp)
    assert np.array_equal(trace.iterates[0], np.zeros(12))


@pytest.mark.parametrize("model", [SQ, LOG])
def test_k_at_least_p_is_gradient_descent(model):
    rng = np.random.default_rng(2)
    p = 6
    d = logistic_data(40, p, rng) if model is LOG else Dataset(rng.standard_normal((40, p)),
                                                              rng.standard_normal(40))
    eta = 0.2
    trace = iht_run(d, model, IhtConfig(k=p + 2, eta=eta, max_iters=30, obj_tol=0.0))
    w = np.zeros(p)
    for t in range(1, trace.iterations + 1):
        w = w - eta * empirical_gradient(model, w, d)
        assert np.max(np.abs(trace.iterates[t] - w)) <= 1e-12
    assert all(m == math.inf for m in trace.margins)


def test_trace_invariants_and_monotone_descent():
    rng = np.random.default_rng(3)
    for model in (SQ, LOG):
        d = logistic_data(80, 30, rng) if model is LOG else Dataset(
            rng.standard_normal((80, 30)), rng.standard_normal(80))
        trace = iht_run(d, model, IhtConfig(k=5, max_iters=200))
        assert trace.iterations <= 200
        assert len(trace.objectives) == trace.iterations + 1
        assert all(np.count_nonzero(w) <= 5 for w in trace.iterates)
        assert all(math.isfinite(f) for f in trace.objectives)
        # with eta < 1/L the objective never increases
        assert all(b <= a + 1e-12 for a, b in zip(trace.objectives, trace.objectives[1:]))
        assert trace.min_margin == min(trace.margins) >= 0


def test_stops_on_stagnation():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((100, 10))
    w_bar = np.zeros(10)
    w_bar[:2] = 1.0
    trace = iht_run(Dataset(X, X @ w_bar), SQ, IhtConfig(k=2, max_iters=5000, obj_tol=1e-10))
    assert trace.iterations < 5000
    assert abs(trace.objectives[-1] - trace.objectives[-2]) < 1e-10


def test_divergence_names_iteration():
    rng = np.random.default_rng(5)
    X = 100 * rng.standard_normal((20, 5))
    d = Dataset(X, rng.standard_normal(20))
    with pytest.raises(DivergenceError, match="iteration"):
        iht_run(d, SQ, IhtConfig(k=2, eta=1e3, max_iters=1000, obj_tol=0.0))


def test_auto_step_size():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((50, 8))
    L = np.linalg.eigvalsh(X.T @ X / 50)[-1]
    assert auto_step_size(Dataset(X, np.zeros(50))) == pytest.approx(2 / (3 * L), rel=1e-8)


def test_determinism():
    rng = np.random.default_rng(7)
    d = logistic_data(60, 25, rng)
    a = iht_run(d, LOG, IhtConfig(k=4, refit=True))
    b = iht_run(d, LOG, IhtConfig(k=4, refit=True))
    assert all(np.array_equal(x, y) for x, y in zip(a.iterates, b.iterates))
    assert np.array_equal(a.final, b.final)


def test_restricted_erm_one_coordinate():
    n, c = 5, 3.0
    X = np.zeros((n, 2))
    X[0, 0] = c
    X[:, 1] = np.arange(n)
    y = np.zeros(n)
    y[0] = 1.0
    w = restricted_erm(Dataset(X, y), SQ, [0])
    assert w[0] == pytest.approx((X[:, 0] @ y) / (X[:, 0] @ X[:, 0]), rel=1e-15)
    assert w[0] == pytest.approx(1 / c, rel=1e-15)
    assert w[1] == 0


def test_restricted_erm_noiseless_support():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((40, 15))
    w_bar = np.zeros(15)
    w_bar[[2, 7, 11]] = [1.5, -2.0, 0.3]
    w = restricted_erm(Dataset(X, X @ w_bar), SQ, [2, 7, 11])
    assert np.allclose(w, w_bar, atol=1e-12)


def test_restricted_erm_logistic_matches_gd_oracle():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((20, 6))
    y = rng.choice([-1.0, 1.0], size=20)
    d = Dataset(X, y)
    J = [0, 2, 5]
    w = restricted_erm(d, LOG, J, tol=1e-12)
    assert np.max(np.abs(restricted_gradient(LOG, w, d, J))) <= 1e-12
    # independent oracle: plain gradient descent on the J coordinates
    XJ = X[:, J]
    step = 1.0 / np.linalg.eigvalsh(XJ.T @ XJ / 20)[-1]
    v = np.zeros(3)
    for _ in range(1_000_000):
        s = 1 / (1 + np.exp(2 * y * (XJ @ v)))
        g = XJ.T @ (-2 * y * s) / 20
        if np.max(np.abs(g)) < 1e-13:
            break
        v -= step * g
    assert np.max(np.abs(g)) < 1e-13
    assert np.allclose(w[J], v, atol=1e-6, rtol=0)


def test_restricted_erm_singular_gram():
    rng = np.random.default_rng(10)
    x = rng.standard_normal(10)
    X = np.column_stack([x, x, rng.standard_normal(10)])
    d = Dataset(X, rng.standard_normal(10))
    with pytest.warns(RuntimeWarning, match="ridge"):
        w = restricted_erm(d, SQ, [0, 1])
    assert np.all(np.isfinite(w))
    with pytest.raises(np.linalg.LinAlgError):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            restricted_erm(d, SQ, [0, 1], ridge_fallback=False)


def test_restricted_erm_separable_logistic():
    # no minimiser exists, but the gradient still falls below tol at finite w
    X = np.array([[1.0], [2.0], [-1.0], [-3.0]])
    d = Dataset(X, np.array([1.0, 1.0, -1.0, -1.0]))
    w = restricted_erm(d, LOG, [0], tol=1e-9)
    assert np.max(np.abs(restricted_gradient(LOG, w, d, [0]))) <= 1e-9
    assert w[0] > 5


def test_restricted_erm_newton_nonconvergence():
    rng = np.random.default_rng(15)
    d = logistic_data(30, 4, rng)
    with pytest.raises(ConvergenceError) as info:
        restricted_erm(d, LOG, [0, 1], tol=0.0)
    assert info.value.estimate is not None


def test_regularized_newton_reaches_tight_tolerance():
    # near the optimum the objective decrease drops below round-off in f
    spec = GenerativeSpec.sparse(ModelKind.LOGISTIC_GAUSSIAN, 20, 3, magnitude=1.0, seed=5,
                                 normalize=True)
    J = support_of(spec.w_bar)
    for rep in range(30):
        d = generate(spec, 100, make_rng(16, "newton", rep))
        w = regularized_restricted_erm(d, LOG, J, 0.1, tol=1e-10)
        g = restricted_gradient(LOG, w, d, J)[J] + 0.1 * w[J]
        assert np.max(np.abs(g)) <= 1e-10


def test_restricted_erm_errors():
    d = Dataset(np.ones((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        restricted_erm(d, SQ, [])
    with pytest.raises(IndexError):
        restricted_erm(d, SQ, [2])


def test_regularized_large_lambda():
    rng = np.random.default_rng(11)
    for model in (SQ, LOG):
        d = logistic_data(30, 5, rng)
        lam = 1e6
        w = regularized_restricted_erm(d, model, range(5), lam)
        assert np.linalg.norm(w) <= np.linalg.norm(empirical_gradient(model, np.zeros(5), d)) / lam


def test_regularized_small_lambda_matches_unregularized():
    rng = np.random.default_rng(12)
    d = logistic_data(200, 6, rng)
    for model in (SQ, LOG):
        a = regularized_restricted_erm(d, model, [0, 1, 3], 1e-12, tol=1e-12)
        b = restricted_erm(d, model, [0, 1, 3], tol=1e-12)
        assert np.allclose(a, b, atol=1e-6)


def test_regularized_identity_closed_form():
    rng = np.random.default_rng(13)
    n = 7
    X = np.eye(n)
    y = rng.standard_normal(n)
    lam = 0.3
    w = regularized_restricted_erm(Dataset(X, y), SQ, range(n), lam)
    oracle = np.linalg.solve(X.T @ X / n + lam * np.eye(n), X.T @ y / n)
    assert np.allclose(w, oracle, rtol=1e-14, atol=1e-15)
    with pytest.raises(ValueError):
        regularized_restricted_erm(Dataset(X, y), SQ, range(n), 0.0)


def test_refit_never_worse():
    rng = np.random.default_rng(14)
    for model in (SQ, LOG):
        d = logistic_data(100, 20, rng)
        trace = iht_run(d, model, IhtConfig(k=4, max_iters=20, refit=True))
        w = trace.last
        r = refit(w, d, model, tol=1e-9)
        assert set(np.flatnonzero(r)) <= set(np.flatnonzero(w))
        assert empirical_risk(model, r, d) <= empirical_risk(model, w, d) + 1e-9
        assert np.array_equal(trace.final, r)
    with pytest.raises(ValueError):
        refit(np.zeros(20), d, SQ)
