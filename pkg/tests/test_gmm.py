import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import emocil.gmm as gmm_mod
from emocil.config import FitConfig
from emocil.errors import ContractViolation, InsufficientDataError
from emocil.gaussian import DIAGONAL, FULL, Covariance, factorize
from emocil.gmm import (
    GmmModel,
    aic_score,
    fit_em,
    gmm_log_likelihood,
    mixture_log_likelihood,
    n_free_params,
    select_by_aic,
)
from oracles import linear_mixture_log_likelihood, random_spd

FAST = FitConfig(n_restarts=2)


def assert_monotone(model, slack=1e-9):
    for seg in model.trace_segments():
        assert np.all(np.diff(seg) >= -slack), np.diff(seg).min()


def test_single_component_is_closed_form_mle(rng):
    X = rng.normal(size=(200, 4)) @ random_spd(rng, 4)
    m = fit_em(X, 1, FitConfig())
    np.testing.assert_allclose(m.means[0], X.mean(axis=0), atol=1e-10)
    np.testing.assert_allclose(m.covariances[0].data, np.cov(X.T, bias=True), atol=1e-10)
    assert m.converged and m.weights[0] == 1.0


def test_two_separated_clusters_recovered(rng):
    S = 17
    X = np.vstack([rng.normal(size=(500, S)) + 5, rng.normal(size=(500, S)) - 5])
    m = fit_em(X, 2, FitConfig())
    order = np.argsort(m.means[:, 0])
    np.testing.assert_allclose(m.means[order], [[-5] * S, [5] * S], atol=0.2)
    np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=0.05)
    assert_monotone(m)


def test_identical_points_collapse_via_regularization():
    X = np.full((10, 17), 2.5)
    m = fit_em(X, 3, FitConfig())
    assert np.all(np.isfinite(m.log_likelihood(X)))
    np.testing.assert_allclose(m.means, 2.5)
    assert all(c.reg > 0 for c in m.covariances)


def test_too_few_samples():
    with pytest.raises(InsufficientDataError):
        fit_em(np.zeros((2, 3)), 3)


def test_non_finite_data():
    X = np.ones((5, 2))
    X[1, 1] = np.inf
    with pytest.raises(ContractViolation):
        fit_em(X, 1)


def _model(weights, means, covs, kind=FULL):
    return GmmModel(np.array(weights), np.array(means), [Covariance(kind, c) for c in covs], kind)


def test_single_component_likelihood_at_mean():
    m = _model([1.0], [[0.0, 0.0]], [np.eye(2)])
    assert gmm_log_likelihood(np.zeros(2), m) == pytest.approx(-math.log(2 * math.pi), abs=1e-12)


def test_identical_halves_equal_one_component(rng):
    cov = random_spd(rng, 3)
    one = _model([1.0], [[1.0, 2.0, 3.0]], [cov])
    two = _model([0.5, 0.5], [[1.0, 2.0, 3.0]] * 2, [cov, cov])
    X = rng.normal(size=(20, 3))
    np.testing.assert_allclose(two.log_likelihood(X), one.log_likelihood(X), atol=1e-12)


def test_mixture_matches_linear_space_oracle(rng):
    w = rng.dirichlet(np.ones(3))
    means = rng.normal(size=(3, 2))
    covs = [random_spd(rng, 2) for _ in range(3)]
    m = _model(w, means, covs)
    for _ in range(10):
        x = rng.normal(size=2) * 2
        assert gmm_log_likelihood(x, m) == pytest.approx(linear_mixture_log_likelihood(x, w, means, covs), abs=1e-10)


def test_likelihood_dimension_mismatch():
    m = _model([1.0], [[0.0, 0.0]], [np.eye(2)])
    with pytest.raises(ContractViolation):
        gmm_log_likelihood(np.zeros(3), m)


def test_weights_must_sum_to_one():
    with pytest.raises(ContractViolation):
        _model([0.6, 0.6], [[0.0], [1.0]], [np.eye(1)] * 2)


def test_responsibilities_sum_to_one(rng):
    X = rng.normal(size=(50, 3))
    m = fit_em(X, 3, FAST)
    ll, comp = mixture_log_likelihood(X, np.log(m.weights), m.means, m._factors, m.covariance_kind)
    np.testing.assert_allclose(np.exp(comp - ll[:, None]).sum(axis=1), 1.0, atol=1e-9)


def test_free_parameter_counts():
    assert n_free_params(1, 1, FULL) == 2
    assert n_free_params(3, 17, DIAGONAL) == 2 + 3 * 17 + 3 * 17
    assert n_free_params(10, 17, FULL) == 9 + 170 + 10 * 153


def test_aic_one_dimensional_instance(rng):
    X = rng.normal(size=(100, 1))
    m = fit_em(X, 1, FitConfig())
    L = float(np.sum([gmm_log_likelihood(x, m) for x in X]))
    assert aic_score(m, X) == pytest.approx(4 - 2 * L, rel=1e-12)


def test_aic_linear_in_parameter_count(rng, monkeypatch):
    X = rng.normal(size=(40, 2))
    m = fit_em(X, 2, FAST)
    base = aic_score(m, X)
    k = n_free_params(2, 2, FULL)
    monkeypatch.setattr(gmm_mod, "n_free_params", lambda C, S, kind=FULL: 2 * k)
    assert aic_score(m, X) - base == pytest.approx(2 * k, abs=1e-9)


def test_aic_empty_data():
    m = _model([1.0], [[0.0]], [np.eye(1)])
    with pytest.raises(ContractViolation):
        aic_score(m, np.zeros((0, 1)))


def test_select_single_cluster_majority():
    picks = []
    for seed in range(5):
        X = np.random.default_rng(seed).normal(size=(300, 17)) * 0.1
        m = select_by_aic(X, FitConfig(n_restarts=3))
        assert m.aic == pytest.approx(aic_score(m, X))
        picks.append(m.n_components)
    assert picks.count(1) >= 3, picks


def test_select_two_points_caps_sweep():
    _, sweep = select_by_aic(np.array([[0.0], [1.0]]), FitConfig(), return_sweep=True)
    assert 1 <= len(sweep) <= 2


def test_select_sweep_bounded_by_support(rng):
    # 40 points in 5-d support at most 40 // 6 = 6 full-covariance components.
    _, sweep = select_by_aic(rng.normal(size=(40, 5)), FAST, return_sweep=True)
    assert len(sweep) == 6
    _, sweep = select_by_aic(rng.normal(size=(40, 5)), FitConfig(n_restarts=1, covariance_kind=DIAGONAL), return_sweep=True)
    assert len(sweep) == 10


def test_three_separated_clusters_sweep_shape(rng):
    # Fewer than three components is far worse; three is (near-)optimal.
    centers = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    X = np.vstack([c + rng.normal(size=(150, 2)) for c in centers])
    m, sweep = select_by_aic(X, FitConfig(covariance_kind=DIAGONAL, max_components=6), return_sweep=True)
    sweep = np.array(sweep) - min(sweep)
    assert sweep[0] > 1000 and sweep[1] > 100
    assert sweep[2] < 10
    assert m.n_components >= 3


def test_deterministic_including_threads(rng):
    X = np.vstack([rng.normal(size=(60, 3)), rng.normal(size=(60, 3)) + 4])
    cfg = FitConfig(n_restarts=3, seed=7)
    ref = fit_em(X, 3, cfg)
    with ThreadPoolExecutor(4) as pool:
        runs = list(pool.map(lambda _: fit_em(X, 3, cfg), range(4)))
    for m in runs:
        assert m.means.tobytes() == ref.means.tobytes()
        assert m.weights.tobytes() == ref.weights.tobytes()
        assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(m.covariances, ref.covariances))


def test_one_dimensional_density_integrates_to_one(rng):
    X = np.concatenate([rng.normal(-2, 1, 100), rng.normal(3, 0.5, 100)])[:, None]
    m = fit_em(X, 2, FAST)
    sd = np.sqrt(max(c.data[0, 0] for c in m.covariances))
    grid = np.linspace(m.means.min() - 10 * sd, m.means.max() + 10 * sd, 20001)
    dens = np.exp(m.log_likelihood(grid[:, None]))
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)


@settings(max_examples=15)
@given(
    st.integers(1, 6),
    st.integers(1, 5),
    st.sampled_from([FULL, DIAGONAL]),
    st.integers(0, 2**31 - 1),
)
def test_em_trace_monotone_between_reinits(S, C, kind, seed):
    r = np.random.default_rng(seed)
    n = int(r.integers(C * (S + 1), 120))
    X = r.normal(size=(n, S)) + r.integers(0, 3, size=(n, 1)) * 4
    m = fit_em(X, C, FitConfig(covariance_kind=kind, n_restarts=2, seed=seed))
    assert_monotone(m)
    assert abs(m.weights.sum() - 1) < 1e-9
    for c in m.covariances:
        factorize(c, eps=0.0)
