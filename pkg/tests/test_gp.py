import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bljes.bilevel import OptimumSample
from bljes.errors import DegenerateConditioningError, HyperparameterFitWarning
from bljes.gp import (
    Dataset, GpHyperparams, GpModel, JointGaussian, ObservationRecord, QueryPoint, augment, condition,
    fit_hyperparameters, gaussian_kernel, joint_posterior, log_marginal_likelihood, posterior_at,
)

H = GpHyperparams(prior_mean=0.0, lengthscale=0.3, output_scale=1.0, noise_variance=1e-6)


def naive_posterior(Xtr, y, Xq, hyper, noise):
    """Dense block conditioning of the joint (train, query) Gaussian without any cached factors."""
    A = np.vstack([Xtr, Xq])
    K = gaussian_kernel(A, A, hyper.lengthscale, hyper.output_scale)
    n = len(Xtr)
    Ktt = K[:n, :n] + np.diag(noise)
    Kqt = K[n:, :n]
    mean = hyper.prior_mean + Kqt @ np.linalg.solve(Ktt, y - hyper.prior_mean)
    cov = K[n:, n:] - Kqt @ np.linalg.solve(Ktt, Kqt.T)
    return mean, cov


def random_model(rng, n=5, d=2, hyper=H):
    X = rng.random((n, d))
    y = np.sin(3 * X).sum(1) + 0.1 * rng.standard_normal(n)
    return GpModel.build(hyper, X, y)


def test_empty_model_returns_prior():
    m = GpModel.build(GpHyperparams(0.0, 0.2, 1.0), np.zeros((0, 2)), [], dim=2)
    assert posterior_at(m, QueryPoint([0.3], [0.9])) == (0.0, 1.0)


def test_near_noiseless_interpolation():
    X = np.array([[0.2, 0.4], [0.7, 0.1]])
    m = GpModel.build(H, X, [1.5, -0.3], noise=1e-12)
    mean, var = posterior_at(m, QueryPoint([0.2], [0.4]))
    assert abs(mean - 1.5) < 1e-5 and var <= 1e-6


def test_two_point_posterior_matches_dense_solve():
    hyper = GpHyperparams(0.4, 0.5, 2.0, 0.01)
    X = np.array([[0.1, 0.2], [0.6, 0.9]])
    y = np.array([1.0, -0.5])
    m = GpModel.build(hyper, X, y)
    q = np.array([[0.3, 0.5]])
    k = lambda a, b: 2.0 * math.exp(-0.5 * np.sum((a - b) ** 2) / 0.25)
    K = np.array([[k(X[0], X[0]) + 0.01, k(X[0], X[1])], [k(X[1], X[0]), k(X[1], X[1]) + 0.01]])
    kq = np.array([k(q[0], X[0]), k(q[0], X[1])])
    mean_ref = 0.4 + kq @ np.linalg.solve(K, y - 0.4)
    var_ref = 2.0 - kq @ np.linalg.solve(K, kq)
    mean, var = posterior_at(m, q)
    assert abs(mean - mean_ref) < 1e-10 and abs(var - var_ref) < 1e-10


def test_cholesky_reconstructs_kernel():
    rng = np.random.default_rng(0)
    m = random_model(rng, n=20)
    K = m.kernel(m.X, m.X) + np.diag(m.noise) + m.jitter * np.eye(m.n)
    err = np.linalg.norm(m.chol @ m.chol.T - K) / np.linalg.norm(K)
    assert err < 1e-8


def test_joint_posterior_single_point_equals_posterior_at():
    rng = np.random.default_rng(1)
    m = random_model(rng)
    p = QueryPoint([0.4], [0.6])
    jg = joint_posterior(m, [p])
    mean, var = posterior_at(m, p)
    assert jg.mean[0] == mean and jg.cov[0, 0] == pytest.approx(var, abs=1e-15)


def test_joint_posterior_identical_points_without_data():
    m = GpModel.build(GpHyperparams(0.0, 0.2, 1.7), np.zeros((0, 2)), [], dim=2)
    jg = joint_posterior(m, [QueryPoint([0.5], [0.5])] * 2)
    assert np.allclose(jg.cov, 1.7)


def test_joint_posterior_matches_block_conditioning():
    rng = np.random.default_rng(2)
    hyper = GpHyperparams(0.2, 0.35, 1.3, 1e-3)
    m = random_model(rng, n=5, hyper=hyper)
    Q = rng.random((3, 2))
    jg = joint_posterior(m, Q)
    mean, cov = naive_posterior(m.X, m.y, Q, hyper, m.noise)
    assert np.allclose(jg.mean, mean, atol=1e-8) and np.allclose(jg.cov, cov, atol=1e-8)
    assert np.allclose(jg.cov, jg.cov.T, atol=1e-10)
    assert np.linalg.eigvalsh(jg.cov).min() >= -1e-8


def test_condition_examples():
    out = condition(JointGaussian(np.zeros(2), np.eye(2)), 1, 5.0)
    assert out.mean[0] == 0.0 and out.cov[0, 0] == 1.0
    out = condition(JointGaussian(np.zeros(2), np.array([[1, 0.5], [0.5, 1]])), 1, 1.0)
    assert out.mean[0] == pytest.approx(0.5) and out.cov[0, 0] == pytest.approx(0.75)
    with pytest.raises(DegenerateConditioningError):
        condition(JointGaussian(np.zeros(2), np.array([[1.0, 0.0], [0.0, 0.0]])), 1, 0.0)


def _random_joint(rng, d):
    A = rng.standard_normal((d, d))
    return JointGaussian(rng.standard_normal(d), A @ A.T + 0.1 * np.eye(d))


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_conditioning_commutes(seed):
    rng = np.random.default_rng(seed)
    jg = _random_joint(rng, 4)
    v1, v2 = rng.standard_normal(2)
    a = condition(condition(jg, 1, v1, 0.1), 2, v2, 0.3)  # index 3 shifts to 2 after removal
    b = condition(condition(jg, 3, v2, 0.3), 1, v1, 0.1)
    assert np.allclose(a.mean, b.mean, atol=1e-10) and np.allclose(a.cov, b.cov, atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_variance_bounded_and_monotone(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, n=int(rng.integers(1, 8)))
    Q = rng.random((10, 2))
    _, var = m.predict(Q)
    assert np.all(var <= m.hyper.output_scale + 1e-10)
    m2 = m.with_observation(rng.random(2), 0.3, noise_variance=1e-4)
    _, var2 = m2.predict(Q)
    assert np.all(var2 <= var + 1e-8)


def test_fit_constant_targets():
    rng = np.random.default_rng(3)
    X = rng.random((12, 2))
    y = np.full(12, 2.5)
    init = GpHyperparams(0.0, 0.2, 1.0, 1e-4)
    h = fit_hyperparameters(X, y, init)
    assert abs(h.prior_mean - 2.5) < 1e-3
    assert h.output_scale < 1e-3
    assert log_marginal_likelihood(X, y, h) >= log_marginal_likelihood(X, y, init)


def _gp_draw(rng, X, ell, noise):
    K = gaussian_kernel(X, X, ell, 1.0) + noise * np.eye(len(X))
    return np.linalg.cholesky(K) @ rng.standard_normal(len(X))


def test_fit_recovers_lengthscale():
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        X = rng.random((60, 2))
        y = _gp_draw(rng, X, 0.25, 1e-4)
        h = fit_hyperparameters(X, y, GpHyperparams(0.0, 0.5, 1.0, 1e-3), rng=rng)
        hits += 0.125 <= h.lengthscale <= 0.5
    assert hits >= 8


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 8))
def test_fit_never_degrades_likelihood(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.random((n + 1, 2))
    y = rng.standard_normal(n + 1)
    init = GpHyperparams(float(rng.normal()), float(rng.uniform(0.05, 2)), float(rng.uniform(0.1, 3)), 1e-3)
    h = fit_hyperparameters(X, y, init, rng=rng)
    assert log_marginal_likelihood(X, y, h) >= log_marginal_likelihood(X, y, init.clipped()) - 1e-9
    assert 1e-3 <= h.lengthscale <= 1e3 and 1e-6 <= h.output_scale <= 1e6 and h.noise_variance >= 1e-6


def test_fit_at_local_optimum_never_degrades():
    X = np.array([[0.5, 0.5], [0.5, 0.5 + 1e-9]])
    y = np.array([0.0, 0.0])
    init = fit_hyperparameters(X, y, GpHyperparams(0.0, 0.3, 1.0, 1e-3))
    again = fit_hyperparameters(X, y, init)
    assert log_marginal_likelihood(X, y, again) >= log_marginal_likelihood(X, y, init)


def test_fit_falls_back_with_warning_on_nonfinite_targets():
    X = np.random.default_rng(0).random((4, 2))
    y = np.array([0.0, np.inf, 1.0, 2.0])
    init = GpHyperparams(0.0, 0.3, 1.0, 1e-3)
    with pytest.warns(HyperparameterFitWarning):
        assert fit_hyperparameters(X, y, init) == init


def test_fit_requires_two_records():
    with pytest.raises(ValueError):
        fit_hyperparameters(np.zeros((1, 2)), [1.0], H)


def _sample(z, f, g):
    return OptimumSample(np.array(z[:1]), np.array(z[1:]), f, g, None, None)


def test_augment_empty_dataset():
    d = augment(Dataset(), _sample([0.3, 0.7], 1.0, 2.0))
    X, y, mask = d.level_data("f", include_pseudo=True)
    assert len(y) == 1 and mask.all() and len(d) == 0


def test_augment_interpolates_optimum_and_keeps_far_points():
    rng = np.random.default_rng(4)
    recs = [ObservationRecord(QueryPoint(z[:1], z[1:]), float(np.sin(z.sum())), 0.0) for z in rng.random((6, 2))]
    data = Dataset(recs, n0=6)
    s = _sample([0.4, 0.45], 1.7, 0.3)
    plus = augment(data, s)
    hyper = GpHyperparams(0.0, 0.2, 1.0, 1e-4)
    m_plus = GpModel.from_dataset(plus, "f", hyper, include_pseudo=True)
    mean, var = posterior_at(m_plus, QueryPoint([0.4], [0.45]))
    assert abs(mean - 1.7) < 1e-4 and var <= 1e-6
    m = GpModel.from_dataset(data, "f", hyper)
    far = np.array([[25.0, 25.0], [30.0, -20.0]])
    a, b = joint_posterior(m, far), joint_posterior(m_plus, far)
    assert np.allclose(a.mean, b.mean, atol=1e-8) and np.allclose(a.cov, b.cov, atol=1e-8)
    # pseudo points never reach the fitting data
    X, y, _ = plus.level_data("f")
    assert len(y) == 6


def test_observation_needs_a_level():
    with pytest.raises(ValueError):
        ObservationRecord(QueryPoint([0.1], [0.2]))


def test_hyperparams_validate_floor():
    with pytest.raises(ValueError):
        GpHyperparams(0.0, 0.2, 1.0, 1e-8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        GpHyperparams(0.0, 0.2, 1.0, 1e-6)
