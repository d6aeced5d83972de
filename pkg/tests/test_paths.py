import numpy as np
import pytest

from bljes.gp import GpHyperparams, GpModel, QueryPoint, gaussian_kernel, joint_posterior, paired_kernel
from bljes.paths import (
    FeatureMap, PathSample, cross_hess_path, draw_feature_map, draw_path, eval_path, eval_path_grid, grad_path,
    hess_path_theta,
)


def _path(seed=0, D=300, ell=0.3, d=3):
    rng = np.random.default_rng(seed)
    fmap = draw_feature_map(GpHyperparams(0.2, ell, 1.5), D, rng, d)
    return PathSample(fmap, rng.standard_normal(D), 0.2)


def test_feature_inner_product_at_same_point():
    rng = np.random.default_rng(0)
    z = np.array([[0.3, 0.8]])
    vals = []
    for _ in range(50):
        m = draw_feature_map(GpHyperparams(0.0, 0.2, 1.3), 2000, rng, 2)
        phi = m.features(z)[0]
        vals.append(phi @ phi)
    assert abs(np.mean(vals) - 1.3) < 0.02


def test_long_lengthscale_gives_near_constant_kernel():
    rng = np.random.default_rng(1)
    m = draw_feature_map(GpHyperparams(0.0, 1e3, 1.0), 2000, rng, 2)
    A, B = rng.random((20, 2)), rng.random((20, 2))
    est = np.sum(m.features(A) * m.features(B), axis=1)
    # per-pair estimator s.d. is sqrt(1/(2D)) ~ 0.016 here; average over pairs
    assert abs(est.mean() - 1.0) < 0.02


def test_feature_map_deterministic():
    h = GpHyperparams(0.0, 0.3, 1.0)
    a = draw_feature_map(h, 50, np.random.default_rng(5), 2)
    b = draw_feature_map(h, 50, np.random.default_rng(5), 2)
    assert np.array_equal(a.frequencies, b.frequencies) and np.array_equal(a.phases, b.phases)
    assert np.all((a.phases >= 0) & (a.phases < 2 * np.pi)) and a.amplitude == pytest.approx(np.sqrt(2 / 50))


def test_feature_map_rejects_empty():
    with pytest.raises(ValueError):
        draw_feature_map(GpHyperparams(), 0, np.random.default_rng(0), 2)


def test_prior_path_moments():
    hyper = GpHyperparams(0.7, 0.3, 2.0)
    model = GpModel.build(hyper, np.zeros((0, 2)), [], dim=2)
    rng = np.random.default_rng(2)
    z = np.array([[0.4, 0.1]])
    vals = np.array([draw_path(model, draw_feature_map(hyper, 200, rng, 2), rng).value(z)[0] for _ in range(2000)])
    assert abs(vals.mean() - 0.7) < 0.1 * np.sqrt(2.0)
    assert abs(vals.var() / 2.0 - 1) < 0.1


def test_near_noiseless_record_is_interpolated():
    hyper = GpHyperparams(0.0, 0.3, 1.0)
    X = np.array([[0.25, 0.6]])
    model = GpModel.build(hyper, X, [0.9], noise=1e-10)
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = draw_path(model, draw_feature_map(hyper, 2000, rng, 2), rng)
        assert abs(p.value(X)[0] - 0.9) < 0.05


def test_draw_path_deterministic_in_primal_form():
    hyper = GpHyperparams(0.1, 0.3, 1.0, 1e-3)
    rng = np.random.default_rng(4)
    X = rng.random((30, 2))
    model = GpModel.build(hyper, X, np.sin(4 * X[:, 0]))
    fmap = draw_feature_map(hyper, 20, rng, 2)  # D <= n: primal system
    a = draw_path(model, fmap, np.random.default_rng(9))
    b = draw_path(model, fmap, np.random.default_rng(9))
    assert np.array_equal(a.weights, b.weights)


def test_posterior_path_covariance_matches_gp():
    hyper = GpHyperparams(0.0, 0.3, 1.0, 1e-2)
    rng = np.random.default_rng(5)
    X = rng.random((4, 2))
    model = GpModel.build(hyper, X, rng.standard_normal(4))
    Q = np.array([[0.2, 0.2], [0.5, 0.7], [0.9, 0.1]])
    n = 5000
    draws = np.array([draw_path(model, draw_feature_map(hyper, 2000, rng, 2), rng).value(Q) for _ in range(n)])
    exact = joint_posterior(model, Q)
    emp = np.cov(draws.T)
    sd = np.sqrt(np.diag(exact.cov))
    assert np.all(np.abs(draws.mean(0) - exact.mean) <= 0.1 * sd)
    # sampling s.e. of each covariance entry (Wishart), so near-zero entries are judged statistically
    se = np.sqrt((np.outer(sd**2, sd**2) + exact.cov**2) / n)
    assert np.all(np.abs(emp - exact.cov) <= 0.1 * np.abs(exact.cov) + 3 * se)


def test_zero_frequency_path_has_zero_gradient():
    fmap = FeatureMap(np.zeros((10, 3)), np.linspace(0, 1, 10), 0.5)
    p = PathSample(fmap, np.ones(10))
    assert np.array_equal(grad_path(p, QueryPoint([0.1], [0.2, 0.3])), np.zeros(3))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_and_hessian_match_finite_differences(seed):
    p = _path(seed)
    rng = np.random.default_rng(100 + seed)
    z = rng.random(3)
    g = grad_path(p, z)
    h = 1e-5
    fd = np.array([(p.value(z + h * e)[0] - p.value(z - h * e)[0]) / (2 * h) for e in np.eye(3)])
    assert np.allclose(g, fd, atol=1e-5)
    H = p.hessian(z)
    fdH = np.array([(grad_path(p, z + 1e-4 * e) - grad_path(p, z - 1e-4 * e)) / 2e-4 for e in np.eye(3)])
    assert np.allclose(H, fdH, atol=1e-3)


def test_hessian_blocks():
    p = _path(7)
    pt = QueryPoint([0.3], [0.4, 0.9])
    Ht = hess_path_theta(p, pt)
    assert Ht.shape == (2, 2) and np.max(np.abs(Ht - Ht.T)) <= 1e-12
    assert cross_hess_path(p, pt).shape == (2, 1)
    assert np.allclose(cross_hess_path(p, pt), p.hessian(pt.z)[1:, :1])


def test_grid_evaluation_matches_direct():
    p = _path(8, d=3)
    xg = np.random.default_rng(0).random((7, 1))
    tg = np.random.default_rng(1).random((5, 2))
    Z = np.hstack([np.repeat(xg, 5, axis=0), np.tile(tg, (7, 1))])
    assert np.allclose(p.grid(xg, tg).reshape(-1), p.value(Z), atol=1e-10)
    assert eval_path(p, Z[0]) == pytest.approx(p.value(Z[:1])[0])
    assert np.allclose(eval_path_grid(p, xg, tg), p.grid(xg, tg))


def test_rff_kernel_error_small_for_moderate_lengthscale():
    # the tight bound of the acceptance suite is exercised there; this is a coarse sanity check
    rng = np.random.default_rng(11)
    m = draw_feature_map(GpHyperparams(0.0, 0.5, 1.0), 2000, rng, 2)
    A, B = rng.random((100, 2)), rng.random((100, 2))
    est = np.sum(m.features(A) * m.features(B), axis=1)
    assert np.max(np.abs(est - paired_kernel(A, B, 0.5, 1.0))) < 0.1
    assert np.allclose(gaussian_kernel(A[:1], B[:1], 0.5, 1.0)[0, 0], paired_kernel(A[:1], B[:1], 0.5, 1.0)[0])
