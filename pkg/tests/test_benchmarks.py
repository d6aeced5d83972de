import math

import numpy as np
import pytest

from bljes.benchmarks import (
    PROBLEM_NAMES, BenchmarkSpec, apply_transform, branin, compute_ground_truth, goldstein_price, gp_prior_problem,
    grid_values, make_problem, parse_problem, six_hump_camel,
)
from bljes.bilevel import GridSpec


def toy_spec(f, g, grid, cU=None, cL=None, N=0, M=0):
    return BenchmarkSpec("toy", grid.d_x, grid.d_theta, f, g, grid, N, M, cU, cL, transform="identity")


@pytest.mark.parametrize("name", PROBLEM_NAMES)
def test_pool_in_unit_cube_and_values_finite(name):
    spec = make_problem(name)
    Z = spec.grid.pool()
    assert Z.min() >= 0.0 and Z.max() <= 1.0
    F, G, C = grid_values(spec)
    assert np.all(np.isfinite(F)) and np.all(np.isfinite(G)) and np.all(np.isfinite(C))


def test_problem_dimensions():
    bg = make_problem("bg")
    assert (bg.d_x, bg.d_theta, bg.grid.size) == (1, 1, 100**2)
    sb = make_problem("sb")
    assert (sb.d_x, sb.d_theta, sb.grid.size) == (1, 1, 100**2)
    assert make_problem("gp-prior").grid.size == 100**2
    expected = {"smd01": (0, 0), "smd02": (0, 0), "smd03": (0, 0), "smd09": (1, 1), "smd10": (2, 1),
                "smd11": (1, 1), "smd12": (3, 2)}
    for name, (N, M) in expected.items():
        spec = make_problem(name)
        assert (spec.d_x, spec.d_theta, spec.grid.size) == (2, 2, 10**4)
        assert (spec.N, spec.M) == (N, M)
        cU, cL = spec.constraints(spec.grid.pool()[:3])
        assert cU.shape == (3, N) and cL.shape == (3, M)


def test_unknown_problem_and_params():
    with pytest.raises(ValueError):
        make_problem("nope")
    with pytest.raises(ValueError):
        make_problem("bg:transform=picheny2")
    with pytest.raises(ValueError):
        parse_problem("gp-prior:lU")
    assert parse_problem("GP-prior: lU=0.1, seed=3") == ("gp-prior", {"lU": "0.1", "seed": "3"})
    assert make_problem("bg:grid=7").grid.size == 49


def test_transform_examples():
    assert apply_transform(0.0) == 0.0
    assert apply_transform(math.e - 1) == pytest.approx(1.0, abs=1e-15)
    assert apply_transform(-(math.e - 1)) == pytest.approx(-1.0, abs=1e-15)
    assert apply_transform(1000.0) == pytest.approx(6.9088, abs=1e-4)
    assert apply_transform(1000.0) == math.log(1001.0)
    assert apply_transform(3.5, "identity") == 3.5
    with pytest.raises(ValueError):
        apply_transform(1.0, "bogus")


def test_classic_functions_at_known_minima():
    assert branin(math.pi, 2.275) == pytest.approx(0.397887, abs=1e-6)
    assert goldstein_price(0.0, -1.0) == pytest.approx(3.0)
    assert six_hump_camel(0.0898, -0.7126) == pytest.approx(-1.0316, abs=1e-4)


def test_gp_prior_is_deterministic_per_seed():
    a, b = gp_prior_problem(0.25, 0.1, seed=4), gp_prior_problem(0.25, 0.1, seed=4)
    Z = np.random.default_rng(0).random((50, 2))
    assert np.array_equal(a.eval_f(Z), b.eval_f(Z)) and np.array_equal(a.eval_g(Z), b.eval_g(Z))
    c = gp_prior_problem(0.25, 0.1, seed=5)
    assert not np.array_equal(a.eval_f(Z), c.eval_f(Z))
    assert np.array_equal(make_problem("gp-prior:lU=0.25,lL=0.1,seed=4").eval_f(Z), a.eval_f(Z))


def test_gp_prior_has_unit_variance():
    Z = GridSpec.uniform(1, 1, 100).pool()
    second_moments = [np.mean(gp_prior_problem(0.1, 0.1, seed=s).eval_f(Z) ** 2) for s in range(20)]
    assert abs(np.mean(second_moments) - 1.0) < 0.15


def _lag_correlation(values: np.ndarray, lag: int) -> float:
    """Zero-mean autocorrelation at one grid lag, pooled over both axes."""
    a = np.concatenate([values[:-lag].reshape(-1), values[:, :-lag].reshape(-1)])
    b = np.concatenate([values[lag:].reshape(-1), values[:, lag:].reshape(-1)])
    return float(np.mean(a * b) / np.sqrt(np.mean(a * a) * np.mean(b * b)))


def test_longer_lengthscale_is_smoother():
    grid = GridSpec.uniform(1, 1, 101)
    Z = grid.pool()
    wins = 0
    for s in range(10):
        smooth = gp_prior_problem(0.5, 0.5, seed=s).eval_f(Z).reshape(101, 101)
        rough = gp_prior_problem(0.1, 0.1, seed=100 + s).eval_f(Z).reshape(101, 101)
        wins += _lag_correlation(smooth, 50) > _lag_correlation(rough, 50)
    assert wins >= 9


def test_ground_truth_separable_maximum():
    grid = GridSpec.uniform(1, 1, 11)

    def bowl(Z):
        return -np.sum((Z - 0.5) ** 2, axis=1)

    gt = compute_ground_truth(toy_spec(bowl, bowl, grid))
    assert gt.f_star == 0.0
    assert np.allclose(grid.theta_grid[gt.theta_star_table, 0], 0.5)


def test_ground_truth_constant_lower_level_breaks_ties_to_first_theta():
    grid = GridSpec.uniform(1, 1, 6)
    gt = compute_ground_truth(toy_spec(lambda Z: Z[:, 0] * Z[:, 1], lambda Z: np.zeros(len(Z)), grid))
    assert np.array_equal(gt.theta_star_table, np.zeros(6, dtype=int))
    assert gt.f_star == 0.0


def test_bg_ground_truth_matches_double_loop():
    spec = make_problem("bg")
    grid = spec.grid
    best, best_i = -math.inf, None
    for i, x in enumerate(grid.x_grid):
        row = np.array([[x[0], t[0]] for t in grid.theta_grid])
        g = spec.eval_g(row)
        j_best = 0
        for j in range(1, len(g)):
            if g[j] > g[j_best]:
                j_best = j
        f = spec.eval_f(row[j_best:j_best + 1])[0]
        if f > best:
            best, best_i = f, i
    gt = compute_ground_truth(spec)
    assert gt.f_star == best and gt.x_star_index == best_i


def test_ground_truth_is_order_invariant():
    spec = make_problem("sb:grid=30")
    gt = compute_ground_truth(spec)
    rev = GridSpec(None, spec.grid.x_grid[::-1], spec.grid.theta_grid[::-1])
    gt_rev = compute_ground_truth(spec, rev)
    assert gt.f_star == gt_rev.f_star and gt.min_f == gt_rev.min_f


def test_constrained_ground_truth_respects_feasibility():
    grid = GridSpec.uniform(1, 1, 11)
    spec = toy_spec(lambda Z: Z[:, 0] + Z[:, 1], lambda Z: Z[:, 1], grid,
                    cU=lambda Z: (0.55 - Z[:, 0])[:, None], cL=lambda Z: (0.75 - Z[:, 1])[:, None], N=1, M=1)
    gt = compute_ground_truth(spec)
    assert grid.theta_grid[gt.theta_star_table[0], 0] == pytest.approx(0.7)
    assert grid.x_grid[gt.x_star_index, 0] == pytest.approx(0.5)
    assert gt.f_star == pytest.approx(1.2)
    assert gt.max_constraint_violation == pytest.approx([0.45, 0.25])
