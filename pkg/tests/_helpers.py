"""Shared test doubles: analytic paths and small random posterior paths."""
import numpy as np

from bljes.bilevel import inner_argmax_continuous
from bljes.gp import GpHyperparams
from bljes.paths import PathSample, draw_feature_map


class QuadraticPath:
    """v(z) = c + b.z + z.A.z / 2 with exact derivatives; stands in for a sample path."""

    def __init__(self, A, b, c=0.0):
        self.A = np.atleast_2d(np.asarray(A, dtype=float))
        self.b = np.asarray(b, dtype=float)
        self.c = float(c)

    def value(self, Z):
        Z = np.atleast_2d(Z)
        return self.c + Z @ self.b + 0.5 * np.einsum("ij,jk,ik->i", Z, self.A, Z)

    def value_and_grad(self, Z):
        Z = np.atleast_2d(Z)
        return self.value(Z), self.b + Z @ self.A.T

    def hessian(self, z):
        return self.A.copy()


class FunctionPath:
    """Path-like wrapper around a vectorized function of the joint input (values only)."""

    def __init__(self, fun):
        self.fun = fun

    def value(self, Z):
        return np.asarray(self.fun(np.atleast_2d(Z)), dtype=float)


def random_path(seed, dim=2, ell=0.3, D=200, scale=1.0):
    rng = np.random.default_rng(seed)
    fmap = draw_feature_map(GpHyperparams(0.0, ell, scale), D, rng, dim)
    return PathSample(fmap, rng.standard_normal(D), 0.0)


def interior_instances(n, d_x=1, d_theta=1, ell=0.3):
    """Random (path_f, path_g, x, theta*) with a strict interior lower-level maximum."""
    out, seed = [], 0
    rng = np.random.default_rng(1234)
    while len(out) < n:
        pf = random_path(1000 + seed, d_x + d_theta, ell)
        pg = random_path(5000 + seed, d_x + d_theta, ell)
        seed += 1
        x = rng.uniform(0.1, 0.9, d_x)
        theta, _ = inner_argmax_continuous(pg, x, d_theta)
        if np.any(theta < 0.02) or np.any(theta > 0.98):
            continue
        H = pg.hessian(np.concatenate([x, theta]))[d_x:, d_x:]
        if np.linalg.eigvalsh(H).max() > -1e-2:
            continue
        out.append((pf, pg, x, theta))
    return out


def refined_argmax(pg, x, theta0, d_theta):
    return inner_argmax_continuous(pg, x, d_theta, theta0=theta0)[0]
