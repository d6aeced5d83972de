"""Random-Fourier-feature posterior sample paths with closed-form derivatives."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import kernels
from .errors import NumericError
from .gp import GpHyperparams, GpModel, as_inputs, robust_cholesky

DEFAULT_RFF_DIM = 1000


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """phi(z) = amplitude * cos(frequencies @ z + phases)."""

    frequencies: np.ndarray  # (D, d)
    phases: np.ndarray  # (D,)
    amplitude: float

    @property
    def n_features(self) -> int:
        return self.phases.shape[0]

    def features(self, Z) -> np.ndarray:
        Z = as_inputs(Z)
        return self.amplitude * np.cos(Z @ self.frequencies.T + self.phases)


@dataclass(frozen=True, eq=False)
class PathSample:
    """One approximate posterior draw: ``prior_mean + phi(z) @ weights``.

    The bilevel solvers only rely on ``value``, ``value_and_grad``, ``hessian``
    and ``grid``, so any object with those methods can stand in for a path.
    """

    map: FeatureMap
    weights: np.ndarray
    prior_mean: float = 0.0

    def value(self, Z) -> np.ndarray:
        m = self.map
        return kernels.rff_eval(as_inputs(Z), m.frequencies, m.phases, self.weights, m.amplitude, self.prior_mean)

    def value_and_grad(self, Z):
        m = self.map
        return kernels.rff_eval_grad(as_inputs(Z), m.frequencies, m.phases, self.weights, m.amplitude,
                                     self.prior_mean)

    def hessian(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        m = self.map
        c = m.amplitude * self.weights * np.cos(m.frequencies @ z + m.phases)
        return -(m.frequencies.T * c) @ m.frequencies

    def grid(self, x_grid: np.ndarray, theta_grid: np.ndarray) -> np.ndarray:
        """Values on the product grid, shape (len(x_grid), len(theta_grid)).

        Uses cos(a + c) = cos a cos c - sin a sin c to avoid the full pool x D matrix.
        """
        m = self.map
        dx = x_grid.shape[1]
        a = x_grid @ m.frequencies[:, :dx].T + m.phases
        c = theta_grid @ m.frequencies[:, dx:].T
        w = m.amplitude * self.weights
        return self.prior_mean + (np.cos(a) * w) @ np.cos(c).T - (np.sin(a) * w) @ np.sin(c).T

    def __call__(self, Z) -> np.ndarray:
        return self.value(Z)


def draw_feature_map(hyper: GpHyperparams, D: int, rng: np.random.Generator, dim: int) -> FeatureMap:
    """Sample frequencies from the Gaussian kernel's spectral density and uniform phases."""
    if D < 1:
        raise ValueError("D must be >= 1")
    freq = rng.standard_normal((D, dim)) / hyper.lengthscale
    phases = rng.uniform(0.0, 2.0 * math.pi, D)
    return FeatureMap(freq, phases, math.sqrt(2.0 * hyper.output_scale / D))


def draw_path(model: GpModel, fmap: FeatureMap, rng: np.random.Generator) -> PathSample:
    """Sample weights from the Bayesian linear model posterior given the model's data.

    Prior ``w ~ N(0, I)``; likelihood ``y = Phi w + prior_mean + eps`` with the
    model's per-point noise. Uses the primal D x D system when D <= n, otherwise
    an exact pathwise (dual, n x n) update of a prior draw.
    """
    D = fmap.n_features
    w0 = rng.standard_normal(D)
    n = model.n
    if n == 0:
        return PathSample(fmap, w0, model.hyper.prior_mean)
    Phi = fmap.features(model.X)
    r = model.y - model.hyper.prior_mean
    noise = model.noise
    if D <= n:
        A = (Phi.T / noise) @ Phi + np.eye(D)
        L, _ = robust_cholesky(A)
        mean = cho_solve((L, True), Phi.T @ (r / noise))
        w = mean + solve_triangular(L.T, w0, lower=False)
    else:
        eps = rng.standard_normal(n) * np.sqrt(noise)
        S = Phi @ Phi.T + np.diag(noise)
        L, _ = robust_cholesky(S)
        w = w0 + Phi.T @ cho_solve((L, True), r - Phi @ w0 - eps)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite path weights")
    return PathSample(fmap, w, model.hyper.prior_mean)


def eval_path(path, point):
    """Path value at one QueryPoint (float) or at each row of an input matrix."""
    vals = path.value(as_inputs(point))
    return float(vals[0]) if _is_single(point) else vals


def grad_path(path, point) -> np.ndarray:
    """Gradient w.r.t. the joint input (x, theta); one row per input for a matrix."""
    _, grads = path.value_and_grad(as_inputs(point))
    return grads[0] if _is_single(point) else grads


def _split(point, d_x):
    if hasattr(point, "theta"):
        return point.z, point.x.size
    if d_x is None:
        raise ValueError("d_x is required for array inputs")
    return np.asarray(point, dtype=float).reshape(-1), d_x


def hess_path_theta(path, point, d_x: int | None = None) -> np.ndarray:
    """Second derivatives in theta, shape (d_theta, d_theta)."""
    z, dx = _split(point, d_x)
    return path.hessian(z)[dx:, dx:]


def cross_hess_path(path, point, d_x: int | None = None) -> np.ndarray:
    """Mixed second derivatives d^2 path / d theta d x^T, shape (d_theta, d_x)."""
    z, dx = _split(point, d_x)
    return path.hessian(z)[dx:, :dx]


def eval_path_grid(path, x_grid: np.ndarray, theta_grid: np.ndarray) -> np.ndarray:
    if hasattr(path, "grid"):
        return path.grid(x_grid, theta_grid)
    nx, nt = len(x_grid), len(theta_grid)
    Z = np.hstack([np.repeat(x_grid, nt, axis=0), np.tile(theta_grid, (nx, 1))])
    return path.value(Z).reshape(nx, nt)


def _is_single(point) -> bool:
    if hasattr(point, "theta"):
        return True
    return np.ndim(point) == 1
