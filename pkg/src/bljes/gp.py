"""Exact Gaussian-process regression over joint inputs (x, theta)."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import DegenerateConditioningError, HyperparameterFitWarning, NumericError

NOISE_FLOOR = 1e-6
LENGTHSCALE_BOUNDS = (1e-3, 1e3)
OUTPUT_SCALE_BOUNDS = (1e-6, 1e6)
NOISE_BOUNDS = (NOISE_FLOOR, 1e6)
JITTER = 1e-8
MAX_JITTER = 1e-4
# observation noise assigned to a sampled optimum added to the data
AUG_JITTER = 1e-8


@dataclass(frozen=True)
class QueryPoint:
    x: np.ndarray
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.x, self.theta])

    @classmethod
    def from_z(cls, z, d_x: int) -> "QueryPoint":
        z = np.asarray(z, dtype=float)
        return cls(z[:d_x], z[d_x:])

    def __eq__(self, other):
        if not isinstance(other, QueryPoint):
            return NotImplemented
        return np.array_equal(self.x, other.x) and np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash((self.x.tobytes(), self.theta.tobytes()))


def as_inputs(points) -> np.ndarray:
    """Stack QueryPoints (or pass through an array) into an (m, d) input matrix."""
    if isinstance(points, QueryPoint):
        return points.z[None, :]
    if isinstance(points, np.ndarray):
        return np.atleast_2d(points.astype(float, copy=False))
    points = list(points)
    if points and isinstance(points[0], QueryPoint):
        return np.stack([p.z for p in points])
    return np.atleast_2d(np.asarray(points, dtype=float))


@dataclass(frozen=True)
class ObservationRecord:
    point: QueryPoint
    y_f: Optional[float] = None
    y_g: Optional[float] = None
    y_cU: Optional[np.ndarray] = None
    y_cL: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.y_f is None and self.y_g is None:
            raise ValueError("an observation needs at least one of y_f, y_g")

    def value(self, level: str) -> Optional[float]:
        if level == "f":
            return self.y_f
        if level == "g":
            return self.y_g
        kind, idx = level[:2], int(level[2:])
        vec = self.y_cU if kind == "cU" else self.y_cL
        return None if vec is None else float(vec[idx])


@dataclass(frozen=True)
class Dataset:
    """Append-only observations plus acquisition-internal pseudo observations.

    ``pseudo`` holds sampled optima ``(z, f_star, g_star)`` added by :func:`augment`;
    they are only ever used when building models for the f and g levels with
    ``include_pseudo=True`` and never reach hyperparameter fitting.
    """

    records: tuple = ()
    n0: int = 0
    pseudo: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.n0 > len(self.records):
            raise ValueError("n0 exceeds the number of records")

    def __len__(self):
        return len(self.records)

    def append(self, record: ObservationRecord) -> "Dataset":
        return replace(self, records=self.records + (record,))

    def level_data(self, level: str, include_pseudo: bool = False):
        """Inputs, targets and a pseudo-observation mask for one modeled function."""
        zs, ys = [], []
        for rec in self.records:
            v = rec.value(level)
            if v is not None:
                zs.append(rec.point.z)
                ys.append(float(v))
        n_real = len(zs)
        if include_pseudo and level in ("f", "g"):
            for z, f_star, g_star in self.pseudo:
                zs.append(np.asarray(z, dtype=float))
                ys.append(float(f_star if level == "f" else g_star))
        mask = np.zeros(len(zs), dtype=bool)
        mask[n_real:] = True
        dim = self.records[0].point.z.size if self.records else (len(self.pseudo[0][0]) if self.pseudo else 0)
        X = np.array(zs, dtype=float).reshape(len(zs), dim)
        return X, np.array(ys, dtype=float), mask


@dataclass(frozen=True)
class GpHyperparams:
    prior_mean: float = 0.0
    lengthscale: float = 0.2
    output_scale: float = 1.0
    noise_variance: float = NOISE_FLOOR

    def __post_init__(self):
        if not (self.lengthscale > 0 and self.output_scale > 0):
            raise ValueError("lengthscale and output_scale must be positive")
        if self.noise_variance < NOISE_FLOOR * (1 - 1e-12):
            raise ValueError(f"noise_variance below the floor {NOISE_FLOOR}")

    def clipped(self) -> "GpHyperparams":
        return GpHyperparams(
            self.prior_mean,
            float(np.clip(self.lengthscale, *LENGTHSCALE_BOUNDS)),
            float(np.clip(self.output_scale, *OUTPUT_SCALE_BOUNDS)),
            float(np.clip(self.noise_variance, *NOISE_BOUNDS)),
        )


def gaussian_kernel(A, B, lengthscale: float, output_scale: float) -> np.ndarray:
    """Isotropic Gaussian kernel between the rows of A and B."""
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return output_scale * np.exp(-0.5 * sq / lengthscale**2)


def paired_kernel(A, B, lengthscale: float, output_scale: float) -> np.ndarray:
    """Kernel between matching rows ``A[i]`` and ``B[i]``."""
    diff = np.atleast_2d(A) - np.atleast_2d(B)
    return output_scale * np.exp(-0.5 * np.einsum("ij,ij->i", diff, diff) / lengthscale**2)


def robust_cholesky(K: np.ndarray, jitter: float = JITTER):
    """Lower Cholesky factor of ``K``, retried with diagonal jitter on failure.

    The first retry adds ``jitter`` (1e-8), growing x10 up to 1e-4. Returns the
    factor and the jitter actually used (0.0 if none was needed).
    """
    if not np.all(np.isfinite(K)):
        raise NumericError("non-finite kernel matrix")
    try:
        return cholesky(K, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(K.shape[0])
    while jitter <= MAX_JITTER * (1 + 1e-9):
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError("Cholesky factorization failed even with maximal jitter")


@dataclass(frozen=True)
class JointGaussian:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True, eq=False)
class GpModel:
    """GP posterior over a fixed training set; immutable, with cached factorization."""

    hyper: GpHyperparams
    X: np.ndarray
    y: np.ndarray
    noise: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = JITTER
    dim: int = field(default=0)

    @classmethod
    def build(cls, hyper: GpHyperparams, X, y, noise=None, dim: Optional[int] = None) -> "GpModel":
        y = np.asarray(y, dtype=float).reshape(-1)
        n = len(y)
        X = np.asarray(X, dtype=float)
        if n == 0:
            d = dim if dim is not None else (X.shape[-1] if X.ndim == 2 else 0)
            return cls(hyper, np.zeros((0, d)), y, np.zeros(0), np.zeros((0, 0)), np.zeros(0), JITTER, d)
        X = X.reshape(n, -1)
        if noise is None:
            noise = np.full(n, hyper.noise_variance)
        noise = np.broadcast_to(np.asarray(noise, dtype=float), (n,)).copy()
        K = gaussian_kernel(X, X, hyper.lengthscale, hyper.output_scale) + np.diag(noise)
        L, jit = robust_cholesky(K)
        alpha = cho_solve((L, True), y - hyper.prior_mean)
        return cls(hyper, X, y, noise, L, alpha, jit, X.shape[1])

    @classmethod
    def from_dataset(cls, dataset: Dataset, level: str, hyper: GpHyperparams,
                     include_pseudo: bool = False, dim: Optional[int] = None) -> "GpModel":
        X, y, pseudo = dataset.level_data(level, include_pseudo)
        noise = np.where(pseudo, AUG_JITTER, hyper.noise_variance)
        return cls.build(hyper, X, y, noise, dim=dim)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    def kernel(self, A, B) -> np.ndarray:
        return gaussian_kernel(A, B, self.hyper.lengthscale, self.hyper.output_scale)

    def project(self, Z) -> np.ndarray:
        """Whitened cross-covariance ``L^{-1} K(X, Z)`` with shape (n, m)."""
        Z = as_inputs(Z)
        if self.n == 0:
            return np.zeros((0, Z.shape[0]))
        return solve_triangular(self.chol, self.kernel(self.X, Z), lower=True, check_finite=False)

    def predict(self, Z):
        """Posterior mean and variance at each row of Z."""
        Z = as_inputs(Z)
        if self.n == 0:
            m = Z.shape[0]
            return np.full(m, self.hyper.prior_mean), np.full(m, self.hyper.output_scale)
        Kxz = self.kernel(self.X, Z)
        mean = self.hyper.prior_mean + Kxz.T @ self.alpha
        V = solve_triangular(self.chol, Kxz, lower=True, check_finite=False)
        var = self.hyper.output_scale - np.einsum("ij,ij->j", V, V)
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise NumericError("non-finite posterior moments")
        return mean, np.maximum(var, 0.0)

    def with_observation(self, z, value: float, noise_variance: float = AUG_JITTER) -> "GpModel":
        z = np.asarray(z, dtype=float).reshape(1, -1)
        X = np.vstack([self.X, z]) if self.n else z
        return GpModel.build(self.hyper, X, np.append(self.y, value), np.append(self.noise, noise_variance))


def posterior_at(model: GpModel, point) -> tuple[float, float]:
    """Posterior mean and variance of the modeled function at one point."""
    mean, var = model.predict(as_inputs(point))
    return float(mean[0]), float(var[0])


def joint_posterior(model: GpModel, points) -> JointGaussian:
    """Joint posterior of the latent function over a finite set of points."""
    Z = as_inputs(points)
    if Z.shape[0] == 0:
        raise ValueError("joint_posterior needs at least one point")
    mean, _ = model.predict(Z)
    V = model.project(Z)
    cov = model.kernel(Z, Z) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    if not np.all(np.isfinite(cov)):
        raise NumericError("non-finite joint covariance")
    return JointGaussian(mean, cov)


def condition(joint: JointGaussian, observed_index: int, value: float,
              obs_noise_variance: float = 0.0) -> JointGaussian:
    """Condition a joint Gaussian on a (noisy) observation of one coordinate.

    The observed coordinate is removed from the result.
    """
    d = joint.dim
    if not 0 <= observed_index < d:
        raise IndexError("observed_index out of range")
    total = joint.cov[observed_index, observed_index] + obs_noise_variance
    if not total > 0:
        raise DegenerateConditioningError("zero variance at the observed coordinate")
    keep = np.arange(d) != observed_index
    c = joint.cov[keep, observed_index]
    mean = joint.mean[keep] + c * (value - joint.mean[observed_index]) / total
    cov = joint.cov[np.ix_(keep, keep)] - np.outer(c, c) / total
    return JointGaussian(mean, cov)


def augment(dataset: Dataset, sample) -> Dataset:
    """Add a sampled optimum (x*, theta*, f*, g*) as a noiseless pseudo observation."""
    z = np.concatenate([np.atleast_1d(sample.x_star), np.atleast_1d(sample.theta_star)]).astype(float)
    if not (np.all(np.isfinite(z)) and math.isfinite(sample.f_star) and math.isfinite(sample.g_star)):
        raise ValueError("sampled optimum must be finite")
    return replace(dataset, pseudo=dataset.pseudo + ((z, float(sample.f_star), float(sample.g_star)),))


# ---------------------------------------------------------------------------
# marginal likelihood

def _factor(X, sq, y, log_ell, log_sf2, log_sn2):
    ell2 = math.exp(2 * log_ell)
    sf2 = math.exp(log_sf2)
    sn2 = math.exp(log_sn2)
    Kf = sf2 * np.exp(-0.5 * sq / ell2)
    K = Kf + (sn2 + JITTER) * np.eye(len(y))
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return None
    return L, Kf, sn2, ell2


def _profiled_nlml(params, X, sq, y):
    """Negative log marginal likelihood with the prior mean profiled out, and its gradient."""
    out = _factor(X, sq, y, *params)
    if out is None:
        return np.inf, np.zeros(3), None
    L, Kf, sn2, ell2 = out
    n = len(y)
    ones = np.ones(n)
    Ki1 = cho_solve((L, True), ones)
    Kiy = cho_solve((L, True), y)
    mean = float(ones @ Kiy / (ones @ Ki1))
    alpha = Kiy - mean * Ki1
    r = y - mean
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    nlml = 0.5 * r @ alpha + 0.5 * logdet + 0.5 * n * math.log(2 * math.pi)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    # d/dtheta of -lml = -0.5 tr(W dK); mean drops out by stationarity
    g_ell = -0.5 * np.sum(W * (Kf * sq / ell2))
    g_sf = -0.5 * np.sum(W * Kf)
    g_sn = -0.5 * sn2 * np.trace(W)
    if not np.isfinite(nlml):
        return np.inf, np.zeros(3), None
    return nlml, np.array([g_ell, g_sf, g_sn]), mean


def log_marginal_likelihood(points, targets, hyper: GpHyperparams) -> float:
    """Log marginal likelihood of the targets under the given hyperparameters."""
    X = as_inputs(points)
    y = np.asarray(targets, dtype=float)
    n = len(y)
    K = gaussian_kernel(X, X, hyper.lengthscale, hyper.output_scale) + (hyper.noise_variance + JITTER) * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return -np.inf
    r = y - hyper.prior_mean
    a = cho_solve((L, True), r)
    return float(-0.5 * r @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi))


def fit_hyperparameters(points, targets, init: GpHyperparams, n_restarts: int = 5,
                        rng: Optional[np.random.Generator] = None) -> GpHyperparams:
    """Maximize the log marginal likelihood over (mean, lengthscale, output scale, noise).

    Multi-start L-BFGS-B in log-parameter space; the prior mean is profiled out in
    closed form. Never returns a likelihood below that of ``init`` (after clipping
    ``init`` into the bounds).
    """
    X = as_inputs(points)
    y = np.asarray(targets, dtype=float)
    if len(y) < 2:
        raise ValueError("fit_hyperparameters needs at least 2 records")
    rng = rng if rng is not None else np.random.default_rng(0)
    init = init.clipped()
    if not np.all(np.isfinite(y)):
        warnings.warn("non-finite targets; keeping the initial hyperparameters", HyperparameterFitWarning,
                      stacklevel=2)
        return init
    sq = cdist(X, X, "sqeuclidean")
    bounds = [
        (math.log(LENGTHSCALE_BOUNDS[0]), math.log(LENGTHSCALE_BOUNDS[1])),
        (math.log(OUTPUT_SCALE_BOUNDS[0]), math.log(OUTPUT_SCALE_BOUNDS[1])),
        (math.log(NOISE_BOUNDS[0]), math.log(NOISE_BOUNDS[1])),
    ]
    var_y = max(float(np.var(y)), 1e-4)
    starts = [np.array([math.log(init.lengthscale), math.log(init.output_scale), math.log(init.noise_variance)])]
    for _ in range(n_restarts - 1):
        starts.append(np.array([
            rng.uniform(math.log(0.05), math.log(1.0)),
            math.log(var_y) + rng.uniform(-1.0, 1.0),
            rng.uniform(math.log(NOISE_FLOOR), math.log(max(1e-2 * var_y, 2 * NOISE_FLOOR))),
        ]))

    def fun(p):
        val, grad, _ = _profiled_nlml(p, X, sq, y)
        if not np.isfinite(val):
            return 1e300, np.zeros(3)
        return val, grad

    best_val, best_p = np.inf, None
    for p0 in starts:
        p0 = np.clip(p0, [b[0] for b in bounds], [b[1] for b in bounds])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = minimize(fun, p0, jac=True, method="L-BFGS-B", bounds=bounds, options={"maxiter": 200})
        val, _, _ = _profiled_nlml(res.x, X, sq, y)
        if np.isfinite(val) and val < best_val:
            best_val, best_p = val, res.x

    init_lml = log_marginal_likelihood(X, y, init)
    if best_p is None:
        warnings.warn("marginal likelihood non-finite at every restart; keeping init",
                      HyperparameterFitWarning, stacklevel=2)
        return init
    _, _, mean = _profiled_nlml(best_p, X, sq, y)
    fitted = GpHyperparams(
        mean,
        float(np.clip(math.exp(best_p[0]), *LENGTHSCALE_BOUNDS)),
        float(np.clip(math.exp(best_p[1]), *OUTPUT_SCALE_BOUNDS)),
        float(np.clip(math.exp(best_p[2]), *NOISE_BOUNDS)),
    )
    if log_marginal_likelihood(X, y, fitted) < init_lml:
        return init
    return fitted
