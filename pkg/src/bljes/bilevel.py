"""Solvers for the white-box bilevel problem defined by a pair of sample paths.

    max_x f(x, theta*(x))   s.t.   theta*(x) = argmax_theta g(x, theta)

Grid (pool) mode enumerates a product grid; continuous mode runs projected
ascent with implicit-function-theorem hypergradients.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import SingularHessianError
from .paths import eval_path_grid

MAX_HESSIAN_COND = 1e12
INNER_STEPS = 200
OUTER_STEPS = 100
GRAD_TOL = 1e-8
DEFAULT_STARTS = 10


@dataclass(frozen=True)
class GridSpec:
    points_per_dim: int
    x_grid: np.ndarray  # (nx, d_x)
    theta_grid: np.ndarray  # (nt, d_theta)

    @classmethod
    def uniform(cls, d_x: int, d_theta: int, points_per_dim: int) -> "GridSpec":
        axis = np.linspace(0.0, 1.0, points_per_dim)
        return cls(points_per_dim, _product(axis, d_x), _product(axis, d_theta))

    @property
    def d_x(self) -> int:
        return self.x_grid.shape[1]

    @property
    def d_theta(self) -> int:
        return self.theta_grid.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x_grid), len(self.theta_grid)

    @property
    def size(self) -> int:
        return len(self.x_grid) * len(self.theta_grid)

    def pool(self) -> np.ndarray:
        """All joint inputs, row ``i * n_theta + j`` is ``(x_grid[i], theta_grid[j])``."""
        nx, nt = self.shape
        return np.hstack([np.repeat(self.x_grid, nt, axis=0), np.tile(self.theta_grid, (nx, 1))])

    def index(self, i: int, j: int) -> int:
        return i * len(self.theta_grid) + j

    def split(self, k: int) -> tuple[int, int]:
        return divmod(int(k), len(self.theta_grid))


def _product(axis: np.ndarray, d: int) -> np.ndarray:
    return np.array(list(itertools.product(axis, repeat=d)), dtype=float).reshape(-1, d)


@dataclass(frozen=True, eq=False)
class OptimumSample:
    """One Monte-Carlo draw of the bilevel optimum of a sampled problem."""

    x_star: np.ndarray
    theta_star: np.ndarray
    f_star: float
    g_star: float
    path_f: object
    path_g: object
    # pool-mode bookkeeping: grid indices and the per-x lower-level argmax table
    x_index: Optional[int] = None
    theta_index: Optional[int] = None
    theta_table: Optional[np.ndarray] = None
    paths_cU: tuple = field(default=())
    paths_cL: tuple = field(default=())

    @property
    def z_star(self) -> np.ndarray:
        return np.concatenate([self.x_star, self.theta_star])


# ---------------------------------------------------------------------------
# grid mode

def _constrained_argmax(values: np.ndarray, violation: Optional[np.ndarray]) -> np.ndarray:
    """Row-wise argmax of ``values`` among zero-violation entries.

    Rows without any feasible entry fall back to the least-violating entry.
    Ties go to the lowest index.
    """
    if violation is None:
        return np.argmax(values, axis=-1)
    feasible = violation <= 0.0
    best_feasible = np.argmax(np.where(feasible, values, -np.inf), axis=-1)
    least_violating = np.argmin(violation, axis=-1)
    return np.where(feasible.any(axis=-1), best_feasible, least_violating)


def _violation(grids: Sequence[np.ndarray]) -> Optional[np.ndarray]:
    if not grids:
        return None
    return sum(np.maximum(0.0, -c) for c in grids)


def inner_argmax_grid(path_g, x, theta_grid: np.ndarray):
    """Grid theta maximizing g(x, .); ties broken by lowest grid index."""
    theta_grid = np.asarray(theta_grid, dtype=float)
    if len(theta_grid) == 0:
        raise ValueError("theta_grid must be non-empty")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    Z = np.hstack([np.tile(x, (len(theta_grid), 1)), theta_grid])
    vals = path_g.value(Z)
    j = int(np.argmax(vals))
    return theta_grid[j].copy(), float(vals[j])


def solve_bilevel_grid(path_f, path_g, grid: GridSpec, paths_cU: Sequence = (), paths_cL: Sequence = (),
                       F: Optional[np.ndarray] = None, G: Optional[np.ndarray] = None,
                       CU: Optional[Sequence[np.ndarray]] = None,
                       CL: Optional[Sequence[np.ndarray]] = None) -> OptimumSample:
    """Exhaustive bilevel solve on a product grid.

    Optional constraint paths restrict both levels to points where every sampled
    constraint is non-negative. ``F``/``G``/``CU``/``CL`` may pass precomputed
    grid values of the paths.
    """
    if grid.size == 0:
        raise ValueError("grids must be non-empty")
    G = eval_path_grid(path_g, grid.x_grid, grid.theta_grid) if G is None else G
    if CL is None:
        CL = [eval_path_grid(p, grid.x_grid, grid.theta_grid) for p in paths_cL]
    lower_viol = _violation(list(CL))
    table = _constrained_argmax(G, lower_viol)
    rows = np.arange(len(grid.x_grid))
    if F is None:
        on_curve = np.hstack([grid.x_grid, grid.theta_grid[table]])
        f_curve = path_f.value(on_curve)
    else:
        f_curve = F[rows, table]
    upper_viol = None
    if CU is not None and len(CU):
        upper_viol = _violation([c[rows, table] for c in CU])
    elif paths_cU:
        on_curve = np.hstack([grid.x_grid, grid.theta_grid[table]])
        upper_viol = _violation([p.value(on_curve) for p in paths_cU])
    i = int(_constrained_argmax(f_curve, upper_viol))
    j = int(table[i])
    x_star = grid.x_grid[i].copy()
    theta_star = grid.theta_grid[j].copy()
    z = np.concatenate([x_star, theta_star])[None, :]
    return OptimumSample(
        x_star, theta_star,
        float(path_f.value(z)[0]), float(path_g.value(z)[0]),
        path_f, path_g,
        x_index=i, theta_index=j, theta_table=table,
        paths_cU=tuple(paths_cU), paths_cL=tuple(paths_cL),
    )


# ---------------------------------------------------------------------------
# derivatives through the lower-level argmax

def theta_star_jacobian(path_g, x, theta_star) -> np.ndarray:
    """d theta*(x) / d x^T = -[d2g/dtheta dtheta^T]^{-1} d2g/dtheta dx^T, shape (d_theta, d_x)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    dx = x.size
    H = path_g.hessian(np.concatenate([x, theta_star]))
    H_tt = H[dx:, dx:]
    H_tx = H[dx:, :dx]
    if not np.all(np.isfinite(H_tt)) or np.linalg.cond(H_tt) > MAX_HESSIAN_COND:
        raise SingularHessianError("lower-level Hessian is singular at theta*")
    return -np.linalg.solve(H_tt, H_tx)


def hyper_gradient(path_f, path_g, x, theta_star) -> np.ndarray:
    """Total derivative of x -> f(x, theta*(x)) at the given inner optimum."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    theta_star = np.atleast_1d(np.asarray(theta_star, dtype=float))
    dx = x.size
    _, grad = path_f.value_and_grad(np.concatenate([x, theta_star])[None, :])
    J = theta_star_jacobian(path_g, x, theta_star)
    return grad[0, :dx] + J.T @ grad[0, dx:]


# ---------------------------------------------------------------------------
# continuous mode

def _coarse_axis(d: int) -> int:
    return 20 if d <= 2 else 6


def inner_argmax_continuous(path_g, x, d_theta: int, theta0=None):
    """Local maximizer of g(x, .) on the unit box.

    Starts from the best point of a coarse grid (or ``theta0``) and takes projected
    Newton steps when the Hessian is negative definite, gradient steps otherwise,
    each with backtracking. Returns ``(theta, value)``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    dx = x.size
    if theta0 is None:
        coarse = _product(np.linspace(0.0, 1.0, _coarse_axis(d_theta)), d_theta)
        theta, _ = inner_argmax_grid(path_g, x, coarse)
    else:
        theta = np.clip(np.asarray(theta0, dtype=float), 0.0, 1.0)

    def fg(t):
        v, g = path_g.value_and_grad(np.concatenate([x, t])[None, :])
        return float(v[0]), g[0, dx:]

    val, grad = fg(theta)
    for _ in range(INNER_STEPS):
        if np.linalg.norm(np.clip(theta + grad, 0.0, 1.0) - theta) < GRAD_TOL:
            break
        H = path_g.hessian(np.concatenate([x, theta]))[dx:, dx:]
        direction = grad
        try:
            if np.all(np.linalg.eigvalsh(H) < 0):
                direction = -np.linalg.solve(H, grad)
                step = 1.0
            else:
                step = 1.0 / max(np.abs(H).sum(axis=1).max(), 1e-8)
        except np.linalg.LinAlgError:
            step = 1e-2
        improved = False
        for _ in range(40):
            cand = np.clip(theta + step * direction, 0.0, 1.0)
            cv, cg = fg(cand)
            if cv >= val + 1e-4 * grad @ (cand - theta) and cv >= val:
                improved = True
                break
            step *= 0.5
        if not improved or np.array_equal(cand, theta):
            break
        theta, val, grad = cand, cv, cg
    return theta, val


def _bilevel_value(path_f, path_g, x, d_theta):
    theta, g_val = inner_argmax_continuous(path_g, x, d_theta)
    f_val = float(path_f.value(np.concatenate([x, theta])[None, :])[0])
    return f_val, theta, g_val


def _outer_ascent(path_f, path_g, x0, d_theta):
    """Projected hypergradient ascent; only accepts steps that raise f(x, theta*(x))."""
    x = np.clip(np.asarray(x0, dtype=float), 0.0, 1.0)
    val, theta, g_val = _bilevel_value(path_f, path_g, x, d_theta)
    step = 0.1
    for _ in range(OUTER_STEPS):
        singular = False
        try:
            grad = hyper_gradient(path_f, path_g, x, theta)
        except SingularHessianError:
            singular = True
            _, g = path_f.value_and_grad(np.concatenate([x, theta])[None, :])
            grad = g[0, :x.size]
        if np.linalg.norm(np.clip(x + grad, 0.0, 1.0) - x) < GRAD_TOL:
            break
        improved = False
        for _ in range(30):
            cand = np.clip(x + step * grad / max(np.linalg.norm(grad), 1e-12), 0.0, 1.0)
            cval, ctheta, cg = _bilevel_value(path_f, path_g, cand, d_theta)
            if cval > val:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        x, val, theta, g_val = cand, cval, ctheta, cg
        step = min(step * 2.0, 0.5)
    return x, theta, val, g_val, singular


def solve_bilevel_continuous(path_f, path_g, d_x: int, d_theta: int, n_starts: int = DEFAULT_STARTS,
                             rng: Optional[np.random.Generator] = None, starts: Optional[np.ndarray] = None,
                             fallback_points_per_dim: Optional[int] = None) -> OptimumSample:
    """Multi-start projected hypergradient ascent over the unit box.

    Start points are the best x of a coarse grid solve plus ``n_starts - 1``
    points of a scrambled Halton sequence seeded by ``rng``, unless given
    explicitly. If the lower-level Hessian is singular at the final iterate of
    every start, the result of a dense grid solve is returned instead.
    """
    if starts is None:
        if n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        rng = rng if rng is not None else np.random.default_rng(0)
        coarse = solve_bilevel_grid(path_f, path_g, GridSpec.uniform(d_x, d_theta, _coarse_axis(d_x + d_theta)))
        starts = coarse.x_star[None, :]
        if n_starts > 1:
            starts = np.vstack([starts, qmc.Halton(d_x, scramble=True, seed=rng).random(n_starts - 1)])
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    best = None
    all_singular = True
    for x0 in starts:
        x, theta, val, g_val, singular = _outer_ascent(path_f, path_g, x0, d_theta)
        if not singular:
            all_singular = False
        if best is None or val > best[2]:
            best = (x, theta, val, g_val)
    if all_singular:
        warnings.warn("singular lower-level Hessian at every start; using a dense grid solve", RuntimeWarning,
                      stacklevel=2)
        n = fallback_points_per_dim or (50 if d_x + d_theta <= 2 else 10)
        return solve_bilevel_grid(path_f, path_g, GridSpec.uniform(d_x, d_theta, n))
    x, theta, val, g_val = best
    return OptimumSample(x, theta, val, g_val, path_f, path_g)
