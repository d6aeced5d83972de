"""Bilevel simple regret with level-wise normalization and constraint violation terms."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .benchmarks import BenchmarkSpec, GroundTruth, compute_ground_truth
from .bilevel import GridSpec
from .gp import QueryPoint, as_inputs

GRID_MATCH_TOL = 1e-9


def _ratio(num, den):
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _grid_index(axis_grid: np.ndarray, v: np.ndarray) -> Optional[int]:
    hits = np.flatnonzero(np.all(np.abs(axis_grid - v) <= GRID_MATCH_TOL, axis=1))
    return int(hits[0]) if hits.size else None


def pool_indices(points, grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Grid row/column of each point; raises ValueError for points off the pool."""
    Z = as_inputs(points)
    d_x = grid.d_x
    rows, cols = [], []
    for z in Z:
        i = _grid_index(grid.x_grid, z[:d_x])
        j = _grid_index(grid.theta_grid, z[d_x:])
        if i is None or j is None:
            raise ValueError(f"point {z} is not on the pool")
        rows.append(i)
        cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


def _components_on_pool(gt: GroundTruth, rows, cols):
    f = gt.F[rows, cols]
    g = gt.G[rows, cols]
    r_f = _ratio(np.maximum(0.0, gt.f_star - f), np.full_like(f, gt.f_star - gt.min_f))
    g_best = gt.g_best_per_x[rows]
    # with lower constraints an infeasible theta can beat theta*(x); clip at 0
    r_g = _ratio(np.maximum(0.0, g_best - g), g_best - gt.min_g_per_x[rows])
    c = gt.C[:, rows, cols]
    r_c = _ratio(np.maximum(0.0, -c), gt.max_constraint_violation[:, None]).T
    return r_f, r_g, r_c


def _components_off_pool(spec: BenchmarkSpec, gt: GroundTruth, Z: np.ndarray):
    """Continuous-mode regret: normalizers and theta*(x) come from the reference grid ``gt.grid``."""
    d_x = spec.d_x
    f = np.asarray(spec.eval_f(Z), dtype=float)
    g = np.asarray(spec.eval_g(Z), dtype=float)
    theta_grid = gt.grid.theta_grid
    nt = len(theta_grid)
    g_best, g_min = np.empty(len(Z)), np.empty(len(Z))
    for k, z in enumerate(Z):
        line = np.hstack([np.tile(z[:d_x], (nt, 1)), theta_grid])
        vals = np.asarray(spec.eval_g(line), dtype=float)
        if spec.M:
            _, cL = spec.constraints(line)
            feasible = np.all(cL >= 0, axis=1)
            best = vals[feasible].max() if feasible.any() else vals[np.argmin(np.maximum(0, -cL).sum(1))]
        else:
            # the point itself may beat every reference theta
            best = max(vals.max(), g[k])
        g_best[k], g_min[k] = best, min(vals.min(), g[k])
    # a point below the reference minimum extends the normalizer for that point only
    r_f = _ratio(np.maximum(0.0, gt.f_star - f), gt.f_star - np.minimum(gt.min_f, f))
    r_g = _ratio(np.maximum(0.0, g_best - g), g_best - g_min)
    cU, cL = spec.constraints(Z)
    c = np.concatenate([cU, cL], axis=1)
    viol = np.maximum(0.0, -c)
    r_c = _ratio(viol, np.maximum(gt.max_constraint_violation[None, :], viol))
    return r_f, r_g, r_c


def regret_components(point, spec: BenchmarkSpec, gt: GroundTruth, off_pool: bool = False):
    """(r_f, r_g, r_c) for one point, or arrays of them for a batch.

    Pool points use exact table lookups. With ``off_pool=True`` points need not lie
    on ``gt.grid``; the lower-level optimum at their x is then found by scanning the
    grid's theta values.
    """
    Z = as_inputs(point)
    single = isinstance(point, QueryPoint) or np.ndim(point) == 1
    if off_pool:
        r_f, r_g, r_c = _components_off_pool(spec, gt, Z)
    else:
        rows, cols = pool_indices(Z, gt.grid)
        r_f, r_g, r_c = _components_on_pool(gt, rows, cols)
    r_f, r_g, r_c = np.clip(r_f, 0, 1), np.clip(r_g, 0, 1), np.clip(r_c, 0, 1)
    if single:
        return float(r_f[0]), float(r_g[0]), r_c[0]
    return r_f, r_g, r_c


def point_regret(points, spec: BenchmarkSpec, gt: GroundTruth, off_pool: bool = False) -> np.ndarray:
    """Worst normalized component per point."""
    r_f, r_g, r_c = regret_components(as_inputs(points), spec, gt, off_pool)
    parts = [r_f, r_g] + ([r_c.max(axis=1)] if r_c.shape[1] else [])
    return np.max(np.column_stack(parts), axis=1)


def bilevel_simple_regret(trace_points, spec: BenchmarkSpec, gt: GroundTruth, n0: int = 1,
                          off_pool: bool = False) -> np.ndarray:
    """Running minimum of the per-point worst component.

    Entry ``t`` covers the first ``n0 + t`` points, so the output has
    ``len(trace_points) - n0 + 1`` entries (entry 0 is the initial design).
    """
    Z = as_inputs(trace_points)
    if len(Z) == 0:
        raise ValueError("trace must contain at least one point")
    if not 1 <= n0 <= len(Z):
        raise ValueError("n0 must be between 1 and the number of points")
    running = np.minimum.accumulate(point_regret(Z, spec, gt, off_pool))
    return running[n0 - 1:]


def reference_grid(spec: BenchmarkSpec) -> GridSpec:
    """Dense grid for continuous-mode normalizers."""
    n = 200 if spec.dim <= 2 else 30
    return GridSpec.uniform(spec.d_x, spec.d_theta, n)


def reference_ground_truth(spec: BenchmarkSpec) -> GroundTruth:
    return compute_ground_truth(spec, reference_grid(spec))


@dataclass
class RegretTrace:
    """Per-point regret record of one run; ``cumulative`` is the running minimum."""

    iterations: list = field(default_factory=list)
    points: list = field(default_factory=list)
    r_f: list = field(default_factory=list)
    r_g: list = field(default_factory=list)
    r_c: list = field(default_factory=list)
    cumulative: list = field(default_factory=list)

    def add(self, iteration: int, point: QueryPoint, spec: BenchmarkSpec, gt: GroundTruth,
            off_pool: bool = False) -> float:
        rf, rg, rc = regret_components(point, spec, gt, off_pool)
        worst = max([rf, rg] + list(np.atleast_1d(rc)))
        best = min(self.cumulative[-1], worst) if self.cumulative else worst
        self.iterations.append(iteration)
        self.points.append(point)
        self.r_f.append(rf)
        self.r_g.append(rg)
        self.r_c.append(np.atleast_1d(rc))
        self.cumulative.append(best)
        return best

    def final(self) -> float:
        return self.cumulative[-1]

    def per_iteration(self) -> np.ndarray:
        """Regret after each iteration (index 0 = after the initial design)."""
        its = np.asarray(self.iterations)
        cum = np.asarray(self.cumulative)
        last = its.max()
        return np.array([cum[np.flatnonzero(its <= t)[-1]] for t in range(last + 1)])

