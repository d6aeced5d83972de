"""Benchmark catalog: GP-prior sample paths, BG, SB and SMD problems on the unit cube.

Every problem is posed as ``max_x f(x, theta*(x))`` with ``theta*(x) = argmax g``;
minimization-form test functions are negated. Constraints are feasible when
``c >= 0``. Inputs are scaled from the unit cube to each function's native box.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .bilevel import GridSpec, _constrained_argmax, _violation
from .gp import GpHyperparams
from .paths import PathSample, draw_feature_map

PROBLEM_NAMES = ("gp-prior", "bg", "sb", "smd01", "smd02", "smd03", "smd09", "smd10", "smd11", "smd12")
GP_PRIOR_FEATURES = 4096
# open interval ends of the SMD boxes are pulled in by this fraction of the width
OPEN_MARGIN = 1e-2


@dataclass(frozen=True, eq=False)
class BenchmarkSpec:
    name: str
    d_x: int
    d_theta: int
    eval_f: Callable
    eval_g: Callable
    grid: GridSpec
    N: int = 0
    M: int = 0
    eval_cU: Optional[Callable] = None  # (m, d) -> (m, N)
    eval_cL: Optional[Callable] = None  # (m, d) -> (m, M)
    transform: str = "signed-log1p"
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.d_x + self.d_theta

    @property
    def constrained(self) -> bool:
        return self.N + self.M > 0

    def constraints(self, Z) -> tuple[np.ndarray, np.ndarray]:
        Z = np.atleast_2d(Z)
        cU = self.eval_cU(Z) if self.N else np.zeros((len(Z), 0))
        cL = self.eval_cL(Z) if self.M else np.zeros((len(Z), 0))
        return cU, cL

    def with_grid(self, points_per_dim: int) -> "BenchmarkSpec":
        grid = GridSpec.uniform(self.d_x, self.d_theta, points_per_dim)
        return BenchmarkSpec(self.name, self.d_x, self.d_theta, self.eval_f, self.eval_g, grid, self.N, self.M,
                             self.eval_cU, self.eval_cL, self.transform, dict(self.params, grid=points_per_dim))


def apply_transform(raw, transform: str = "signed-log1p"):
    """Output transform applied to benchmark objectives."""
    if transform == "signed-log1p":
        raw = np.asarray(raw, dtype=float)
        out = np.sign(raw) * np.log1p(np.abs(raw))
        return float(out) if out.ndim == 0 else out
    if transform == "identity":
        return raw
    raise ValueError(f"unknown transform {transform!r}")


def _scale(u, lo, hi):
    return np.asarray(lo, dtype=float) + np.asarray(u, dtype=float) * (np.asarray(hi, dtype=float) - lo)


# ---------------------------------------------------------------------------
# classic test functions (minimization form, native domains)

def branin(x1, x2):
    b, c = 5.1 / (4 * math.pi**2), 5 / math.pi
    t = 1 / (8 * math.pi)
    return (x2 - b * x1**2 + c * x1 - 6) ** 2 + 10 * (1 - t) * np.cos(x1) + 10


def goldstein_price(x1, x2):
    a = 1 + (x1 + x2 + 1) ** 2 * (19 - 14 * x1 + 3 * x1**2 - 14 * x2 + 6 * x1 * x2 + 3 * x2**2)
    b = 30 + (2 * x1 - 3 * x2) ** 2 * (18 - 32 * x1 + 12 * x1**2 + 48 * x2 - 36 * x1 * x2 + 27 * x2**2)
    return a * b


def six_hump_camel(x1, x2):
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


def branin_rescaled(u1, u2):
    """Branin on the unit square with the standardized output scale of Picheny et al."""
    x1, x2 = 15 * u1 - 5, 15 * u2
    return (branin(x1, x2) - 10 - 44.81) / 51.95


def goldstein_price_log(u1, u2):
    """Log Goldstein-Price on the unit square, standardized (Picheny et al.)."""
    return (np.log(goldstein_price(4 * u1 - 2, 4 * u2 - 2)) - 8.693) / 2.427


def _negated(fun, transform):
    def ev(Z):
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        return apply_transform(-fun(Z[:, 0], Z[:, 1]), transform)
    return ev


def _bg(transform):
    if transform == "picheny":
        return _negated(branin_rescaled, "identity"), _negated(goldstein_price_log, "identity")
    f = lambda u, v: branin(_scale(u, -5, 10), _scale(v, 0, 15))
    g = lambda u, v: goldstein_price(_scale(u, -2, 2), _scale(v, -2, 2))
    return _negated(f, transform), _negated(g, transform)


def _sb(transform):
    f = lambda u, v: six_hump_camel(_scale(u, -3, 3), _scale(v, -2, 2))
    if transform == "picheny":
        # only the Branin level has a standardized form; the camel keeps signed-log1p
        return _negated(f, "signed-log1p"), _negated(branin_rescaled, "identity")
    g = lambda u, v: branin(_scale(u, -5, 10), _scale(v, 0, 15))
    return _negated(f, transform), _negated(g, transform)


# ---------------------------------------------------------------------------
# SMD problems: x = (x_u1, x_u2), theta = (x_l1, x_l2), one variable per group

def _open(lo, hi, left=False, right=False):
    w = hi - lo
    return (lo + OPEN_MARGIN * w if left else lo, hi - OPEN_MARGIN * w if right else hi)


_HALF_PI = math.pi / 2
_SMD_BOUNDS = {
    "smd01": [(-5, 10), (-5, 10), (-5, 10), _open(-_HALF_PI, _HALF_PI, True, True)],
    "smd02": [(-5, 10), (-5, 1), (-5, 10), _open(0.0, math.e, left=True)],
    "smd03": [(-5, 10), (-5, 10), (-5, 10), _open(-_HALF_PI, _HALF_PI, True, True)],
    "smd09": [(-5, 10), (-5, 1), (-5, 10), _open(-1.0, -1.0 + math.e, left=True)],
    "smd10": [(-5, 10), (-5, 10), (-5, 10), _open(-_HALF_PI, _HALF_PI, True, True)],
    "smd11": [(-5, 10), (-1, 1), (-5, 10), (1 / math.e, math.e)],
    "smd12": [(-5, 10), (-14.1, 14.1), (-5, 10), _open(-1.5, 1.5, True, True)],
}


def _smd_vars(name, Z):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    b = _SMD_BOUNDS[name]
    return [_scale(Z[:, i], *b[i]) for i in range(4)]


def _smd_upper_lower(name):
    """(F, f) in minimization form as functions of (u1, u2, l1, l2)."""
    if name == "smd01":
        F = lambda u1, u2, l1, l2: u1**2 + l1**2 + u2**2 + (u2 - np.tan(l2)) ** 2
        f = lambda u1, u2, l1, l2: u1**2 + l1**2 + (u2 - np.tan(l2)) ** 2
    elif name == "smd02":
        F = lambda u1, u2, l1, l2: u1**2 - l1**2 + u2**2 - (u2 - np.log(l2)) ** 2
        f = lambda u1, u2, l1, l2: u1**2 + l1**2 + (u2 - np.log(l2)) ** 2
    elif name == "smd03":
        F = lambda u1, u2, l1, l2: u1**2 + l1**2 + u2**2 + (u2**2 - np.tan(l2)) ** 2
        f = lambda u1, u2, l1, l2: (u1**2 + 1 + (l1**2 - np.cos(2 * math.pi * l1))
                                     + (u2**2 - np.tan(l2)) ** 2)
    elif name == "smd09":
        F = lambda u1, u2, l1, l2: u1**2 - l1**2 + u2**2 - (u2 - np.log1p(l2)) ** 2
        f = lambda u1, u2, l1, l2: u1**2 + l1**2 + (u2 - np.log1p(l2)) ** 2
    elif name == "smd10":
        F = lambda u1, u2, l1, l2: (u1 - 2) ** 2 + l1**2 + (u2 - 2) ** 2 - (u2 - np.tan(l2)) ** 2
        f = lambda u1, u2, l1, l2: u1**2 + (l1 - 2) ** 2 + (u2 - np.tan(l2)) ** 2
    elif name == "smd11":
        F = lambda u1, u2, l1, l2: u1**2 - l1**2 + u2**2 - (u2 - np.log(l2)) ** 2
        f = lambda u1, u2, l1, l2: u1**2 + l1**2 + (u2 - np.log(l2)) ** 2
    elif name == "smd12":
        F = lambda u1, u2, l1, l2: ((u1 - 1) ** 2 + l1**2 + (u2 - 1) ** 2 + np.tan(np.abs(l2))
                                     - (u2 - np.tan(l2)) ** 2)
        f = lambda u1, u2, l1, l2: u1**2 + (l1 - 2) ** 2 + (u2 - np.tan(l2)) ** 2
    else:
        raise ValueError(name)
    return F, f


def _cubic_coupling(u1, u2):
    # x_u^j - sum_{i != j} (x_u^i)^3 >= 0 for both upper variables
    return [u1 - u2**3, u2 - u1**3]


def _smd_constraints(name):
    """Upper and lower constraint functions of (u1, u2, l1, l2), feasible when >= 0."""
    if name == "smd09":
        def frac(s):
            return s - np.floor(s + 0.5)
        cU = lambda u1, u2, l1, l2: [frac(u1**2 + u2**2)]
        cL = lambda u1, u2, l1, l2: [frac(l1**2 + l2**2)]
    elif name == "smd10":
        cU = lambda u1, u2, l1, l2: _cubic_coupling(u1, u2)
        cL = lambda u1, u2, l1, l2: [l1]
    elif name == "smd11":
        cU = lambda u1, u2, l1, l2: [u2 - 1.0 - np.log(l2)]
        cL = lambda u1, u2, l1, l2: [(u2 - np.log(l2)) ** 2 - 1.0]
    elif name == "smd12":
        cU = lambda u1, u2, l1, l2: [u2 - np.tan(l2)] + _cubic_coupling(u1, u2)
        cL = lambda u1, u2, l1, l2: [l1, (u2 - np.tan(l2)) ** 2 - 1.0]
    else:
        return None, None
    return cU, cL


SMD_CONSTRAINT_COUNTS = {"smd09": (1, 1), "smd10": (2, 1), "smd11": (1, 1), "smd12": (3, 2)}


def _smd(name, transform):
    F, f = _smd_upper_lower(name)

    def ev_f(Z):
        return apply_transform(-F(*_smd_vars(name, Z)), transform)

    def ev_g(Z):
        return apply_transform(-f(*_smd_vars(name, Z)), transform)

    cU, cL = _smd_constraints(name)
    ev_cU = ev_cL = None
    if cU is not None:
        ev_cU = lambda Z: np.column_stack(cU(*_smd_vars(name, Z)))
        ev_cL = lambda Z: np.column_stack(cL(*_smd_vars(name, Z)))
    return ev_f, ev_g, ev_cU, ev_cL


# ---------------------------------------------------------------------------
# GP-prior sample-path problems

def _prior_path(lengthscale: float, rng, dim: int) -> PathSample:
    fmap = draw_feature_map(GpHyperparams(0.0, lengthscale, 1.0), GP_PRIOR_FEATURES, rng, dim)
    return PathSample(fmap, rng.standard_normal(GP_PRIOR_FEATURES), 0.0)


def gp_prior_problem(lengthscale_U: float = 0.25, lengthscale_L: float = 0.25, seed: int = 0,
                     points_per_dim: int = 100, d_x: int = 1, d_theta: int = 1) -> BenchmarkSpec:
    """f and g are independent frozen RFF draws from the zero-mean unit-variance GP prior."""
    rng = np.random.default_rng(seed)
    dim = d_x + d_theta
    pf = _prior_path(lengthscale_U, rng, dim)
    pg = _prior_path(lengthscale_L, rng, dim)
    return BenchmarkSpec(
        "gp-prior", d_x, d_theta, pf.value, pg.value, GridSpec.uniform(d_x, d_theta, points_per_dim),
        transform="identity", params={"lU": lengthscale_U, "lL": lengthscale_L, "seed": seed},
    )


# ---------------------------------------------------------------------------
# catalog

def parse_problem(text: str) -> tuple[str, dict]:
    """Split ``name:key=value,key=value`` into the name and a parameter dict."""
    name, _, rest = text.partition(":")
    params = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"malformed problem parameter {item!r}")
        params[key.strip()] = value.strip()
    return name.strip().lower(), params


def make_problem(name: str, params: Optional[dict] = None) -> BenchmarkSpec:
    """Build a catalog problem. ``name`` may carry parameters (``gp-prior:lU=0.1,seed=2``).

    Recognized parameters: ``grid`` (points per dimension), ``transform``
    (signed-log1p, identity, picheny for bg/sb), and for gp-prior ``lU``, ``lL``, ``seed``.
    """
    name, parsed = parse_problem(name)
    params = {**parsed, **(params or {})}
    if name not in PROBLEM_NAMES:
        raise ValueError(f"unknown problem {name!r}; choose from {', '.join(PROBLEM_NAMES)}")
    grid_n = params.get("grid")
    if name == "gp-prior":
        spec = gp_prior_problem(float(params.get("lU", 0.25)), float(params.get("lL", 0.25)),
                                int(params.get("seed", 0)), int(grid_n or 100))
        return spec
    transform = str(params.get("transform", "signed-log1p"))
    if name in ("bg", "sb"):
        if transform not in ("signed-log1p", "identity", "picheny"):
            raise ValueError(f"unknown transform {transform!r}")
        ev_f, ev_g = _bg(transform) if name == "bg" else _sb(transform)
        return BenchmarkSpec(name, 1, 1, ev_f, ev_g, GridSpec.uniform(1, 1, int(grid_n or 100)),
                             transform=transform, params=dict(params))
    if transform not in ("signed-log1p", "identity"):
        raise ValueError(f"unknown transform {transform!r}")
    ev_f, ev_g, ev_cU, ev_cL = _smd(name, transform)
    N, M = SMD_CONSTRAINT_COUNTS.get(name, (0, 0))
    return BenchmarkSpec(name, 2, 2, ev_f, ev_g, GridSpec.uniform(2, 2, int(grid_n or 10)), N, M, ev_cU, ev_cL,
                         transform=transform, params=dict(params))


# ---------------------------------------------------------------------------
# ground truth

@dataclass(frozen=True, eq=False)
class GroundTruth:
    f_star: float
    x_star_index: int
    theta_star_table: np.ndarray
    min_f: float
    min_g_per_x: np.ndarray
    g_best_per_x: np.ndarray  # g(x, theta*(x))
    max_constraint_violation: np.ndarray  # per constraint, upper then lower
    F: np.ndarray  # (nx, nt) objective values over the pool
    G: np.ndarray
    C: np.ndarray  # (N + M, nx, nt) constraint values
    grid: GridSpec


def grid_values(spec: BenchmarkSpec, grid: Optional[GridSpec] = None):
    grid = grid if grid is not None else spec.grid
    Z = grid.pool()
    nx, nt = grid.shape
    F = np.asarray(spec.eval_f(Z), dtype=float).reshape(nx, nt)
    G = np.asarray(spec.eval_g(Z), dtype=float).reshape(nx, nt)
    cU, cL = spec.constraints(Z)
    C = np.concatenate([cU, cL], axis=1).T.reshape(spec.N + spec.M, nx, nt)
    return F, G, C


def compute_ground_truth(spec: BenchmarkSpec, grid: Optional[GridSpec] = None) -> GroundTruth:
    """Exhaustive scan of the pool.

    theta*(x) maximizes g among lower-feasible grid points (least violation if none);
    f* maximizes f(x, theta*(x)) among upper-feasible x, with the same fallback.
    """
    grid = grid if grid is not None else spec.grid
    F, G, C = grid_values(spec, grid)
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(G)) and np.all(np.isfinite(C))):
        raise ValueError(f"{spec.name}: non-finite benchmark values on the grid")
    lower_viol = _violation(list(C[spec.N:]))
    table = _constrained_argmax(G, lower_viol)
    rows = np.arange(grid.shape[0])
    f_curve = F[rows, table]
    upper_viol = _violation([c[rows, table] for c in C[:spec.N]])
    i = int(_constrained_argmax(f_curve, upper_viol))
    max_viol = np.array([np.max(np.maximum(0.0, -c)) for c in C]) if len(C) else np.zeros(0)
    return GroundTruth(
        f_star=float(f_curve[i]), x_star_index=i, theta_star_table=table,
        min_f=float(F.min()), min_g_per_x=G.min(axis=1), g_best_per_x=G[rows, table],
        max_constraint_violation=max_viol, F=F, G=G, C=C, grid=grid,
    )
