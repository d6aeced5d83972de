"""Lower-bound joint entropy search for bilevel problems.

For a candidate (x, theta) and one sampled optimum (x*, theta*, f*, g*) the
acquisition integrand is

    log p(y_f | f(x, theta*(x)) <= f*, D+) - log p(y_f | D)
  + log p(y_g | g(x*, theta)    <= g*, D+) - log p(y_g | D)

where D+ is the data plus the sampled optimum as a noiseless observation. Each
truncated density is a skew-normal built from three Gaussian moment pairs
(:class:`TruncatedMoments`). The expectation over optima and observations is
a Monte-Carlo average over a :class:`McBundle` of K samples that is reused for
every candidate of one iteration.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import qmc

from . import kernels
from .bilevel import GridSpec, OptimumSample, inner_argmax_continuous, solve_bilevel_continuous, \
    solve_bilevel_grid, theta_star_jacobian
from .errors import DegenerateConditioningError, SingularHessianError
from .gp import AUG_JITTER, GpModel, QueryPoint, as_inputs, paired_kernel
from .paths import DEFAULT_RFF_DIM, draw_feature_map, draw_path

SD_FLOOR = 1e-9
PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)
SAME_POINT_TOL = 1e-9
DEFAULT_K = 30


@dataclass(frozen=True)
class TruncatedMoments:
    """(m1, s1): truncation point given y and D+; (m2, s2): truncation point given D+;
    (m3, s3): the observation y given D+. Fields may be scalars or equal-shape arrays."""

    m1: np.ndarray
    s1: np.ndarray
    m2: np.ndarray
    s2: np.ndarray
    m3: np.ndarray
    s3: np.ndarray


@dataclass(frozen=True)
class ConstraintTruncation:
    objective_moments: TruncatedMoments
    constraint_means: np.ndarray  # conditioned on the constraint observations at the candidate
    constraint_sds: np.ndarray
    prior_means: np.ndarray  # D_t posterior at the truncation point
    prior_sds: np.ndarray


@dataclass(frozen=True, eq=False)
class LevelModels:
    """GP models fitted on D_t: f, g and any upper/lower constraint models."""

    f: GpModel
    g: GpModel
    cU: tuple = ()
    cL: tuple = ()

    @property
    def constrained(self) -> bool:
        return bool(self.cU or self.cL)


@dataclass(frozen=True, eq=False)
class McBundle:
    """K sampled optima with the path values and standardized noise used for y draws.

    y draws for sample k at candidate c are ``path_k(c) + sd_noise * xi_k`` with one
    standard-normal ``xi_k`` per sample and modeled function (common random numbers
    across candidates).
    """

    samples: tuple
    xi_f: np.ndarray
    xi_g: np.ndarray
    xi_cU: np.ndarray  # (K, N)
    xi_cL: np.ndarray  # (K, M)
    grid: Optional[GridSpec] = None
    F: Optional[np.ndarray] = None  # (K, P) pool values of the sampled f paths
    G: Optional[np.ndarray] = None
    CU: Optional[np.ndarray] = None  # (K, N, P)
    CL: Optional[np.ndarray] = None  # (K, M, P)

    @property
    def K(self) -> int:
        return len(self.samples)


# ---------------------------------------------------------------------------
# posterior covariances between arbitrary point pairs

class PosteriorView:
    """Posterior mean/variance at a fixed point set plus pairwise covariances by index."""

    def __init__(self, model: GpModel, Z: np.ndarray):
        self.model = model
        self.Z = as_inputs(Z)
        self.mean, self.var = model.predict(self.Z)
        self.V = model.project(self.Z)

    def cov(self, ia, ib) -> np.ndarray:
        ia, ib = np.broadcast_arrays(np.asarray(ia), np.asarray(ib))
        h = self.model.hyper
        k = paired_kernel(self.Z[ia.reshape(-1)], self.Z[ib.reshape(-1)], h.lengthscale, h.output_scale)
        if self.V.shape[0]:
            k = k - np.einsum("ij,ij->j", self.V[:, ia.reshape(-1)], self.V[:, ib.reshape(-1)])
        return k.reshape(ia.shape)


def _sd(var) -> np.ndarray:
    return np.maximum(np.sqrt(np.maximum(var, 0.0)), SD_FLOOR)


def level_moments(view: PosteriorView, ia, ib, i_opt, star_value, y, noise_var) -> TruncatedMoments:
    """Closed-form truncated-density moments for one level.

    ``ia``: candidate indices, ``ib``: truncation-point indices, ``i_opt``: index of
    the sampled optimum (added to the data with noise ``AUG_JITTER``).
    """
    mu_a, v_a = view.mean[ia], view.var[ia]
    mu_b, v_b = view.mean[ib], view.var[ib]
    mu_s = view.mean[i_opt]
    v_s = view.var[i_opt] + AUG_JITTER
    c_ab = view.cov(ia, ib)
    c_as = view.cov(ia, i_opt)
    c_bs = view.cov(ib, i_opt)
    resid = star_value - mu_s
    m2 = mu_b + c_bs / v_s * resid
    s2sq = v_b - c_bs * c_bs / v_s
    m3 = mu_a + c_as / v_s * resid
    s3sq = v_a + noise_var - c_as * c_as / v_s
    c_ab_plus = c_ab - c_bs * c_as / v_s
    s3sq_safe = np.maximum(s3sq, SD_FLOOR**2)
    m1 = m2 + c_ab_plus / s3sq_safe * (y - m3)
    s1sq = s2sq - c_ab_plus * c_ab_plus / s3sq_safe
    return TruncatedMoments(m1, _sd(s1sq), m2, _sd(s2sq), m3, _sd(s3sq))


def _points_view(model: GpModel, points) -> PosteriorView:
    return PosteriorView(model, np.vstack([as_inputs(p) for p in points]))


def truncated_moments_f(model_f: GpModel, sample: OptimumSample, candidate: QueryPoint, theta_star_of_x,
                        y_f: float) -> TruncatedMoments:
    """Moments for the upper level: truncation at (x, theta*(x)), optimum (x*, theta*)."""
    b = np.concatenate([candidate.x, np.atleast_1d(theta_star_of_x)])
    view = _points_view(model_f, [candidate.z, b, sample.z_star])
    mom = level_moments(view, 0, 1, 2, sample.f_star, y_f, model_f.hyper.noise_variance)
    return _check_scalar(mom)


def truncated_moments_g(model_g: GpModel, sample: OptimumSample, candidate: QueryPoint,
                        y_g: float) -> TruncatedMoments:
    """Moments for the lower level: truncation at (x*, theta), optimum (x*, theta*)."""
    e = np.concatenate([sample.x_star, candidate.theta])
    view = _points_view(model_g, [candidate.z, e, sample.z_star])
    mom = level_moments(view, 0, 1, 2, sample.g_star, y_g, model_g.hyper.noise_variance)
    return _check_scalar(mom)


def _check_scalar(mom: TruncatedMoments) -> TruncatedMoments:
    vals = [float(getattr(mom, k)) for k in ("m1", "s1", "m2", "s2", "m3", "s3")]
    if not all(math.isfinite(v) for v in vals):
        raise DegenerateConditioningError("non-finite truncated moments")
    return TruncatedMoments(*vals)


def truncated_log_density_f(moments: TruncatedMoments, y: float, f_star: float, at_optimum_x: bool) -> float:
    """log p(y | f(x, theta*(x)) <= f*, D+) in closed form."""
    m = moments
    r = (y - m.m3) / m.s3
    out = -0.5 * r * r - math.log(m.s3) - 0.5 * math.log(2 * math.pi)
    if not at_optimum_x:
        z = kernels.log_ndtr(np.array([(f_star - m.m1) / m.s1, (f_star - m.m2) / m.s2]))
        out += float(z[0] - z[1])
    return float(out)


def truncated_log_density_g(moments: TruncatedMoments, y: float, g_star: float, at_optimum_theta: bool) -> float:
    """log p(y | g(x*, theta) <= g*, D+); same form as the upper level."""
    return truncated_log_density_f(moments, y, g_star, at_optimum_theta)


def _log_prob_outside(log_tail_obj, log_feasible):
    """log(1 - P(objective >= star) * prod_n P(c_n >= 0)), floored at log(1e-300)."""
    log_a = log_tail_obj + (np.sum(log_feasible, axis=0) if len(log_feasible) else 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(-np.expm1(np.minimum(log_a, 0.0)))
    return np.maximum(out, LOG_PROB_FLOOR)


def _constrained_prob(ct: ConstraintTruncation, star: float, use_conditioned: bool) -> float:
    m = ct.objective_moments
    mean, sd = (m.m1, m.s1) if use_conditioned else (m.m2, m.s2)
    cm = ct.constraint_means if use_conditioned else ct.prior_means
    cs = ct.constraint_sds if use_conditioned else ct.prior_sds
    log_tail = kernels.log_ndtr(np.atleast_1d(-(star - mean) / sd))
    log_feas = kernels.log_ndtr(np.atleast_1d(np.asarray(cm, dtype=float) / np.asarray(cs, dtype=float)))
    log_a = log_tail[0] + float(np.sum(log_feas))
    return float(np.clip(-math.expm1(min(log_a, 0.0)), PROB_FLOOR, 1.0))


def constrained_truncation_prob_upper(ct: ConstraintTruncation, f_star: float, use_conditioned: bool) -> float:
    """P(h^f at the truncation point lies outside {f >= f*, c >= 0})."""
    return _constrained_prob(ct, f_star, use_conditioned)


def constrained_truncation_prob_lower(ct: ConstraintTruncation, g_star: float, use_conditioned: bool) -> float:
    return _constrained_prob(ct, g_star, use_conditioned)


# ---------------------------------------------------------------------------
# per-sample log-ratio terms

@dataclass
class _Geometry:
    """Index arrays (into per-model views) for one sample and a batch of candidates."""

    views: dict
    ia: np.ndarray
    ib: np.ndarray
    ie: np.ndarray
    i_opt: object
    at_x: np.ndarray
    at_theta: np.ndarray
    fa: np.ndarray  # sampled f path at the candidates
    ga: np.ndarray
    cUa: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    cLa: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


def _level_terms(view, ia, ib, i_opt, star, y, noise_var, at_opt, cviews=(), ys_c=(), cnoise=()):
    mom = level_moments(view, ia, ib, i_opt, star, y, noise_var)
    mu_a = view.mean[ia]
    sd_a = np.sqrt(view.var[ia] + noise_var)
    if not cviews:
        return kernels.trunc_log_ratio(y, mom.m1, mom.s1, mom.m2, mom.s2, mom.m3, mom.s3, mu_a, sd_a, star, at_opt)
    base = kernels.log_normal_pdf(y, mom.m3, mom.s3) - kernels.log_normal_pdf(y, mu_a, sd_a)
    log_feas_cond, log_feas_prior = [], []
    for cv, yc, nv in zip(cviews, ys_c, cnoise):
        tot = cv.var[ia] + nv
        c_ba = cv.cov(ib, ia)
        m_c = cv.mean[ib] + c_ba / tot * (yc - cv.mean[ia])
        s_c = _sd(cv.var[ib] - c_ba * c_ba / tot)
        log_feas_cond.append(kernels.log_ndtr(m_c / s_c))
        log_feas_prior.append(kernels.log_ndtr(cv.mean[ib] / _sd(cv.var[ib])))
    log_p1 = _log_prob_outside(kernels.log_ndtr(-(star - mom.m1) / mom.s1), np.array(log_feas_cond))
    log_p2 = _log_prob_outside(kernels.log_ndtr(-(star - mom.m2) / mom.s2), np.array(log_feas_prior))
    # constraint observation densities are not augmented, so their ratio is exactly 1
    return base + np.where(at_opt, 0.0, log_p1 - log_p2)


def _sample_terms(geo: _Geometry, sample: OptimumSample, models: LevelModels, bundle: McBundle, k: int,
                  constrained: bool):
    vf, vg = geo.views["f"], geo.views["g"]
    nf = models.f.hyper.noise_variance
    ng = models.g.hyper.noise_variance
    y_f = geo.fa + math.sqrt(nf) * bundle.xi_f[k]
    y_g = geo.ga + math.sqrt(ng) * bundle.xi_g[k]
    cvU = cvL = ()
    ycU = ycL = ()
    noiseU = noiseL = ()
    if constrained and models.cU:
        cvU = tuple(geo.views[f"cU{n}"] for n in range(len(models.cU)))
        noiseU = tuple(m.hyper.noise_variance for m in models.cU)
        ycU = tuple(geo.cUa[n] + math.sqrt(noiseU[n]) * bundle.xi_cU[k, n] for n in range(len(models.cU)))
    if constrained and models.cL:
        cvL = tuple(geo.views[f"cL{m}"] for m in range(len(models.cL)))
        noiseL = tuple(m.hyper.noise_variance for m in models.cL)
        ycL = tuple(geo.cLa[m] + math.sqrt(noiseL[m]) * bundle.xi_cL[k, m] for m in range(len(models.cL)))
    lr_f = _level_terms(vf, geo.ia, geo.ib, geo.i_opt, sample.f_star, y_f, nf, geo.at_x, cvU, ycU, noiseU)
    lr_g = _level_terms(vg, geo.ia, geo.ie, geo.i_opt, sample.g_star, y_g, ng, geo.at_theta, cvL, ycL, noiseL)
    return lr_f, lr_g


class PoolContext:
    """Posterior views of every model over the whole pool, shared by all samples."""

    def __init__(self, models: LevelModels, grid: GridSpec):
        self.grid = grid
        self.Z = grid.pool()
        self.views = {"f": PosteriorView(models.f, self.Z), "g": PosteriorView(models.g, self.Z)}
        for n, m in enumerate(models.cU):
            self.views[f"cU{n}"] = PosteriorView(m, self.Z)
        for n, m in enumerate(models.cL):
            self.views[f"cL{n}"] = PosteriorView(m, self.Z)


def _pool_geometry(ctx: PoolContext, bundle: McBundle, k: int, cand: np.ndarray) -> _Geometry:
    s = bundle.samples[k]
    nt = len(ctx.grid.theta_grid)
    i, j = np.divmod(cand, nt)
    return _Geometry(
        views=ctx.views,
        ia=cand,
        ib=i * nt + s.theta_table[i],
        ie=s.x_index * nt + j,
        i_opt=s.x_index * nt + s.theta_index,
        at_x=i == s.x_index,
        at_theta=j == s.theta_index,
        fa=bundle.F[k, cand],
        ga=bundle.G[k, cand],
        cUa=bundle.CU[k][:, cand] if bundle.CU is not None else np.zeros((0, len(cand))),
        cLa=bundle.CL[k][:, cand] if bundle.CL is not None else np.zeros((0, len(cand))),
    )


def _continuous_geometry(models: LevelModels, bundle: McBundle, k: int, Z: np.ndarray, d_x: int,
                         theta_prime: Optional[np.ndarray] = None) -> _Geometry:
    """Geometry at arbitrary candidates; theta*(x) comes from the sample's lower path
    unless ``theta_prime`` supplies it explicitly (one row per candidate)."""
    s = bundle.samples[k]
    m = len(Z)
    X, T = Z[:, :d_x], Z[:, d_x:]
    if theta_prime is None:
        theta_prime = np.array([inner_argmax_continuous(s.path_g, x, T.shape[1])[0] for x in X])
    B = np.hstack([X, theta_prime])
    E = np.hstack([np.tile(s.x_star, (m, 1)), T])
    stacked = np.vstack([Z, B, E, s.z_star[None, :]])
    views = {"f": PosteriorView(models.f, stacked), "g": PosteriorView(models.g, stacked)}
    idx = np.arange(m)
    return _Geometry(
        views=views,
        ia=idx,
        ib=m + idx,
        ie=2 * m + idx,
        i_opt=3 * m,
        at_x=np.linalg.norm(X - s.x_star, axis=1) < SAME_POINT_TOL,
        at_theta=np.linalg.norm(T - s.theta_star, axis=1) < SAME_POINT_TOL,
        fa=s.path_f.value(Z),
        ga=s.path_g.value(Z),
    )


def log_ratio_terms(bundle: McBundle, models: LevelModels, candidates=None, ctx: Optional[PoolContext] = None,
                    constrained: bool = False, theta_prime=None):
    """Per-sample upper and lower log-ratio terms, each of shape (K, m).

    ``candidates`` are pool indices in pool mode (default: the whole pool) or an
    (m, d) input matrix when the bundle has no grid.
    """
    if bundle.grid is not None:
        ctx = ctx if ctx is not None else PoolContext(models, bundle.grid)
        cand = np.arange(bundle.grid.size) if candidates is None else np.asarray(candidates, dtype=int).reshape(-1)
        geos = (_pool_geometry(ctx, bundle, k, cand) for k in range(bundle.K))
    else:
        if constrained and models.constrained:
            raise NotImplementedError("constrained acquisition is only available in pool mode")
        Z = as_inputs(candidates)
        d_x = bundle.samples[0].x_star.size
        geos = (_continuous_geometry(models, bundle, k, Z, d_x,
                                     None if theta_prime is None else theta_prime[k])
                for k in range(bundle.K))
    lr_f, lr_g = [], []
    for k, geo in enumerate(geos):
        a, b = _sample_terms(geo, bundle.samples[k], models, bundle, k, constrained)
        lr_f.append(a)
        lr_g.append(b)
    return np.array(lr_f), np.array(lr_g)


def bljes_coupled(candidates, bundle: McBundle, models: LevelModels, ctx=None) -> np.ndarray:
    """Monte-Carlo lower bound on the joint information gain of observing both levels."""
    lr_f, lr_g = log_ratio_terms(bundle, models, candidates, ctx)
    return np.mean(lr_f + lr_g, axis=0)


def bljes_decoupled_f(candidates, bundle: McBundle, models: LevelModels, ctx=None) -> np.ndarray:
    lr_f, _ = log_ratio_terms(bundle, models, candidates, ctx)
    return np.mean(lr_f, axis=0)


def bljes_decoupled_g(candidates, bundle: McBundle, models: LevelModels, ctx=None) -> np.ndarray:
    _, lr_g = log_ratio_terms(bundle, models, candidates, ctx)
    return np.mean(lr_g, axis=0)


def bljes_constrained(candidates, bundle: McBundle, models: LevelModels, ctx=None) -> np.ndarray:
    """Constrained variant; with no constraint models it is the coupled estimate."""
    lr_f, lr_g = log_ratio_terms(bundle, models, candidates, ctx, constrained=True)
    return np.mean(lr_f + lr_g, axis=0)


# ---------------------------------------------------------------------------
# bundle construction

def _sample_rngs(rng: np.random.Generator, K: int):
    seq = np.random.SeedSequence(int(rng.integers(2**63)))
    return [np.random.default_rng(s) for s in seq.spawn(K)]


def _draw_paths(models: LevelModels, rff_dim: int, srng, dim: int, shared_maps: Optional[dict]):
    paths = {}
    names = ["f", "g"] + [f"cU{n}" for n in range(len(models.cU))] + [f"cL{m}" for m in range(len(models.cL))]
    table = {"f": models.f, "g": models.g}
    table.update({f"cU{n}": m for n, m in enumerate(models.cU)})
    table.update({f"cL{n}": m for n, m in enumerate(models.cL)})
    for name in names:
        model = table[name]
        fmap = shared_maps[name] if shared_maps else draw_feature_map(model.hyper, rff_dim, srng, dim)
        paths[name] = draw_path(model, fmap, srng)
    return paths


def build_bundle(models: LevelModels, K: int, rng: np.random.Generator, grid: Optional[GridSpec] = None,
                 dims: Optional[tuple] = None, rff_dim: int = DEFAULT_RFF_DIM, shared_map: bool = False,
                 n_starts: int = 10) -> McBundle:
    """Draw K posterior path sets and solve each sampled bilevel problem.

    Pool mode (``grid`` given) solves on the grid and caches path values over the
    pool; continuous mode (``dims=(d_x, d_theta)``) uses the gradient solver.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if grid is not None:
        d_x, d_theta = grid.d_x, grid.d_theta
    else:
        d_x, d_theta = dims
    dim = d_x + d_theta
    rngs = _sample_rngs(rng, K)
    shared = None
    if shared_map:
        mrng = np.random.default_rng(int(rng.integers(2**63)))
        shared = {"f": draw_feature_map(models.f.hyper, rff_dim, mrng, dim),
                  "g": draw_feature_map(models.g.hyper, rff_dim, mrng, dim)}
        shared.update({f"cU{n}": draw_feature_map(m.hyper, rff_dim, mrng, dim) for n, m in enumerate(models.cU)})
        shared.update({f"cL{n}": draw_feature_map(m.hyper, rff_dim, mrng, dim) for n, m in enumerate(models.cL)})
    N, M = len(models.cU), len(models.cL)
    samples, F, G, CU, CL = [], [], [], [], []
    xi_f, xi_g, xi_cU, xi_cL = [], [], [], []
    for srng in rngs:
        paths = _draw_paths(models, rff_dim, srng, dim, shared)
        pU = tuple(paths[f"cU{n}"] for n in range(N))
        pL = tuple(paths[f"cL{m}"] for m in range(M))
        if grid is not None:
            Fk = paths["f"].grid(grid.x_grid, grid.theta_grid)
            Gk = paths["g"].grid(grid.x_grid, grid.theta_grid)
            CUk = [p.grid(grid.x_grid, grid.theta_grid) for p in pU]
            CLk = [p.grid(grid.x_grid, grid.theta_grid) for p in pL]
            sample = solve_bilevel_grid(paths["f"], paths["g"], grid, pU, pL, F=Fk, G=Gk, CU=CUk, CL=CLk)
            F.append(Fk.reshape(-1))
            G.append(Gk.reshape(-1))
            CU.append(np.array([c.reshape(-1) for c in CUk]).reshape(N, grid.size))
            CL.append(np.array([c.reshape(-1) for c in CLk]).reshape(M, grid.size))
        else:
            sample = solve_bilevel_continuous(paths["f"], paths["g"], d_x, d_theta, n_starts=n_starts, rng=srng)
        samples.append(sample)
        xi_f.append(srng.standard_normal())
        xi_g.append(srng.standard_normal())
        xi_cU.append(srng.standard_normal(N))
        xi_cL.append(srng.standard_normal(M))
    kw = {}
    if grid is not None:
        kw = dict(F=np.array(F), G=np.array(G), CU=np.array(CU), CL=np.array(CL))
    return McBundle(tuple(samples), np.array(xi_f), np.array(xi_g), np.array(xi_cU).reshape(K, N),
                    np.array(xi_cL).reshape(K, M), grid=grid, **kw)


# ---------------------------------------------------------------------------
# query selection

@dataclass(frozen=True)
class Selection:
    point: QueryPoint
    level: str  # "both", "f" or "g"
    index: Optional[int]
    value: float


def acquisition_values(bundle: McBundle, models: LevelModels, mode: str, candidates=None, ctx=None):
    """Acquisition over candidates: shape (m,) for coupled/constrained, (m, 2) for decoupled."""
    if mode == "coupled":
        lr_f, lr_g = log_ratio_terms(bundle, models, candidates, ctx)
        return np.mean(lr_f + lr_g, axis=0)
    if mode == "constrained":
        lr_f, lr_g = log_ratio_terms(bundle, models, candidates, ctx, constrained=True)
        return np.mean(lr_f + lr_g, axis=0)
    if mode == "decoupled":
        lr_f, lr_g = log_ratio_terms(bundle, models, candidates, ctx)
        return np.stack([np.mean(lr_f, axis=0), np.mean(lr_g, axis=0)], axis=1)
    raise ValueError(f"unknown mode {mode!r}")


def select_next(bundle: McBundle, models: LevelModels, mode: str = "coupled", candidates=None,
                ctx: Optional[PoolContext] = None) -> Selection:
    """Pool-mode argmax of the acquisition; ties go to the lowest index, then f before g."""
    if bundle.grid is None:
        raise ValueError("select_next works on a pool; use maximize_continuous for continuous domains")
    cand = np.arange(bundle.grid.size) if candidates is None else np.asarray(candidates, dtype=int).reshape(-1)
    if cand.size == 0:
        raise ValueError("pool must be non-empty")
    vals = acquisition_values(bundle, models, mode, cand, ctx)
    d_x = bundle.grid.d_x
    pool_z = (ctx.Z if ctx is not None else bundle.grid.pool())
    if mode == "decoupled":
        flat = int(np.argmax(vals.reshape(-1)))
        pos, lvl = divmod(flat, 2)
        idx = int(cand[pos])
        return Selection(QueryPoint.from_z(pool_z[idx], d_x), "fg"[lvl], idx, float(vals[pos, lvl]))
    pos = int(np.argmax(vals))
    idx = int(cand[pos])
    return Selection(QueryPoint.from_z(pool_z[idx], d_x), "both", idx, float(vals[pos]))


# ---------------------------------------------------------------------------
# continuous-domain maximization

def _acq_with_theta_prime(bundle, models, mode, z, theta_prime):
    lr_f, lr_g = log_ratio_terms(bundle, models, z[None, :], theta_prime=theta_prime[:, None, :])
    if mode == "f":
        return float(np.mean(lr_f))
    if mode == "g":
        return float(np.mean(lr_g))
    return float(np.mean(lr_f + lr_g))


def acquisition_gradient(bundle: McBundle, models: LevelModels, z, d_x: int, level: str = "both",
                         h: float = 1e-6):
    """Value and gradient of the continuous acquisition at one joint input.

    Per sample, theta*(x) is the sample's lower-level maximizer; its dependence on x
    enters through the implicit-function Jacobian. Partial derivatives of the
    closed-form integrand are taken by central differences.
    """
    z = np.asarray(z, dtype=float)
    x, theta = z[:d_x], z[d_x:]
    d_t = theta.size
    tp = np.array([inner_argmax_continuous(s.path_g, x, d_t)[0] for s in bundle.samples])
    base = _acq_with_theta_prime(bundle, models, level, z, tp)
    grad = np.zeros_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        grad[i] = (_acq_with_theta_prime(bundle, models, level, z + e, tp)
                   - _acq_with_theta_prime(bundle, models, level, z - e, tp)) / (2 * h)
    # chain rule through theta*_k(x), sample by sample
    for k, s in enumerate(bundle.samples):
        try:
            J = theta_star_jacobian(s.path_g, x, tp[k])
        except SingularHessianError:
            continue
        d_tp = np.zeros(d_t)
        for j in range(d_t):
            up, dn = tp.copy(), tp.copy()
            up[k, j] += h
            dn[k, j] -= h
            d_tp[j] = (_acq_with_theta_prime(bundle, models, level, z, up)
                       - _acq_with_theta_prime(bundle, models, level, z, dn)) / (2 * h)
        grad[:d_x] += J.T @ d_tp
    return base, grad


def maximize_continuous(bundle: McBundle, models: LevelModels, mode: str, d_x: int, d_theta: int,
                        rng: np.random.Generator, n_candidates: int = 128, n_starts: int = 3,
                        steps: int = 20) -> Selection:
    """Multi-start projected gradient ascent of the acquisition over the unit box."""
    dim = d_x + d_theta
    cands = qmc.Halton(dim, scramble=True, seed=rng).random(n_candidates)
    levels = ["f", "g"] if mode == "decoupled" else ["both"]
    lr_f, lr_g = log_ratio_terms(bundle, models, cands)
    scores = {"f": lr_f.mean(0), "g": lr_g.mean(0), "both": (lr_f + lr_g).mean(0)}
    best = None
    for level in levels:
        vals = scores[level]
        for i in np.argsort(-vals, kind="stable")[:n_starts]:
            z, val = cands[i].copy(), float(vals[i])
            step = 0.05
            for _ in range(steps):
                cur, grad = acquisition_gradient(bundle, models, z, d_x, level)
                if not np.all(np.isfinite(grad)) or np.linalg.norm(grad) < 1e-10:
                    break
                moved = False
                while step > 1e-6:
                    cand = np.clip(z + step * grad / np.linalg.norm(grad), 0.0, 1.0)
                    lf, lg = log_ratio_terms(bundle, models, cand[None, :])
                    cval = float({"f": lf.mean(), "g": lg.mean(), "both": (lf + lg).mean()}[level])
                    if cval > cur:
                        z, val, moved = cand, cval, True
                        step *= 1.5
                        break
                    step *= 0.5
                if not moved:
                    break
            if best is None or val > best[1]:
                best = (z, val, level)
    z, val, level = best
    return Selection(QueryPoint.from_z(z, d_x), level, None, val)
