"""Pure-numpy implementations of the hot kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop by loop.
"""
import math

import numpy as np
from scipy.special import erfc

LOG_CDF_SWITCH = -8.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_SQRT1_2 = math.sqrt(0.5)


def rff_eval(Z, freq, phase, weights, amp, offset):
    """Evaluate ``offset + amp * cos(Z @ freq.T + phase) @ weights`` row-wise."""
    Z = np.ascontiguousarray(Z, dtype=float)
    proj = Z @ freq.T
    proj += phase
    return offset + amp * (np.cos(proj) @ weights)


def rff_eval_grad(Z, freq, phase, weights, amp, offset):
    """Values and input gradients of a random-feature expansion at each row of ``Z``."""
    Z = np.ascontiguousarray(Z, dtype=float)
    proj = Z @ freq.T
    proj += phase
    values = offset + amp * (np.cos(proj) @ weights)
    grads = -amp * ((np.sin(proj) * weights) @ freq)
    return values, grads


def _log_cdf_tail(z):
    # asymptotic series for log Phi(z), z < -8; 30 terms stay below the divergence point (k ~ z^2/2)
    inv2 = 1.0 / (z * z)
    total = np.ones_like(z)
    term = np.ones_like(z)
    for k in range(1, 31):
        term = -term * (2 * k - 1) * inv2
        total = total + term
    return -0.5 * z * z - np.log(-z) - _HALF_LOG_2PI + np.log(total)


def log_ndtr(z):
    """Numerically stable ``log Phi(z)`` for the standard normal CDF."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    tail = z < LOG_CDF_SWITCH
    pos = z > 0.0
    mid = ~tail & ~pos
    out[tail] = _log_cdf_tail(z[tail])
    out[mid] = np.log(0.5 * erfc(-z[mid] * _SQRT1_2))
    out[pos] = np.log1p(-0.5 * erfc(z[pos] * _SQRT1_2))
    return out


def log_normal_pdf(y, mean, sd):
    r = (y - mean) / sd
    return -0.5 * r * r - np.log(sd) - _HALF_LOG_2PI


def trunc_log_ratio(y, m1, s1, m2, s2, m3, s3, mu, sd, star, at_opt):
    """Log of (truncated conditional density of y) / (plain predictive density of y).

    Vectorized over all arguments (broadcast). ``at_opt`` selects the branch where the
    truncation point coincides with the sampled optimum and no truncation applies.
    """
    out = log_normal_pdf(y, m3, s3) - log_normal_pdf(y, mu, sd)
    trunc = log_ndtr((star - m1) / s1) - log_ndtr((star - m2) / s2)
    return out + np.where(at_opt, 0.0, trunc)
