# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics match ``_pykernels`` exactly (up to summation order)."""
import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin, log, log1p, erfc, sqrt, M_PI

cnp.import_array()

cdef double LOG_CDF_SWITCH = -8.0
cdef double HALF_LOG_2PI = 0.5 * log(2.0 * M_PI)
cdef double SQRT1_2 = sqrt(0.5)


def rff_eval(Z, freq, phase, weights, double amp, double offset):
    cdef const double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(freq, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(phase, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = z.shape[0], dim = z.shape[1], nf = w.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, arg
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        acc = 0.0
        for j in range(nf):
            arg = b[j]
            for k in range(dim):
                arg += w[j, k] * z[i, k]
            acc += c[j] * cos(arg)
        o[i] = offset + amp * acc
    return out


def rff_eval_grad(Z, freq, phase, weights, double amp, double offset):
    cdef const double[:, ::1] z = np.ascontiguousarray(Z, dtype=np.float64)
    cdef const double[:, ::1] w = np.ascontiguousarray(freq, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(phase, dtype=np.float64)
    cdef const double[::1] c = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t n = z.shape[0], dim = z.shape[1], nf = w.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double acc, arg, s
    values = np.empty(n, dtype=np.float64)
    grads = np.zeros((n, dim), dtype=np.float64)
    cdef double[::1] v = values
    cdef double[:, ::1] g = grads
    for i in range(n):
        acc = 0.0
        for j in range(nf):
            arg = b[j]
            for k in range(dim):
                arg += w[j, k] * z[i, k]
            acc += c[j] * cos(arg)
            s = c[j] * sin(arg)
            for k in range(dim):
                g[i, k] -= s * w[j, k]
        v[i] = offset + amp * acc
        for k in range(dim):
            g[i, k] *= amp
    return values, grads


cdef inline double _log_ndtr(double z) nogil:
    cdef double inv2, total, term
    cdef int k
    if z < LOG_CDF_SWITCH:
        inv2 = 1.0 / (z * z)
        total = 1.0
        term = 1.0
        for k in range(1, 31):
            term = -term * (2 * k - 1) * inv2
            total = total + term
        return -0.5 * z * z - log(-z) - HALF_LOG_2PI + log(total)
    if z > 0.0:
        return log1p(-0.5 * erfc(z * SQRT1_2))
    return log(0.5 * erfc(-z * SQRT1_2))


cdef inline double _log_normal_pdf(double y, double mean, double sd) nogil:
    cdef double r = (y - mean) / sd
    return -0.5 * r * r - log(sd) - HALF_LOG_2PI


def log_ndtr(z):
    arr = np.ascontiguousarray(z, dtype=np.float64)
    flat = arr.reshape(-1)
    cdef const double[::1] zz = flat
    out = np.empty_like(flat)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    for i in range(zz.shape[0]):
        o[i] = _log_ndtr(zz[i])
    return out.reshape(arr.shape)


def trunc_log_ratio(y, m1, s1, m2, s2, m3, s3, mu, sd, star, at_opt):
    arrs = np.broadcast_arrays(
        np.asarray(y, dtype=np.float64), np.asarray(m1, dtype=np.float64),
        np.asarray(s1, dtype=np.float64), np.asarray(m2, dtype=np.float64),
        np.asarray(s2, dtype=np.float64), np.asarray(m3, dtype=np.float64),
        np.asarray(s3, dtype=np.float64), np.asarray(mu, dtype=np.float64),
        np.asarray(sd, dtype=np.float64), np.asarray(star, dtype=np.float64),
        np.asarray(at_opt, dtype=np.uint8),
    )
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(a).reshape(-1) for a in arrs]
    cdef const double[::1] yy = flat[0]
    cdef const double[::1] a1 = flat[1]
    cdef const double[::1] b1 = flat[2]
    cdef const double[::1] a2 = flat[3]
    cdef const double[::1] b2 = flat[4]
    cdef const double[::1] a3 = flat[5]
    cdef const double[::1] b3 = flat[6]
    cdef const double[::1] mm = flat[7]
    cdef const double[::1] ss = flat[8]
    cdef const double[::1] st = flat[9]
    cdef const cnp.uint8_t[::1] opt = flat[10]
    out = np.empty(yy.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    cdef double val
    for i in range(yy.shape[0]):
        val = _log_normal_pdf(yy[i], a3[i], b3[i]) - _log_normal_pdf(yy[i], mm[i], ss[i])
        if not opt[i]:
            val += _log_ndtr((st[i] - a1[i]) / b1[i]) - _log_ndtr((st[i] - a2[i]) / b2[i])
        o[i] = val
    return out.reshape(shape)
