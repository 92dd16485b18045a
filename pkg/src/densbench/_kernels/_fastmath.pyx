# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the densbench._kernels._ref functions.

Same algorithms, scalar loops instead of array temporaries. Results agree
with the reference to rounding error (libm and numpy's vectorized log/exp
round differently on rare inputs; reductions also accumulate in a different
order). Each backend on its own is fully deterministic.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, sqrt, INFINITY, NAN

cnp.import_array()

cdef double SQRT_2PI = 2.5066282746310005024157652848110452530069867406099


cdef inline double _ppnd16(double p) nogil:
    cdef double q, r, num, den, val
    if p == 0.0:
        return -INFINITY
    if p == 1.0:
        return INFINITY
    if p < 0.0 or p > 1.0 or p != p:
        return NAN
    q = p - 0.5
    if fabs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r
              + 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r
              + 1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r
              + 1.3314166789178437745e+2) * r + 3.3871328727963666080e+0)
        den = (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r
              + 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r
              + 5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r
              + 4.2313330701600911252e+1) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r
              + 2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r
              + 3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r
              + 4.63033784615654529590e+0) * r + 1.42343711074968357734e+0)
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r
              + 1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r
              + 6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r
              + 2.05319162663775882187e+0) * r + 1.0)
    else:
        r = r - 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
              + 1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r
              + 2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r
              + 5.46378491116411436990e+0) * r + 6.65790464350110377720e+0)
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r
              + 1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r
              + 1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r
              + 5.99832206555887937690e-1) * r + 1.0)
    val = num / den
    if q < 0.0:
        return -val
    return val


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0.0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


def probit(p):
    """Inverse standard-normal CDF via AS 241 (PPND16), elementwise."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] arr = np.ascontiguousarray(
        np.atleast_1d(np.asarray(p, dtype=np.float64)).ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(arr.shape[0])
    cdef Py_ssize_t i, n = arr.shape[0]
    with nogil:
        for i in range(n):
            out[i] = _ppnd16(arr[i])
    shaped = out.reshape(np.asarray(p, dtype=np.float64).shape)
    if np.isscalar(p) or np.asarray(p).ndim == 0:
        return float(out[0])
    return shaped


def w1_pooled(x_sorted, y_sorted):
    """Width-weighted CDF-difference integral over the pooled order statistics."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xs = np.ascontiguousarray(x_sorted, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ys = np.ascontiguousarray(y_sorted, dtype=np.float64)
    cdef Py_ssize_t n = xs.shape[0], m = ys.shape[0]
    cdef Py_ssize_t i = 0, j = 0
    cdef double fx = 0.0, fy = 0.0, acc = 0.0, prev, t
    cdef double dn = 1.0 / n, dm = 1.0 / m
    cdef bint have_prev = False
    with nogil:
        while i < n or j < m:
            if j >= m or (i < n and xs[i] <= ys[j]):
                t = xs[i]
            else:
                t = ys[j]
            if have_prev and t > prev:
                acc += fabs(fx - fy) * (t - prev)
            while i < n and xs[i] == t:
                fx += dn
                i += 1
            while j < m and ys[j] == t:
                fy += dm
                j += 1
            prev = t
            have_prev = True
    return acc


def window_count_mean(samples_sorted, h):
    """Mean over sample points t of #{s : t-h <= s <= t+h}."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.ascontiguousarray(samples_sorted, dtype=np.float64)
    cdef Py_ssize_t n = s.shape[0]
    cdef Py_ssize_t i, lo = 0, hi = 0
    cdef double hh = h
    cdef double total = 0.0
    with nogil:
        for i in range(n):
            while lo < n and s[lo] < s[i] - hh:
                lo += 1
            if hi < i:
                hi = i
            while hi < n and s[hi] <= s[i] + hh:
                hi += 1
            total += hi - lo
    return total / n


def kde_gauss(samples, h, grid):
    """Gaussian-kernel density estimate of `samples` at `grid` points.

    Skips |x - t| > 39h, where the kernel underflows to exactly 0.0.
    """
    cdef cnp.ndarray[cnp.float64_t, ndim=1] s = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(np.asarray(grid, dtype=np.float64).ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(g.shape[0])
    cdef Py_ssize_t n = s.shape[0], ng = g.shape[0]
    cdef Py_ssize_t i, j, lo, hi, mid
    cdef double hh = h, t, acc, cut, u
    cdef double norm = 1.0 / (n * hh * SQRT_2PI)
    cut = 39.0 * hh
    with nogil:
        for i in range(ng):
            t = g[i]
            lo = 0
            hi = n
            while lo < hi:
                mid = (lo + hi) >> 1
                if s[mid] < t - cut:
                    lo = mid + 1
                else:
                    hi = mid
            acc = 0.0
            j = lo
            while j < n and s[j] <= t + cut:
                u = (t - s[j]) / hh
                acc += exp(-0.5 * u * u)
                j += 1
            out[i] = acc * norm
    return out


def logistic_mixture_cdf(x, weights, locs, scales):
    """CDF of a K-component logistic mixture, elementwise over x."""
    xa = np.asarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(xa.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.ascontiguousarray(locs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(xf.shape[0])
    cdef Py_ssize_t i, k, n = xf.shape[0], K = w.shape[0]
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for k in range(K):
                acc += w[k] * _sigmoid((xf[i] - mu[k]) / sc[k])
            out[i] = acc
    return out.reshape(xa.shape)


def logistic_mixture_logpdf(x, weights, locs, scales):
    """Log-density of a K-component logistic mixture, elementwise over x."""
    xa = np.asarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] xf = np.ascontiguousarray(xa.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.ascontiguousarray(locs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(xf.shape[0])
    cdef Py_ssize_t i, k, n = xf.shape[0], K = w.shape[0]
    cdef double t, lf, m, acc
    with nogil:
        for i in range(n):
            m = -INFINITY
            for k in range(K):
                t = (xf[i] - mu[k]) / sc[k]
                lf = -fabs(t) - 2.0 * log1p(exp(-fabs(t))) - log(sc[k]) + log(w[k])
                if lf > m:
                    m = lf
            acc = 0.0
            for k in range(K):
                t = (xf[i] - mu[k]) / sc[k]
                lf = -fabs(t) - 2.0 * log1p(exp(-fabs(t))) - log(sc[k]) + log(w[k])
                acc += exp(lf - m)
            out[i] = m + log(acc)
    return out.reshape(xa.shape)


cdef inline double _layer_fwd(double x, double[:] w, double[:] mu, double[:] sc,
                              Py_ssize_t K, double eps) nogil:
    cdef double u = 0.0
    cdef Py_ssize_t k
    for k in range(K):
        u += w[k] * _sigmoid((x - mu[k]) / sc[k])
    if u < eps:
        u = eps
    elif u > 1.0 - eps:
        u = 1.0 - eps
    return _ppnd16(u)


def gf_invert_layer(z, weights, locs, scales, clamp_eps, bisections=64):
    """Invert x -> probit(clamp(logistic_mixture_cdf(x))) for each target z."""
    za = np.asarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] zf = np.ascontiguousarray(za.ravel())
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu = np.ascontiguousarray(locs, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] sc = np.ascontiguousarray(scales, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(zf.shape[0])
    cdef Py_ssize_t i, it, n = zf.shape[0], K = w.shape[0]
    cdef int nbis = bisections
    cdef double eps = clamp_eps
    cdef double lo0, hi0, lo, hi, mid, span, target
    cdef bint failed = False
    cdef double[:] wv = w, muv = mu, scv = sc
    span = 60.0 * np.max(scales)
    lo0 = np.min(locs) - span
    hi0 = np.max(locs) + span
    with nogil:
        for i in range(n):
            if failed:
                break
            target = zf[i]
            lo = lo0
            hi = hi0
            it = 0
            while _layer_fwd(lo, wv, muv, scv, K, eps) > target:
                lo = lo * 2.0 - hi
                if lo < -1e6:
                    lo = -1e6
                    if _layer_fwd(lo, wv, muv, scv, K, eps) > target:
                        failed = True
                    break
                it += 1
                if it > 64:
                    failed = True
                    break
            it = 0
            while not failed and _layer_fwd(hi, wv, muv, scv, K, eps) < target:
                hi = hi * 2.0 - lo
                if hi > 1e6:
                    hi = 1e6
                    if _layer_fwd(hi, wv, muv, scv, K, eps) < target:
                        failed = True
                    break
                it += 1
                if it > 64:
                    failed = True
                    break
            if failed:
                break
            for it in range(nbis):
                mid = 0.5 * (lo + hi)
                if _layer_fwd(mid, wv, muv, scv, K, eps) < target:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * (1.0 + fabs(lo)):
                    break
            out[i] = 0.5 * (lo + hi)
    if failed:
        raise ValueError("inversion bracket failure")
    return out.reshape(za.shape)
