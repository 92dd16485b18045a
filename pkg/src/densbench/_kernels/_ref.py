"""Pure-numpy reference implementations of the numeric kernels.

Every function here has a signature-identical compiled twin in _fastmath.pyx;
densbench._kernels picks one pair at import time. The reference path is the
source of truth: the compiled path must agree with it (see tests/test_kernels.py
and benchmarks/bench_kernels.py).
"""

import numpy as np

SQRT_2PI = 2.5066282746310005024157652848110452530069867406099

# Wichura's PPND16 rational approximations (Algorithm AS 241). Coefficients are
# highest-degree last so Horner evaluation reads top-down.
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2,
      5.3941960214247511077e3, 2.1213794301586595867e4, 3.9307895800092710610e4,
      2.8729085735721942674e4, 5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0,
      6.89767334985100004550e-1, 1.48103976427480074590e-1, 1.51986665636164571966e-2,
      5.47593808499534494600e-4, 1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1,
      1.48753612908506148525e-2, 7.86869131145613259100e-4, 1.84631831751005468180e-5,
      1.42151175831644588870e-7, 2.04426310338993978564e-15)


def _horner(x, coefs):
    acc = np.full_like(x, coefs[-1])
    for c in coefs[-2::-1]:
        acc = acc * x + c
    return acc


def probit(p):
    """Inverse standard-normal CDF via AS 241 (PPND16), elementwise.

    Double-precision accurate on (0, 1); returns -inf/+inf at 0/1 and NaN
    outside [0, 1].
    """
    p = np.asarray(p, dtype=np.float64)
    scalar = p.ndim == 0
    p = np.atleast_1d(p)
    out = np.full(p.shape, np.nan)
    out[p == 0.0] = -np.inf
    out[p == 1.0] = np.inf

    q = p - 0.5
    central = np.abs(q) <= 0.425
    if np.any(central):
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _horner(r, _A) / _horner(r, _B)

    tail = (~central) & (p > 0.0) & (p < 1.0)
    if np.any(tail):
        pt = p[tail]
        qt = q[tail]
        r = np.where(qt < 0.0, pt, 1.0 - pt)
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.empty_like(r)
        if np.any(near):
            rn = r[near] - 1.6
            val[near] = _horner(rn, _C) / _horner(rn, _D)
        if np.any(~near):
            rf = r[~near] - 5.0
            val[~near] = _horner(rf, _E) / _horner(rf, _F)
        out[tail] = np.where(qt < 0.0, -val, val)

    return float(out[0]) if scalar else out


def w1_pooled(x_sorted, y_sorted):
    """Width-weighted CDF-difference integral over the pooled order statistics.

    Both inputs must be ascending. Returns sum_i |Fx(t_i) - Fy(t_i)| (t_{i+1}-t_i)
    over consecutive pooled points.
    """
    pooled = np.concatenate([x_sorted, y_sorted])
    pooled.sort(kind="mergesort")
    t = pooled[:-1]
    fx = np.searchsorted(x_sorted, t, side="right") / x_sorted.size
    fy = np.searchsorted(y_sorted, t, side="right") / y_sorted.size
    return float(np.sum(np.abs(fx - fy) * np.diff(pooled)))


def window_count_mean(samples_sorted, h):
    """Mean over sample points t of #{s : t-h <= s <= t+h} (the point counts itself)."""
    hi = np.searchsorted(samples_sorted, samples_sorted + h, side="right")
    lo = np.searchsorted(samples_sorted, samples_sorted - h, side="left")
    return float(np.mean(hi - lo))


def kde_gauss(samples, h, grid):
    """Gaussian-kernel density estimate of `samples` at `grid` points."""
    samples = np.asarray(samples, dtype=np.float64)
    grid = np.asarray(grid, dtype=np.float64)
    out = np.empty(grid.size)
    norm = 1.0 / (samples.size * h * SQRT_2PI)
    # chunked so the (chunk, n) temporary stays ~50 MB for n = 1e5
    step = max(1, int(6_000_000 // max(samples.size, 1)))
    for start in range(0, grid.size, step):
        t = (grid[start:start + step, None] - samples[None, :]) / h
        out[start:start + step] = np.exp(-0.5 * t * t).sum(axis=1) * norm
    return out


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logistic_mixture_cdf(x, weights, locs, scales):
    """CDF of a K-component logistic mixture, elementwise over x.

    `weights` must already be normalized to sum to 1.
    """
    x = np.asarray(x, dtype=np.float64)
    t = (x[..., None] - locs) / scales
    return _sigmoid(t) @ weights


def logistic_mixture_logpdf(x, weights, locs, scales):
    """Log-density of a K-component logistic mixture, elementwise over x."""
    x = np.asarray(x, dtype=np.float64)
    t = (x[..., None] - locs) / scales
    # log f_k = -t - 2*softplus(-t) - log s, evaluated stably
    log_fk = -np.abs(t) - 2.0 * np.log1p(np.exp(-np.abs(t))) - np.log(scales)
    log_wfk = np.log(weights) + log_fk
    m = np.max(log_wfk, axis=-1)
    return m + np.log(np.sum(np.exp(log_wfk - m[..., None]), axis=-1))


def gf_invert_layer(z, weights, locs, scales, clamp_eps, bisections=64):
    """Invert x -> probit(clamp(logistic_mixture_cdf(x))) for each target z.

    Bracketed bisection with a fixed iteration count; raises ValueError when a
    bracket cannot be established inside [-1e6, 1e6] (e.g. z beyond the clamp
    saturation of the layer).
    """
    z = np.asarray(z, dtype=np.float64)
    shape = z.shape
    z = z.ravel()

    def fwd(x):
        u = logistic_mixture_cdf(x, weights, locs, scales)
        return probit(np.clip(u, clamp_eps, 1.0 - clamp_eps))

    span = 60.0 * float(np.max(scales))
    lo = np.full(z.shape, float(np.min(locs)) - span)
    hi = np.full(z.shape, float(np.max(locs)) + span)
    for _ in range(64):
        bad_lo = fwd(lo) > z
        bad_hi = fwd(hi) < z
        if not (np.any(bad_lo) or np.any(bad_hi)):
            break
        lo[bad_lo] = np.maximum(lo[bad_lo] * 2.0 - hi[bad_lo], -1e6)
        hi[bad_hi] = np.minimum(hi[bad_hi] * 2.0 - lo[bad_hi], 1e6)
    if np.any(fwd(lo) > z) or np.any(fwd(hi) < z):
        raise ValueError("inversion bracket failure")

    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        below = fwd(mid) < z
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return (0.5 * (lo + hi)).reshape(shape)
