"""Numeric kernel dispatch: compiled extension if built, numpy fallback otherwise.

Set DENSBENCH_PURE_PYTHON=1 to force the fallback (used by the benchmark and
the backend-equivalence tests). The active backend name is in BACKEND.
"""

import os

from . import _ref

_names = ("probit", "w1_pooled", "window_count_mean", "kde_gauss",
          "logistic_mixture_cdf", "logistic_mixture_logpdf", "gf_invert_layer")

if os.environ.get("DENSBENCH_PURE_PYTHON", "0") not in ("", "0"):
    _impl = _ref
    BACKEND = "python"
else:
    try:
        from . import _fastmath as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _ref
        BACKEND = "python"

probit = _impl.probit
w1_pooled = _impl.w1_pooled
window_count_mean = _impl.window_count_mean
kde_gauss = _impl.kde_gauss
logistic_mixture_cdf = _impl.logistic_mixture_cdf
logistic_mixture_logpdf = _impl.logistic_mixture_logpdf
gf_invert_layer = _impl.gf_invert_layer

SQRT_2PI = _ref.SQRT_2PI


def available_backends():
    """Name -> module for every importable backend (for benchmarks/tests)."""
    found = {"python": _ref}
    try:
        from . import _fastmath
        found["compiled"] = _fastmath
    except ImportError:
        pass
    return found
