import numpy as np
import pytest

from densbench.rng import make_rng


@pytest.fixture
def rng():
    return make_rng(20240817)


def quantile_anchored_flow(depth, components, seed):
    """Random flow stack anchored on standard-normal quantiles (the shape real
    inits and trained stacks have): layer maps stay near-identity, so
    intermediates never leave the CDF's representable range."""
    from scipy import stats

    from densbench.gaussflow import GaussFlowModel, GaussLayer

    rng = make_rng(seed)
    base = np.asarray([stats.norm.ppf((k + 0.5) / components)
                       for k in range(components)])
    layers = []
    for _ in range(depth):
        locs = np.sort(base + rng.normal(0, 0.05, components))
        gaps = np.diff(locs).mean() if components > 1 else 1.0
        layers.append(GaussLayer(rng.normal(0, 0.25, components), locs,
                                 np.log(0.6 * gaps) + rng.normal(0, 0.1, components)))
    return GaussFlowModel(layers)


def grad_rel_err(analytic, numeric, floor=1e-4):
    """Relative disagreement with a floor so near-zero coordinates (where
    central differences are all cancellation) do not dominate."""
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def central_diff(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)
