"""Synthetic univariate mixture datasets: samplers plus exact pdf/cdf.

Two families:

* a uniform+Gaussian mixture sharing one center (`UnimodalSpec`), giving a
  plateau with sharp edges and a narrow bell on top;
* an equally weighted bank of such mixtures at distinct centers
  (`MultimodalSpec`).

Sampling is ancestral (latent component first, then the component draw) and
every Gaussian draw goes through the shared high-precision probit applied to
uniforms, so a (spec, seed, draw-count sequence) triple pins the stream
bit-for-bit.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import probit
from .rng import make_rng

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class UnimodalSpec:
    """Mixture p*Uniform(mu-r*sigma, mu+r*sigma) + (1-p)*Gaussian(mu, sigma^2)."""

    p: float = 0.75
    mu: float = 5.0
    sigma: float = 0.1
    r: float = 5.0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.sigma <= 0.0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.r <= 0.0:
            raise ValueError(f"r must be positive, got {self.r}")

    @property
    def half_width(self):
        return self.r * self.sigma

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.mu - self.half_width, self.mu + self.half_width
        unif = np.where((x >= lo) & (x <= hi), 1.0 / (2.0 * self.half_width), 0.0)
        t = (x - self.mu) / self.sigma
        gauss = np.exp(-0.5 * t * t) / (self.sigma * math.sqrt(2.0 * math.pi))
        out = self.p * unif + (1.0 - self.p) * gauss
        return float(out) if out.ndim == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.mu - self.half_width, self.mu + self.half_width
        unif = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        gauss = _norm_cdf((x - self.mu) / self.sigma)
        out = self.p * unif + (1.0 - self.p) * gauss
        return float(out) if out.ndim == 0 else out

    def support(self):
        """Interval holding all but ~1e-9 of the mass."""
        pad = max(self.half_width, 6.0 * self.sigma)
        return (self.mu - pad, self.mu + pad)

    def to_dict(self):
        return {"kind": "unimodal", "p": self.p, "mu": self.mu,
                "sigma": self.sigma, "r": self.r}


@dataclass(frozen=True)
class MultimodalSpec:
    """Equal-weight bank of k unimodal mixtures centered at `mus`.

    Defaults follow the convention mus[j] = 10*(j+1).
    """

    k: int = 8
    p: float = 0.5
    sigma: float = 2.0
    r: float = 1.5
    mus: tuple = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.sigma <= 0.0 or self.r <= 0.0:
            raise ValueError("sigma and r must be positive")
        mus = self.mus
        if mus is None:
            mus = tuple(10.0 * (j + 1) for j in range(self.k))
        else:
            mus = tuple(float(m) for m in mus)
        if len(mus) != self.k:
            raise ValueError(f"need {self.k} cluster means, got {len(mus)}")
        object.__setattr__(self, "mus", mus)

    def _cluster(self, j):
        return UnimodalSpec(p=self.p, mu=self.mus[j], sigma=self.sigma, r=self.r)

    def pdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = sum(self._cluster(j).pdf(x) for j in range(self.k)) / self.k
        return float(out) if np.ndim(out) == 0 else out

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        out = sum(self._cluster(j).cdf(x) for j in range(self.k)) / self.k
        return float(out) if np.ndim(out) == 0 else out

    def support(self):
        pad = max(self.r * self.sigma, 6.0 * self.sigma)
        return (min(self.mus) - pad, max(self.mus) + pad)

    def to_dict(self):
        return {"kind": "multimodal", "k": self.k, "p": self.p,
                "sigma": self.sigma, "r": self.r, "mus": list(self.mus)}


def _norm_cdf(t):
    t = np.asarray(t, dtype=np.float64)
    # math.erf is a correctly rounded libm call; vectorize it (oracle-grade use)
    erf = np.vectorize(math.erf, otypes=[np.float64])
    return 0.5 * (1.0 + erf(t / _SQRT2))


def spec_from_dict(doc):
    """Build a spec from its JSON dict form (see to_dict)."""
    kind = doc.get("kind")
    fields = {k: v for k, v in doc.items() if k != "kind"}
    if kind == "unimodal":
        return UnimodalSpec(**fields)
    if kind == "multimodal":
        if "mus" in fields:
            fields["mus"] = tuple(fields["mus"])
        return MultimodalSpec(**fields)
    raise ValueError(f"unknown dataset kind {kind!r}")


def load_spec(name_or_path):
    """Resolve a dataset reference: 'unimodal', 'multimodal', or a JSON file path."""
    if name_or_path == "unimodal":
        return UnimodalSpec()
    if name_or_path == "multimodal":
        return MultimodalSpec()
    with open(name_or_path) as fh:
        return spec_from_dict(json.load(fh))


class DatasetHandle:
    """A spec plus a private Philox stream; not safe to share across workers."""

    def __init__(self, spec, seed):
        self.spec = spec
        self.seed = int(seed)
        self._rng = make_rng(self.seed)

    def sample(self, n):
        """Draw n i.i.d. points, advancing the handle's stream."""
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.empty(0)
        spec = self.spec
        if isinstance(spec, UnimodalSpec):
            u_class = self._rng.random(n)
            u_value = self._rng.random(n)
            return _sample_cluster(u_class, u_value, spec.p, spec.mu,
                                   spec.sigma, spec.half_width)
        u_cluster = self._rng.random(n)
        u_class = self._rng.random(n)
        u_value = self._rng.random(n)
        idx = np.minimum((u_cluster * spec.k).astype(np.int64), spec.k - 1)
        mus = np.asarray(spec.mus)[idx]
        return _sample_cluster(u_class, u_value, spec.p, mus,
                               spec.sigma, spec.r * spec.sigma)


def _sample_cluster(u_class, u_value, p, mu, sigma, half_width):
    is_uniform = u_class < p
    uniform_draw = mu - half_width + 2.0 * half_width * u_value
    # rng.random() can emit exactly 0.0; floor it so probit stays finite
    gauss_draw = mu + sigma * probit(np.maximum(u_value, 1e-300))
    return np.where(is_uniform, uniform_draw, gauss_draw)
