"""densbench: WGAN vs Gaussianization-flow density estimation on synthetic univariate mixtures."""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND
