"""Watermarked speculative sampling: reweighting, generation, detection and exact checks."""

from .dist import entropy, make_dist, overlap, residual_plus, sample, tv
from .gen import CodeHistory, Mode, TableModel, apply_kernel, build_kernel, context_code
from .reweight import Scheme, delta_gumbel_reweight, derive_code, exact_mean_gamma, gamma_reweight

__version__ = "0.1.0"

__all__ = [
    "CodeHistory",
    "Mode",
    "Scheme",
    "TableModel",
    "apply_kernel",
    "build_kernel",
    "context_code",
    "delta_gumbel_reweight",
    "derive_code",
    "entropy",
    "exact_mean_gamma",
    "gamma_reweight",
    "make_dist",
    "overlap",
    "residual_plus",
    "sample",
    "tv",
]
