"""Finite categorical distributions over a dense token vocabulary 0..n-1.

A ``TokenDist`` is a plain 1-D float64 numpy array whose entries are
non-negative and sum to one.  Helpers here never mutate their inputs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

NORM_TOL = 1e-9
RESIDUAL_TOL = 1e-12


class DistributionError(ValueError):
    """Raised for vectors that cannot be a token distribution."""


class DimensionError(ValueError):
    pass


class DegenerateResidualError(DistributionError):
    """The positive part of ``p - q`` carries (numerically) no mass."""


def make_dist(weights: Sequence[float] | np.ndarray) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size < 2:
        raise DistributionError(f"need a 1-D vector with at least 2 entries, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise DistributionError("weights must be finite")
    if np.any(w < 0):
        raise DistributionError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise DistributionError("weights must have positive mass")
    return w / total


def check_dist(p: np.ndarray, tol: float = NORM_TOL) -> np.ndarray:
    """Validate ``p`` as a TokenDist and return it as a float64 array."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise DistributionError(f"need a 1-D vector with at least 2 entries, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise DistributionError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > tol:
        raise DistributionError(f"probabilities sum to {p.sum()!r}, not 1")
    return p


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"vocabulary mismatch: {p.shape} vs {q.shape}")
    return p, q


def overlap(p, q) -> float:
    """Probability that a draft from ``q`` is accepted against ``p``: sum of minima."""
    p, q = _pair(p, q)
    return float(np.minimum(p, q).sum())


def tv(p, q) -> float:
    return 1.0 - overlap(p, q)


def tv_l1(p, q) -> float:
    """Total variation as half the L1 distance (independent of :func:`tv`)."""
    p, q = _pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


def residual_plus(p, q) -> np.ndarray:
    """Normalized positive part of ``p - q``."""
    p, q = _pair(p, q)
    pos = np.maximum(p - q, 0.0)
    mass = pos.sum()
    if mass < RESIDUAL_TOL:
        raise DegenerateResidualError(f"residual mass {mass:.3e} below {RESIDUAL_TOL}")
    return pos / mass


def sample(p, rng: np.random.Generator) -> int:
    """Inverse-CDF draw of one token index."""
    p = np.asarray(p, dtype=np.float64)
    cdf = np.cumsum(p)
    u = rng.random() * cdf[-1]
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= p.size:
        # u rounded up onto the total mass
        idx = int(np.flatnonzero(p > 0)[-1])
    return idx


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def point_mass(n: int, i: int) -> np.ndarray:
    out = np.zeros(n)
    out[i] = 1.0
    return out


def format_dist(p) -> str:
    """One distribution as a line of comma-separated decimals (round-trip exact)."""
    return ",".join(repr(float(x)) for x in np.asarray(p, dtype=np.float64))


def parse_dist(line: str) -> np.ndarray:
    vals = [float(tok) for tok in line.strip().split(",") if tok.strip()]
    return check_dist(np.array(vals))
