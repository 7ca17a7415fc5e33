"""Watermark codes and the two unbiased reweighting functions.

DeltaGumbel: the code is a vector of i.i.d. standard Gumbel variables and the
reweighted distribution is the point mass at ``argmax(log p + g)``.

Gamma: the code is a uniformly random bijection ``rank: tokens -> {0..n-1}``.
With ``A(i) = max(2 * P(rank <= i) - 1, 0)`` the reweighted probability of
token ``t`` is ``A(rank[t]) - A(rank[t] - 1)``.
"""

from __future__ import annotations

import enum
import hashlib
import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

UNIFORM_CLAMP = 1e-12
MAX_ENUM_N = 8


class Scheme(str, enum.Enum):
    DELTA_GUMBEL = "gumbel"
    GAMMA = "gamma"

    @classmethod
    def parse(cls, value: "str | Scheme") -> "Scheme":
        if isinstance(value, Scheme):
            return value
        aliases = {"gumbel": cls.DELTA_GUMBEL, "deltagumbel": cls.DELTA_GUMBEL, "gamma": cls.GAMMA}
        try:
            return aliases[value.strip().lower().replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown scheme {value!r}") from None


class InvalidCodeError(ValueError):
    pass


class ConfigurationError(ValueError):
    """Scheme, code and mode arguments do not fit together."""


class EnumerationTooLargeError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GumbelCode:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1 or not np.all(np.isfinite(v)):
            raise InvalidCodeError("Gumbel code must be a finite 1-D vector")
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class PermutationCode:
    rank: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rank)
        if r.ndim != 1 or not np.array_equal(np.sort(r), np.arange(r.size)):
            raise InvalidCodeError(f"rank vector is not a bijection onto 0..{r.size - 1}: {r.tolist()}")
        object.__setattr__(self, "rank", r.astype(np.int64))

    def __len__(self) -> int:
        return self.rank.size


WatermarkCode = GumbelCode | PermutationCode


def _prf_seed(context: bytes, key: bytes, scheme: Scheme) -> int:
    if not key:
        raise ValueError("watermark key must be non-empty")
    if len(key) > 64:
        key = hashlib.blake2b(key, digest_size=64).digest()
    h = hashlib.blake2b(key=key, digest_size=16, person=b"specwm/code")
    h.update(bytes(context))
    h.update(b"\x00" + scheme.value.encode())
    return int.from_bytes(h.digest(), "little")


def derive_code(context: bytes, key: bytes, scheme: Scheme | str, n: int) -> WatermarkCode:
    """Pseudorandom watermark code for one context.

    A keyed BLAKE2b digest of the context seeds a Philox counter generator;
    the output depends only on ``(context, key, scheme, n)``.
    """
    scheme = Scheme.parse(scheme)
    if n < 2:
        raise ValueError("vocabulary size must be at least 2")
    gen = np.random.Generator(np.random.Philox(key=_prf_seed(context, key, scheme)))
    if scheme is Scheme.DELTA_GUMBEL:
        u = np.clip(gen.random(n), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
        return GumbelCode(-np.log(-np.log(u)))
    return PermutationCode(gen.permutation(n))


def random_code(scheme: Scheme | str, n: int, rng: np.random.Generator) -> WatermarkCode:
    """A code drawn directly from the code distribution (no PRF)."""
    if Scheme.parse(scheme) is Scheme.DELTA_GUMBEL:
        return GumbelCode(rng.gumbel(size=n))
    return PermutationCode(rng.permutation(n))


def delta_gumbel_reweight(p, code: GumbelCode) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    g = code.values
    if g.size != p.size:
        raise InvalidCodeError(f"code length {g.size} != vocabulary size {p.size}")
    scores = np.full(p.size, -np.inf)
    pos = p > 0
    scores[pos] = np.log(p[pos]) + g[pos]
    out = np.zeros(p.size)
    out[int(np.argmax(scores))] = 1.0
    return out


def gamma_reweight_batch(p, ranks: np.ndarray) -> np.ndarray:
    """Gamma reweight of ``p`` under each row of ``ranks`` (shape ``(m, n)``)."""
    p = np.asarray(p, dtype=np.float64)
    ranks = np.atleast_2d(ranks)
    order = np.argsort(ranks, axis=1)  # order[:, k] = token holding rank k
    cum = np.cumsum(p[order], axis=1)
    a = np.maximum(2.0 * cum - 1.0, 0.0)
    step = np.diff(a, axis=1, prepend=0.0)
    out = np.empty_like(step)
    np.put_along_axis(out, order, step, axis=1)
    return out


def gamma_reweight(p, code: PermutationCode) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if not isinstance(code, PermutationCode):
        code = PermutationCode(code)
    if code.rank.size != p.size:
        raise InvalidCodeError(f"code length {code.rank.size} != vocabulary size {p.size}")
    return gamma_reweight_batch(p, code.rank[None, :])[0]


def reweight(scheme: Scheme | str, p, code: WatermarkCode) -> np.ndarray:
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.DELTA_GUMBEL:
        if not isinstance(code, GumbelCode):
            raise ConfigurationError("DeltaGumbel reweight needs a Gumbel code")
        return delta_gumbel_reweight(p, code)
    if not isinstance(code, PermutationCode):
        raise ConfigurationError("Gamma reweight needs a permutation code")
    return gamma_reweight(p, code)


@lru_cache(maxsize=None)
def _all_ranks(n: int) -> np.ndarray:
    ranks = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    ranks.setflags(write=False)
    return ranks


def all_permutations(n: int) -> np.ndarray:
    """Every rank vector of length ``n`` in lexicographic order, shape ``(n!, n)``."""
    if n > MAX_ENUM_N:
        raise EnumerationTooLargeError(f"n={n} exceeds enumeration limit {MAX_ENUM_N}")
    return _all_ranks(n)


def exact_mean_gamma(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    return gamma_reweight_batch(p, all_permutations(p.size)).mean(axis=0)


def mc_mean(scheme: Scheme | str, p, samples: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Monte-Carlo mean and per-coordinate standard error of the reweighted distribution."""
    scheme = Scheme.parse(scheme)
    if samples < 1000:
        raise ValueError("mc_mean needs at least 1000 samples")
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    if scheme is Scheme.DELTA_GUMBEL:
        logp = np.full(n, -np.inf)
        logp[p > 0] = np.log(p[p > 0])
        winners = np.argmax(logp + rng.gumbel(size=(samples, n)), axis=1)
        draws = np.zeros((samples, n))
        draws[np.arange(samples), winners] = 1.0
    else:
        ranks = np.argsort(rng.random((samples, n)), axis=1)
        draws = gamma_reweight_batch(p, ranks)
    mean = draws.mean(axis=0)
    stderr = draws.std(axis=0, ddof=1) / np.sqrt(samples)
    return mean, stderr
