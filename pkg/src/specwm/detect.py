"""U-score watermark detection with a Chernoff upper bound on the p-value.

Under the null (token independent of its code) the U score is uniform on
[0, 1] for DeltaGumbel and uniform on {(k + 1/2)/n} for Gamma; both have
mean 1/2, and the bound uses their exact moment generating functions.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .gen import DEFAULT_WINDOW, context_code
from .reweight import ConfigurationError, GumbelCode, PermutationCode, Scheme, WatermarkCode, derive_code

LAMBDA_MAX = 1e6
GOLDEN_RTOL = 1e-10
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class ScoreRangeError(ValueError):
    pass


@dataclass(frozen=True)
class ScoreRecord:
    token: int
    code: WatermarkCode
    context: bytes
    u: float


@dataclass(frozen=True)
class DetectionReport:
    n_scored: int
    n_skipped: int
    total_u: float
    log_pvalue: float
    anlppt: float

    def to_dict(self) -> dict:
        return asdict(self)


def u_score(token: int, code: WatermarkCode, scheme: Scheme | str, n: int) -> float:
    scheme = Scheme.parse(scheme)
    if not 0 <= token < n:
        raise ValueError(f"token {token} outside vocabulary of size {n}")
    if scheme is Scheme.DELTA_GUMBEL:
        if not isinstance(code, GumbelCode):
            raise ConfigurationError("DeltaGumbel U score needs a Gumbel code")
        return math.exp(-math.exp(-float(code.values[token])))
    if not isinstance(code, PermutationCode):
        raise ConfigurationError("Gamma U score needs a permutation code")
    return (int(code.rank[token]) + 0.5) / n


# log((e^x - 1) / x) and its derivative, stable on [0, inf)
def _log_expm1_over(x: float) -> float:
    if x == 0.0:
        return 0.0
    if x < 1e-4:
        return x / 2.0 + x * x / 24.0
    if x > 30.0:
        return x + math.log1p(-math.exp(-x)) - math.log(x)
    return math.log(math.expm1(x) / x)


def _d_log_expm1_over(x: float) -> float:
    if x < 1e-4:
        return 0.5 + x / 12.0
    return -1.0 / math.expm1(-x) - 1.0 / x


# log(sinh(x) / x) and its derivative
def _log_sinhc(x: float) -> float:
    if x < 1e-4:
        return x * x / 6.0
    if x > 20.0:
        return x + math.log1p(-math.exp(-2.0 * x)) - math.log(2.0 * x)
    return math.log(math.sinh(x) / x)


def _d_log_sinhc(x: float) -> float:
    if x < 1e-4:
        return x / 3.0
    return 1.0 / math.tanh(x) - 1.0 / x


def log_mgf(scheme: Scheme | str, lam: float, n: int) -> float:
    """log E[exp(lam * U)] for the null U score."""
    scheme = Scheme.parse(scheme)
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if scheme is Scheme.DELTA_GUMBEL:
        return _log_expm1_over(lam)
    # -log(2n sinh(lam/2n)) + log(e^lam - 1), split so each term is O(1) near 0
    return _log_expm1_over(lam) - _log_sinhc(lam / (2.0 * n))


def _d_log_mgf(scheme: Scheme, lam: float, n: int) -> float:
    if scheme is Scheme.DELTA_GUMBEL:
        return _d_log_expm1_over(lam)
    return _d_log_expm1_over(lam) - _d_log_sinhc(lam / (2.0 * n)) / (2.0 * n)


def chernoff_log_pvalue(total_score: float, count: int, scheme: Scheme | str, n: int) -> tuple[float, float]:
    """Minimize ``count*log_mgf(lam) - lam*total_score`` over ``lam in [0, LAMBDA_MAX]``.

    Returns ``(log_p, lam_star)`` with ``log_p <= 0``.
    """
    scheme = Scheme.parse(scheme)
    if count < 1:
        raise ScoreRangeError("count must be >= 1")
    if not 0.0 <= total_score <= count:
        raise ScoreRangeError(f"total score {total_score} outside [0, {count}]")

    def f(lam: float) -> float:
        return count * log_mgf(scheme, lam, n) - lam * total_score

    def df(lam: float) -> float:
        return count * _d_log_mgf(scheme, lam, n) - total_score

    # the null mean is 1/2, so the slope at 0 is count/2 - total_score
    if total_score <= count / 2.0:
        return 0.0, 0.0

    lo, hi = 0.0, 1.0
    while df(hi) < 0.0 and hi < LAMBDA_MAX:
        lo, hi = hi, min(2.0 * hi, LAMBDA_MAX)
    if df(hi) < 0.0:
        lam = hi
    else:
        a, b = lo, hi
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc, fd = f(c), f(d)
        while b - a > GOLDEN_RTOL * max(abs(a + b) / 2.0, 1e-300):
            if fc < fd:
                b, d, fd = d, c, fc
                c = b - _INVPHI * (b - a)
                fc = f(c)
            else:
                a, c, fc = c, d, fd
                d = a + _INVPHI * (b - a)
                fd = f(d)
        lam = (a + b) / 2.0
    return min(f(lam), 0.0), lam


def score_records(
    tokens: Sequence[int],
    prompt: Sequence[int],
    key: bytes,
    scheme: Scheme | str,
    m: int = DEFAULT_WINDOW,
    n: int | None = None,
    salt: bytes = b"",
) -> tuple[list[ScoreRecord], int]:
    """Per-position U scores, each context code counted once.  Returns (records, skipped)."""
    scheme = Scheme.parse(scheme)
    if n is None:
        raise ValueError("vocabulary size is required")
    ctx = list(prompt)
    seen: set[bytes] = set()
    records, skipped = [], 0
    for tok in tokens:
        c = context_code(ctx, m, salt)
        if c in seen:
            skipped += 1
        else:
            seen.add(c)
            code = derive_code(c, key, scheme, n)
            records.append(ScoreRecord(int(tok), code, c, u_score(int(tok), code, scheme, n)))
        ctx.append(int(tok))
    return records, skipped


def score_sequence(
    tokens: Sequence[int],
    prompt: Sequence[int],
    key: bytes,
    scheme: Scheme | str,
    m: int = DEFAULT_WINDOW,
    n: int | None = None,
    salt: bytes = b"",
) -> DetectionReport:
    if len(tokens) == 0:
        raise ValueError("cannot score an empty sequence")
    records, skipped = score_records(tokens, prompt, key, scheme, m, n, salt)
    total = float(math.fsum(r.u for r in records))
    k = len(records)
    log_p, _ = chernoff_log_pvalue(total, k, scheme, n)
    return DetectionReport(
        n_scored=k,
        n_skipped=skipped,
        total_u=total,
        log_pvalue=log_p,
        anlppt=-log_p / k if k else 0.0,
    )


def null_u_samples(scheme: Scheme | str, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """U scores of tokens drawn independently of their codes."""
    scheme = Scheme.parse(scheme)
    if scheme is Scheme.DELTA_GUMBEL:
        g = rng.gumbel(size=size)
        return np.exp(-np.exp(-g))
    return (rng.integers(0, n, size=size) + 0.5) / n
