"""Context codes, speculative transition kernels and the generation algorithms.

Kernels are stored column-stochastic: ``k[j, i] = A(j | i)`` is the probability
of emitting ``j`` when the draft token was ``i``, so the generation
distribution is ``k @ draft_dist``.
"""

from __future__ import annotations

import enum
import hashlib
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .dist import RESIDUAL_TOL, DimensionError, residual_plus, sample
from .reweight import ConfigurationError, Scheme, WatermarkCode, derive_code, reweight

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 5
DIGEST_SIZE = 16


class InternalInvariantError(RuntimeError):
    """A draft token had zero probability under its own proposal distribution."""


class Mode(str, enum.Enum):
    VANILLA = "vanilla"
    MWS = "mws"
    MSE = "mse"


# -- context codes -----------------------------------------------------------


def context_code(tokens: Sequence[int], m: int = DEFAULT_WINDOW, salt: bytes = b"") -> bytes:
    """16-byte digest of the last ``m`` tokens and ``salt``."""
    if m < 1:
        raise ValueError("window length must be >= 1")
    window = list(tokens)[-m:]
    h = hashlib.blake2b(digest_size=DIGEST_SIZE, person=b"specwm/context")
    h.update(len(salt).to_bytes(4, "little") + bytes(salt))
    h.update(np.asarray(window, dtype="<i8").tobytes())
    return h.digest()


class CodeHistory:
    """Insertion-ordered set of context codes already used for watermarking."""

    def __init__(self, codes: Iterable[bytes] = ()):
        self._seen: dict[bytes, None] = dict.fromkeys(codes)

    def __contains__(self, code: bytes) -> bool:
        return code in self._seen

    def __len__(self) -> int:
        return len(self._seen)

    def __iter__(self) -> Iterator[bytes]:
        return iter(self._seen)

    def __eq__(self, other) -> bool:
        return isinstance(other, CodeHistory) and list(self) == list(other)

    def add(self, code: bytes) -> None:
        self._seen.setdefault(code, None)

    def copy(self) -> "CodeHistory":
        return CodeHistory(self._seen)

    def dumps(self) -> str:
        return "".join(c.hex() + "\n" for c in self._seen)

    @classmethod
    def loads(cls, text: str) -> "CodeHistory":
        return cls(bytes.fromhex(line) for line in text.split() if line)


# -- models ------------------------------------------------------------------


class LanguageModel(ABC):
    n: int

    @abstractmethod
    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        """Next-token distribution given the full token context."""


class TableModel(LanguageModel):
    """Order-``order`` Markov model stored as an ``(n**order, n)`` table.

    Row index is the last ``order`` tokens read as a base-``n`` number (so rows
    are in lexicographic context order).  Short contexts are left-padded with
    token 0.
    """

    def __init__(self, table: np.ndarray, order: int):
        table = np.asarray(table, dtype=np.float64)
        n = table.shape[1]
        if table.shape != (n**order, n):
            raise DimensionError(f"table shape {table.shape} does not match n={n}, order={order}")
        self.table = table
        self.n = n
        self.order = order
        self._weights = n ** np.arange(order - 1, -1, -1)

    def row_index(self, context: Sequence[int]) -> int:
        if self.order == 0:
            return 0
        tail = list(context)[-self.order:]
        tail = [0] * (self.order - len(tail)) + tail
        return int(np.dot(self._weights, tail))

    def next_dist(self, context: Sequence[int]) -> np.ndarray:
        return self.table[self.row_index(context)]

    def dumps(self) -> str:
        from .dist import format_dist

        lines = [f"{self.n} {self.order}"]
        lines.extend(format_dist(row) for row in self.table)
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "TableModel":
        from .dist import parse_dist

        lines = [ln for ln in text.splitlines() if ln.strip()]
        n, order = (int(x) for x in lines[0].split())
        rows = [parse_dist(ln) for ln in lines[1:]]
        if len(rows) != n**order:
            raise DimensionError(f"expected {n**order} rows, found {len(rows)}")
        return cls(np.vstack(rows), order)

    @classmethod
    def load(cls, path) -> "TableModel":
        with open(path) as fh:
            return cls.loads(fh.read())

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


# -- kernels -----------------------------------------------------------------


def speculative_kernel(p, q) -> np.ndarray:
    """Accept draft ``i`` w.p. ``min(1, p_i/q_i)``, else resample from ``(p - q)_+``.

    Columns with ``q_i = 0`` are never reached by a draft; the ratio is taken
    as infinite there so the column is the identity.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"vocabulary mismatch: {p.shape} vs {q.shape}")
    n = p.size
    accept = np.ones(n)
    live = q > 0
    accept[live] = np.minimum(1.0, p[live] / q[live])
    reject = 1.0 - accept
    if not np.any(reject > 0) or np.maximum(p - q, 0.0).sum() < RESIDUAL_TOL:
        # no residual to resample from: rejected mass stays on the draft,
        # mirroring the generation-time fallback
        return np.eye(n)
    return np.diag(accept) + np.outer(residual_plus(p, q), reject)


def build_kernel(mode: Mode | str, p, q, code: WatermarkCode | None = None, scheme: Scheme | str | None = None) -> np.ndarray:
    mode = Mode(mode)
    if mode is Mode.VANILLA:
        return speculative_kernel(p, q)
    if code is None or scheme is None:
        raise ConfigurationError(f"mode {mode.value} needs a watermark code and scheme")
    if mode is Mode.MWS:
        return speculative_kernel(reweight(scheme, p, code), reweight(scheme, q, code))
    # MSE verifies against the original pair; only the draft is reweighted
    return speculative_kernel(p, q)


def apply_kernel(k: np.ndarray, draft_dist) -> np.ndarray:
    draft_dist = np.asarray(draft_dist, dtype=np.float64)
    if k.shape != (draft_dist.size, draft_dist.size):
        raise DimensionError(f"kernel {k.shape} vs distribution of size {draft_dist.size}")
    return k @ draft_dist


# -- generation --------------------------------------------------------------


@dataclass
class StepTrace:
    drafts: list[int] = field(default_factory=list)
    accepted_count: int = 0
    emitted: list[int] = field(default_factory=list)
    skipped_flags: list[bool] = field(default_factory=list)
    rejection_position: int | None = None
    residual_fallbacks: int = 0


def generate_basic(model: LanguageModel, prompt: Sequence[int], k_tokens: int, rng: np.random.Generator) -> list[int]:
    if k_tokens < 1:
        raise ValueError("k_tokens must be >= 1")
    ctx = list(prompt)
    out = []
    for _ in range(k_tokens):
        x = sample(model.next_dist(ctx), rng)
        out.append(x)
        ctx.append(x)
    return out


def generate_vuw(
    model: LanguageModel,
    prompt: Sequence[int],
    k_tokens: int,
    scheme: Scheme | str,
    key: bytes,
    cch: CodeHistory,
    m: int = DEFAULT_WINDOW,
    rng: np.random.Generator | None = None,
    salt: bytes = b"",
) -> tuple[list[int], CodeHistory]:
    """Vanilla unbiased watermarking: reweight with the context's code on first use only."""
    scheme = Scheme.parse(scheme)
    rng = rng if rng is not None else np.random.default_rng()
    cch = cch.copy()
    ctx = list(prompt)
    out = []
    for _ in range(k_tokens):
        c = context_code(ctx, m, salt)
        skipped = c in cch
        cch.add(c)
        p = model.next_dist(ctx)
        if not skipped:
            p = reweight(scheme, p, derive_code(c, key, scheme, model.n))
        x = sample(p, rng)
        out.append(x)
        ctx.append(x)
    return out, cch


def _verify(pp: list, qq: list, drafts: list[int], K: int, rng, on_verified, trace: StepTrace) -> list[int]:
    """Shared accept/reject loop; ``on_verified(t)`` runs before position ``t`` is decided."""
    out = []
    for t in range(K):
        on_verified(t)
        x = drafts[t]
        num, den = pp[t][x], qq[t][x]
        if den <= 0:
            raise InternalInvariantError(f"draft token {x} has zero proposal probability at position {t}")
        r = rng.random()
        if r < min(1.0, num / den):
            out.append(x)
            continue
        trace.rejection_position = t
        mass = np.maximum(pp[t] - qq[t], 0.0).sum()
        if mass < RESIDUAL_TOL:
            log.warning("degenerate residual (mass %.3e) at position %d; emitting draft", mass, t)
            trace.residual_fallbacks += 1
            out.append(x)
        else:
            out.append(sample(residual_plus(pp[t], qq[t]), rng))
        break
    trace.accepted_count = len(out) if trace.rejection_position is None else len(out) - 1
    return out


def generate_vsps(
    target: LanguageModel,
    draft: LanguageModel,
    prompt: Sequence[int],
    K: int,
    rng: np.random.Generator,
) -> tuple[list[int], StepTrace]:
    """One step of vanilla speculative sampling: between 1 and K+1 tokens."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if target.n != draft.n:
        raise DimensionError("target and draft vocabularies differ")
    ctx = list(prompt)
    drafts, qs = [], []
    for _ in range(K):
        q = draft.next_dist(ctx)
        x = sample(q, rng)
        qs.append(q)
        drafts.append(x)
        ctx.append(x)
    ps = [target.next_dist(list(prompt) + drafts[:t]) for t in range(K + 1)]
    trace = StepTrace(drafts=drafts, skipped_flags=[False] * (K + 1))
    out = _verify(ps, qs, drafts, K, rng, lambda t: None, trace)
    if trace.rejection_position is None:
        out.append(sample(ps[K], rng))
    trace.emitted = out
    return out, trace


def generate_two_reweight(
    target: LanguageModel,
    draft: LanguageModel,
    prompt: Sequence[int],
    K: int,
    mode: Mode | str,
    scheme: Scheme | str,
    key: bytes,
    cch: CodeHistory,
    m: int = DEFAULT_WINDOW,
    rng: np.random.Generator | None = None,
    salt: bytes = b"",
) -> tuple[list[int], CodeHistory, StepTrace]:
    """One step of watermarked speculative sampling in MWS or MSE mode.

    Drafts use a private copy of the history; only positions the verification
    loop reaches (accepted, rejected, bonus) are recorded in the returned one.
    """
    mode = Mode(mode)
    if mode is Mode.VANILLA:
        raise ConfigurationError("two-reweight generation needs mode MWS or MSE")
    if K < 1:
        raise ValueError("K must be >= 1")
    if target.n != draft.n:
        raise DimensionError("target and draft vocabularies differ")
    scheme = Scheme.parse(scheme)
    rng = rng if rng is not None else np.random.default_rng()
    n = target.n
    prompt = list(prompt)
    draft_hist = cch.copy()
    cch = cch.copy()

    codes, ctx_codes, skipped, drafts = [], [], [], []
    q_raw, q_wm = [], []
    for t in range(K + 1):
        ctx = prompt + drafts
        c = context_code(ctx, m, salt)
        ctx_codes.append(c)
        codes.append(derive_code(c, key, scheme, n))
        skipped.append(c in draft_hist)
        draft_hist.add(c)
        if t == K:
            break
        q = draft.next_dist(ctx)
        qw = q if skipped[t] else reweight(scheme, q, codes[t])
        q_raw.append(q)
        q_wm.append(qw)
        drafts.append(sample(qw, rng))

    p_raw, p_wm = [], []
    for t in range(K + 1):
        p = target.next_dist(prompt + drafts[:t])
        p_raw.append(p)
        p_wm.append(p if skipped[t] else reweight(scheme, p, codes[t]))

    pp, qq = (p_wm, q_wm) if mode is Mode.MWS else (p_raw, q_raw)
    trace = StepTrace(drafts=drafts, skipped_flags=skipped)
    out = _verify(pp, qq, drafts, K, rng, lambda t: cch.add(ctx_codes[t]), trace)
    if trace.rejection_position is None:
        cch.add(ctx_codes[K])
        out.append(sample(p_wm[K], rng))
    trace.emitted = out
    return out, cch, trace
