"""Exact checks on the impossibility of keeping both watermark strength and efficiency.

Everything exact here uses the Gamma reweight, whose code space (all n!
permutations) can be enumerated for small vocabularies.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .dist import overlap
from .gen import Mode, build_kernel
from .reweight import PermutationCode, Scheme, all_permutations, exact_mean_gamma, gamma_reweight_batch

GAP_TOL = 1e-12
TABLE_TOL = 1e-9


@dataclass(frozen=True)
class GapReport:
    p: np.ndarray
    q: np.ndarray
    alpha: float
    expected_reweighted_alpha: float

    @property
    def gap(self) -> float:
        return self.alpha - self.expected_reweighted_alpha


def expected_overlap_exact(p, q) -> float:
    """Mean over all permutation codes of the overlap of the two Gamma reweights."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    ranks = all_permutations(p.size)
    rp = gamma_reweight_batch(p, ranks)
    rq = gamma_reweight_batch(q, ranks)
    return float(np.minimum(rp, rq).sum(axis=1).mean())


def gap_scan(n: int, grid_points: int, rng: np.random.Generator) -> list[GapReport]:
    """Overlap lost by reweighting both sides, over Dirichlet(1,...,1) pairs.

    ``n = 2`` is accepted and reported as data only.
    """
    if not 2 <= n <= 6:
        raise ValueError("gap_scan supports 2 <= n <= 6")
    reports = []
    for _ in range(grid_points):
        p = rng.dirichlet(np.ones(n))
        q = rng.dirichlet(np.ones(n))
        rep = GapReport(p, q, overlap(p, q), expected_overlap_exact(p, q))
        if rep.gap < -GAP_TOL:
            raise AssertionError(f"reweighting increased expected overlap by {-rep.gap:.3e} at p={p}, q={q}")
        reports.append(rep)
    return reports


def widest_gap(reports: list[GapReport]) -> GapReport:
    return max(reports, key=lambda r: r.gap)


@dataclass(frozen=True)
class EfficiencyReport:
    trials: int
    diagonal_all_one: bool
    draft_unbiased: bool
    acceptance_one: bool

    @property
    def ok(self) -> bool:
        return self.diagonal_all_one and self.draft_unbiased and self.acceptance_one


def verify_efficiency_implies_unbiased(n: int, trials: int, rng: np.random.Generator) -> EfficiencyReport:
    """With identical target and draft, the MSE kernel never rejects and the draft reweight is unbiased."""
    if n > 5:
        raise ValueError("verify_efficiency_implies_unbiased supports n <= 5")
    ranks = all_permutations(n)
    diag_ok = unbiased_ok = accept_ok = True
    for _ in range(trials):
        q = rng.dirichlet(np.ones(n))
        rq = gamma_reweight_batch(q, ranks)
        for rank, r in zip(ranks, rq):
            k = build_kernel(Mode.MSE, q, q, PermutationCode(rank), Scheme.GAMMA)
            diag = np.diag(k)
            diag_ok &= bool(np.all(diag == 1.0))
            accept_ok &= bool(abs(diag @ r - 1.0) <= GAP_TOL)
        unbiased_ok &= bool(np.max(np.abs(exact_mean_gamma(q) - q)) <= GAP_TOL)
    return EfficiencyReport(trials, diag_ok, unbiased_ok, accept_ok)


# -- the monotone function equation on a dyadic grid ---------------------------


class MalformedTableError(ValueError):
    pass


@dataclass(frozen=True)
class DyadicFunctionTable:
    """``values[i, b] = F_{i+1}(b / 2**depth)`` for ``b = 0..2**depth``."""

    values: np.ndarray
    depth: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if self.depth < 1:
            raise MalformedTableError("depth must be >= 1")
        if v.ndim != 2 or v.shape[1] != 2**self.depth + 1:
            raise MalformedTableError(f"expected shape (n, {2**self.depth + 1}), got {v.shape}")
        if v.shape[0] < 3:
            raise MalformedTableError("need at least 3 functions")
        if not np.all(np.isfinite(v)):
            raise MalformedTableError("table values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @classmethod
    def identity(cls, n: int, depth: int) -> "DyadicFunctionTable":
        grid = np.arange(2**depth + 1) / 2**depth
        return cls(np.tile(grid, (n, 1)), depth)

    def at(self, i: int, x: Fraction) -> float:
        return float(self.values[i, int(x * 2**self.depth)])


@dataclass(frozen=True)
class ForcedIdentity:
    pass


@dataclass(frozen=True)
class ViolatedConstraint:
    description: str


def _fmt(x: Fraction) -> str:
    return str(x)


def _sum_rule(table: DyadicFunctionTable, point: dict[int, Fraction], label: str):
    total = sum(table.at(i, x) for i, x in point.items())
    if abs(total - 1.0) > TABLE_TOL:
        coords = sorted(point.items())
        # name equal coordinates together, e.g. "x_1=x_2=1/2"
        groups: dict[Fraction, list[int]] = {}
        for i, x in coords:
            if x != 0:
                groups.setdefault(x, []).append(i)
        where = ", ".join("=".join(f"x_{i + 1}" for i in idx) + f"={_fmt(x)}" for x, idx in groups.items())
        return ViolatedConstraint(f"sum rule at {where} ({label}): sum of F = {total:.6g}")
    return None


def check_function_equation(table: DyadicFunctionTable):
    """Replay the dyadic argument that forces every F_i to be the identity.

    Checks, in order: range, boundary values, monotonicity, the halving
    induction depth by depth, and the two-coordinate complement rule that makes
    all F_i equal.  Returns :class:`ForcedIdentity` when all hold, otherwise the
    first :class:`ViolatedConstraint`.
    """
    if not isinstance(table, DyadicFunctionTable):
        raise MalformedTableError("expected a DyadicFunctionTable")
    v, d, n = table.values, table.depth, table.n
    top = 2**d

    for i in range(n):
        bad = np.flatnonzero((v[i] < -TABLE_TOL) | (v[i] > 1 + TABLE_TOL))
        if bad.size:
            b = int(bad[0])
            return ViolatedConstraint(f"range: F_{i + 1}({_fmt(Fraction(b, top))}) = {v[i, b]:.6g} outside [0, 1]")
    for i in range(n):
        if abs(v[i, 0]) > TABLE_TOL:
            return ViolatedConstraint(f"boundary: F_{i + 1}(0) = {v[i, 0]:.6g}, expected 0")
        if abs(v[i, top] - 1.0) > TABLE_TOL:
            return ViolatedConstraint(f"boundary: F_{i + 1}(1) = {v[i, top]:.6g}, expected 1")
    for i in range(n):
        drops = np.flatnonzero(np.diff(v[i]) < -TABLE_TOL)
        if drops.size:
            b = int(drops[0])
            return ViolatedConstraint(
                f"monotonicity: F_{i + 1}({_fmt(Fraction(b + 1, top))}) < F_{i + 1}({_fmt(Fraction(b, top))})"
            )

    roles = list(itertools.permutations(range(n), 3))
    for k in range(1, d + 1):
        level = 2**k
        label = "depth-1 base case" if k == 1 else f"depth-{k} induction step"
        for b in range(level + 1):
            x = Fraction(b, level)
            for i, j, l in roles:
                if 2 * b <= level:
                    # x_i = x_j = b/2^k, x_l = 1 - b/2^(k-1)
                    point = {i: x, j: x, l: 1 - 2 * x}
                else:
                    point = {i: x, j: 1 - x}
                hit = _sum_rule(table, point, label)
                if hit:
                    return hit

    for i, j in itertools.permutations(range(n), 2):
        for b in range(top + 1):
            x = Fraction(b, top)
            hit = _sum_rule(table, {i: x, j: 1 - x}, "complement rule")
            if hit:
                return hit

    grid = np.arange(top + 1) / top
    if np.max(np.abs(v - grid)) > TABLE_TOL:  # pragma: no cover - implied by the checks above
        return ViolatedConstraint("table differs from the identity despite satisfying every grid constraint")
    return ForcedIdentity()

