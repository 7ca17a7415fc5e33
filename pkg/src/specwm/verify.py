"""Self-checks run by ``specwm verify``: exact enumeration and Monte-Carlo oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .detect import chernoff_log_pvalue, log_mgf, null_u_samples
from .dist import overlap
from .gen import Mode, apply_kernel, build_kernel
from .nogo import DyadicFunctionTable, ForcedIdentity, check_function_equation, expected_overlap_exact, gap_scan
from .reweight import (
    GumbelCode,
    PermutationCode,
    Scheme,
    all_permutations,
    exact_mean_gamma,
    gamma_reweight_batch,
    reweight,
)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _random_dist(rng, n):
    p = rng.dirichlet(np.ones(n))
    # occasionally zero out a coordinate to exercise support handling
    if n > 2 and rng.random() < 0.2:
        p[rng.integers(n)] = 0.0
        p /= p.sum()
    return p


def check_gamma_unbiased(rng, trials=200) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        p = _random_dist(rng, int(rng.integers(2, 7)))
        worst = max(worst, float(np.abs(exact_mean_gamma(p) - p).max()))
    return CheckResult("gamma reweight exact unbiasedness", worst <= 1e-12, f"max error {worst:.2e} over {trials} dists")


def check_mws_identity(rng, trials=200, gumbel_codes=100) -> CheckResult:
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 9))
        p, q = _random_dist(rng, n), _random_dist(rng, n)
        codes = [(Scheme.GAMMA, PermutationCode(r)) for r in all_permutations(n)] if n <= 6 else []
        codes += [(Scheme.DELTA_GUMBEL, GumbelCode(rng.gumbel(size=n))) for _ in range(gumbel_codes)]
        for scheme, code in codes:
            k = build_kernel(Mode.MWS, p, q, code, scheme)
            got = apply_kernel(k, reweight(scheme, q, code))
            worst = max(worst, float(np.abs(got - reweight(scheme, p, code)).max()))
    return CheckResult("MWS kernel reproduces the reweighted target", worst <= 1e-12, f"max error {worst:.2e}")


def check_mse_identities(rng, trials=200) -> CheckResult:
    worst_alpha = worst_mean = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 6))
        p, q = _random_dist(rng, n), _random_dist(rng, n)
        ranks = all_permutations(n)
        k = build_kernel(Mode.MSE, p, q, PermutationCode(ranks[0]), Scheme.GAMMA)
        rq = gamma_reweight_batch(q, ranks)
        mean_rq = rq.mean(axis=0)
        worst_alpha = max(worst_alpha, abs(float(np.diag(k) @ mean_rq) - overlap(p, q)))
        outs = np.array([apply_kernel(k, r) for r in rq]).mean(axis=0)
        worst_mean = max(worst_mean, float(np.abs(outs - p).max()))
    ok = worst_alpha <= 1e-12 and worst_mean <= 1e-12
    return CheckResult("MSE keeps acceptance rate and is unbiased", ok, f"alpha err {worst_alpha:.2e}, mean err {worst_mean:.2e}")


def check_nogo(rng, points=1000) -> CheckResult:
    witness = 0.7 - expected_overlap_exact([0.5, 0.3, 0.2], [0.2, 0.3, 0.5])
    worst = min(r.gap for n in (3, 4, 5) for r in gap_scan(n, points, rng))
    ok = witness >= 0.01 and worst >= -1e-12
    return CheckResult("no-go gap", ok, f"witness gap {witness:.4f}, min scanned gap {worst:.2e}")


def check_function_equation_grid(rng=None) -> CheckResult:
    base = DyadicFunctionTable.identity(3, 3)
    if not isinstance(check_function_equation(base), ForcedIdentity):
        return CheckResult("function equation checker", False, "identity table rejected")
    missed = 0
    count = 0
    for i in range(3):
        for b in range(9):
            for delta in (-0.3, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.3):
                v = base.values.copy()
                v[i, b] += delta
                count += 1
                if isinstance(check_function_equation(DyadicFunctionTable(v, 3)), ForcedIdentity):
                    missed += 1
    return CheckResult("function equation checker", missed == 0, f"{count - missed}/{count} perturbations rejected")


def check_mgf(rng, samples=10**6) -> CheckResult:
    worst_z = 0.0
    for scheme, n in ((Scheme.DELTA_GUMBEL, 2), (Scheme.GAMMA, 3), (Scheme.GAMMA, 100)):
        u = null_u_samples(scheme, n, samples, rng)
        for lam in (0.5, 1.0, 2.0, 5.0):
            e = np.exp(lam * u)
            se = e.std(ddof=1) / math.sqrt(samples)
            worst_z = max(worst_z, abs(e.mean() - math.exp(log_mgf(scheme, lam, n))) / se)
    return CheckResult("U-score MGF", worst_z <= 4.0, f"max |z| {worst_z:.2f}")


def check_chernoff_soundness(rng, trials=10**5, count=100) -> CheckResult:
    worst = -1.0
    for scheme, n in ((Scheme.DELTA_GUMBEL, 64), (Scheme.GAMMA, 64)):
        sums = null_u_samples(scheme, n, trials * count, rng).reshape(trials, count).sum(axis=1)
        for s in np.linspace(count * 0.5, count * 0.62, 20):
            freq = float((sums >= s).mean())
            sigma = math.sqrt(max(freq * (1 - freq), 1.0 / trials) / trials)
            bound = math.exp(chernoff_log_pvalue(float(s), count, scheme, n)[0])
            worst = max(worst, (freq - bound) / sigma)
    return CheckResult("Chernoff bound dominates null exceedance", worst <= 4.0, f"max excess {worst:.2f} sigma")


CHECKS: list[Callable[..., CheckResult]] = [
    check_gamma_unbiased,
    check_mws_identity,
    check_mse_identities,
    check_nogo,
    check_function_equation_grid,
    check_mgf,
    check_chernoff_soundness,
]


def run_all(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    results = []
    for check in CHECKS:
        rng = np.random.default_rng([seed, CHECKS.index(check)])
        if quick and check is check_mgf:
            results.append(check(rng, samples=10**5))
        elif quick and check is check_chernoff_soundness:
            results.append(check(rng, trials=10**4))
        elif quick and check is check_nogo:
            results.append(check(rng, points=100))
        elif quick and check in (check_gamma_unbiased, check_mws_identity, check_mse_identities):
            results.append(check(rng, trials=20))
        else:
            results.append(check(rng))
    return results
