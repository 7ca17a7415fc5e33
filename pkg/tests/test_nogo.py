import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import all_ranks, gamma_reweight_exact
from specwm.dist import make_dist, overlap
from specwm.nogo import (
    DyadicFunctionTable,
    ForcedIdentity,
    MalformedTableError,
    ViolatedConstraint,
    check_function_equation,
    expected_overlap_exact,
    gap_scan,
    verify_efficiency_implies_unbiased,
    widest_gap,
)


def expected_overlap_oracle(p, q):
    pf = [Fraction(str(x)) for x in p]
    qf = [Fraction(str(x)) for x in q]
    ranks = all_ranks(len(p))
    total = sum(sum(min(a, b) for a, b in zip(gamma_reweight_exact(pf, r), gamma_reweight_exact(qf, r))) for r in ranks)
    return total / len(ranks)


# -- overlap gap --------------------------------------------------------------------


def test_witness_pair_strict_gap():
    p, q = (0.5, 0.3, 0.2), (0.2, 0.3, 0.5)
    exact = expected_overlap_oracle(p, q)
    assert float(exact) == pytest.approx(0.6, abs=1e-15)
    got = expected_overlap_exact(p, q)
    assert abs(got - float(exact)) <= 1e-12
    assert overlap(p, q) == pytest.approx(0.7, abs=1e-15)
    assert overlap(p, q) - got >= 0.01


@settings(max_examples=40)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(*[st.lists(st.integers(0, 20), min_size=n, max_size=n).filter(sum)] * 2)))
def test_expected_overlap_matches_rational_oracle(pair):
    p, q = make_dist(pair[0]), make_dist(pair[1])
    assert abs(expected_overlap_exact(p, q) - float(expected_overlap_oracle(p, q))) <= 1e-12


def test_identical_pair_has_zero_gap():
    rng = np.random.default_rng(0)
    for n in (3, 4, 5):
        p = rng.dirichlet(np.ones(n))
        assert abs(expected_overlap_exact(p, p) - 1.0) <= 1e-12


@pytest.mark.parametrize("n", [3, 4, 5])
def test_gap_scan_convexity_direction(n):
    reports = gap_scan(n, 300, np.random.default_rng(n))
    assert len(reports) == 300
    assert all(r.gap >= -1e-12 for r in reports)


def test_gap_scan_strictness_n3():
    reports = gap_scan(3, 1000, np.random.default_rng(11))
    best = widest_gap(reports)
    assert best.gap >= 0.01
    assert best.gap == max(r.gap for r in reports)


def test_gap_scan_bounds():
    with pytest.raises(ValueError):
        gap_scan(7, 10, np.random.default_rng(0))
    # two tokens are allowed and reported as data
    assert len(gap_scan(2, 20, np.random.default_rng(0))) == 20


def test_efficiency_implies_unbiased():
    rep = verify_efficiency_implies_unbiased(4, 100, np.random.default_rng(3))
    assert rep.ok and rep.trials == 100
    with pytest.raises(ValueError):
        verify_efficiency_implies_unbiased(6, 1, np.random.default_rng(0))


# -- function equation ------------------------------------------------------------------


@pytest.mark.parametrize("n,d", [(3, 1), (3, 3), (4, 2), (5, 4)])
def test_identity_tables_pass(n, d):
    assert check_function_equation(DyadicFunctionTable.identity(n, d)) == ForcedIdentity()


def perturbed(n, d, i, b, value):
    t = DyadicFunctionTable.identity(n, d).values.copy()
    t[i, b] = value
    return DyadicFunctionTable(t, d)


def test_named_examples():
    v = check_function_equation(perturbed(3, 1, 0, 1, 0.6))
    assert isinstance(v, ViolatedConstraint)
    assert v.description.startswith("sum rule at x_1=x_2=1/2 (depth-1 base case)")
    v = check_function_equation(perturbed(3, 3, 1, 2, 0.3))
    assert isinstance(v, ViolatedConstraint)
    assert "depth-2 induction step" in v.description
    assert "x_1=1/4" in v.description or "x_2=1/4" in v.description


def test_range_boundary_monotonicity_are_named():
    assert check_function_equation(perturbed(3, 2, 0, 1, 1.5)).description.startswith("range")
    assert check_function_equation(perturbed(3, 2, 2, 0, 0.1)).description.startswith("boundary")
    assert check_function_equation(perturbed(3, 2, 1, 4, 0.9)).description.startswith("boundary")
    assert check_function_equation(perturbed(3, 2, 1, 2, 0.2)).description.startswith("monotonicity")


def test_every_single_point_lattice_perturbation_rejected():
    n, d = 3, 3
    lattice = np.round(np.arange(-2, 13) * 0.1, 10)
    ident = DyadicFunctionTable.identity(n, d).values
    checked = 0
    for i in range(n):
        for b in range(2**d + 1):
            for value in lattice:
                if abs(value - ident[i, b]) < 1e-12:
                    continue
                verdict = check_function_equation(perturbed(n, d, i, b, value))
                assert isinstance(verdict, ViolatedConstraint) and verdict.description
                checked += 1
    assert checked > 350


def test_every_single_point_shift_rejected():
    n, d = 3, 3
    for i, b in itertools.product(range(n), range(2**d + 1)):
        for delta in (-0.5, -0.2, -0.1, -0.05, 0.05, 0.1, 0.2, 0.5):
            verdict = check_function_equation(perturbed(n, d, i, b, b / 2**d + delta))
            assert isinstance(verdict, ViolatedConstraint)


@settings(max_examples=200)
@given(st.data())
def test_multi_point_perturbations_rejected(data):
    n = data.draw(st.integers(3, 5))
    d = data.draw(st.integers(1, 4))
    t = DyadicFunctionTable.identity(n, d).values.copy()
    cells = data.draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, 2**d)), min_size=1, max_size=6, unique=True)
    )
    for i, b in cells:
        t[i, b] += data.draw(st.sampled_from([-1, 1])) * data.draw(st.floats(1e-6, 2.0))
    assert isinstance(check_function_equation(DyadicFunctionTable(t, d)), ViolatedConstraint)


@settings(max_examples=100)
@given(st.integers(3, 5), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_forced_identity_only_on_identity(n, d, seed):
    # monotone tables with the right boundary values are still rejected unless they are the identity
    rng = np.random.default_rng(seed)
    t = np.sort(rng.random((n, 2**d + 1)), axis=1)
    t[:, 0], t[:, -1] = 0.0, 1.0
    verdict = check_function_equation(DyadicFunctionTable(t, d))
    assert isinstance(verdict, ViolatedConstraint)


@pytest.mark.parametrize(
    "values,depth",
    [
        (np.zeros((3, 4)), 2),
        (np.zeros((2, 3)), 1),
        (np.zeros((3, 3)), 0),
        (np.full((3, 3), np.nan), 1),
    ],
)
def test_malformed_tables(values, depth):
    with pytest.raises(MalformedTableError):
        DyadicFunctionTable(values, depth)


def test_non_table_input():
    with pytest.raises(MalformedTableError):
        check_function_equation(np.eye(3))
