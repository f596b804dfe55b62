"""Window scoring: expected counts from pooled history, the chi-squared
statistic, its tail probability, and the running-history update."""

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from eventlens.detector import (
    ExpectedCounts,
    chi_square_score,
    degrees_of_freedom,
    expected_counts,
    p_value,
    score_window,
    update_stats,
)
from eventlens.errors import ConfigurationError, ContractViolation, NumericError
from eventlens.types import CountStats, StreamStats


def make_counts(totals, unit=None, cell=None, time_counts=None):
    totals = np.asarray(totals, dtype=np.int64)
    k = totals.size
    unit = [np.asarray(u, dtype=np.int64) for u in (unit or [])]
    cell = [np.asarray(c, dtype=np.int64) for c in (cell or [])]
    if time_counts is None:
        time_counts = totals.reshape(1, k)
    return CountStats(
        component_totals=totals,
        unit_counts=unit,
        cell_counts=cell,
        time_counts=np.asarray(time_counts, dtype=np.int64),
    )


def make_stats(totals, unit=None, cell=None, span=0.0):
    return StreamStats(
        component_totals=np.asarray(totals, dtype=np.int64),
        unit_counts=[np.asarray(u, dtype=np.int64) for u in (unit or [])],
        cell_counts=[np.asarray(c, dtype=np.int64) for c in (cell or [])],
        normal_span=span,
    )


# ---------------------------------------------------------------------------
# expected counts
# ---------------------------------------------------------------------------

def test_expected_first_window_equals_observed():
    counts = make_counts([7, 3], unit=[[[4, 3], [1, 2]]])
    stats = StreamStats.zeros(2, (2,), ())
    exp = expected_counts(counts, stats, delta=5.0)
    assert_allclose(exp.component_totals, [7.0, 3.0])
    assert_allclose(exp.unit_counts[0], [[4.0, 3.0], [1.0, 2.0]])
    score = chi_square_score(counts, exp)
    assert score == 0.0


def test_expected_scales_history_to_window_share():
    # pooled 5 + 45 records over 90 + 10 time units, window owns a tenth
    counts = make_counts([5])
    stats = make_stats([45], span=90.0)
    exp = expected_counts(counts, stats, delta=10.0)
    assert_allclose(exp.component_totals, [5.0])


def test_expected_rejects_zero_time_base():
    counts = make_counts([1])
    stats = make_stats([0], span=0.0)
    with pytest.raises(ContractViolation):
        expected_counts(counts, stats, delta=0.0)


# ---------------------------------------------------------------------------
# the statistic
# ---------------------------------------------------------------------------

def test_chi_square_single_cell_hand_value():
    counts = make_counts([9])
    exp = ExpectedCounts(
        component_totals=np.array([4.0]), unit_counts=[], cell_counts=[]
    )
    assert_allclose(chi_square_score(counts, exp), 6.25)


def test_chi_square_matching_tables_score_zero():
    counts = make_counts([6, 2], unit=[[[3, 3], [1, 1]]], cell=[[[6, 0], [0, 2]]])
    exp = ExpectedCounts(
        component_totals=counts.component_totals.astype(float),
        unit_counts=[counts.unit_counts[0].astype(float)],
        cell_counts=[counts.cell_counts[0].astype(float)],
    )
    assert chi_square_score(counts, exp) == 0.0


def test_chi_square_all_zero_window_scores_sum_of_expected():
    counts = make_counts([0, 0], unit=[[[0, 0], [0, 0]]])
    exp = ExpectedCounts(
        component_totals=np.array([3.0, 1.0]),
        unit_counts=[np.array([[2.0, 1.0], [0.5, 0.5]])],
        cell_counts=[],
    )
    assert_allclose(chi_square_score(counts, exp), 3.0 + 1.0 + 2.0 + 1.0 + 0.5 + 0.5)


def test_chi_square_dead_cells_are_free_but_surprises_are_not():
    counts_quiet = make_counts([0])
    counts_loud = make_counts([2])
    exp = ExpectedCounts(
        component_totals=np.array([0.0]), unit_counts=[], cell_counts=[]
    )
    assert chi_square_score(counts_quiet, exp) == 0.0
    assert chi_square_score(counts_loud, exp) > 1e6


def test_chi_square_invariant_under_component_relabel():
    rng = np.random.default_rng(3)
    k, u, g = 4, 5, 6
    unit = rng.integers(0, 9, size=(k, u))
    cell = rng.integers(0, 9, size=(k, g))
    totals = unit.sum(axis=1) + cell.sum(axis=1)
    counts = make_counts(totals, unit=[unit], cell=[cell])
    stats = make_stats(
        totals * 3, unit=[unit * 3], cell=[cell * 3], span=30.0
    )
    base = chi_square_score(counts, expected_counts(counts, stats, 10.0))

    perm = rng.permutation(k)
    counts_p = make_counts(totals[perm], unit=[unit[perm]], cell=[cell[perm]])
    stats_p = make_stats(
        totals[perm] * 3, unit=[unit[perm] * 3], cell=[cell[perm] * 3], span=30.0
    )
    flipped = chi_square_score(counts_p, expected_counts(counts_p, stats_p, 10.0))
    assert_allclose(flipped, base, atol=1e-9)


# ---------------------------------------------------------------------------
# degrees of freedom
# ---------------------------------------------------------------------------

def test_dof_hand_case():
    assert degrees_of_freedom(2, (3,), (4,)) == 11


def test_dof_default_sized_stream():
    # 20 components, one 10-unit attribute, one 300-cell grid
    assert degrees_of_freedom(20, (10,), (300,)) == 6179


def test_dof_degenerate_configuration_rejected():
    with pytest.raises(ConfigurationError):
        degrees_of_freedom(1, (), ())


def test_dof_counts_only_is_k_minus_one():
    assert degrees_of_freedom(4, (), ()) == 3


# ---------------------------------------------------------------------------
# tail probability
# ---------------------------------------------------------------------------

def test_p_value_zero_score_is_one():
    assert p_value(0.0, 7) == 1.0


def test_p_value_exponential_hand_case():
    # dof 2 is an exponential: P(X > 2 ln 20) = 1/20
    got = p_value(2.0 * math.log(20.0), 2)
    assert_allclose(got, 0.05, rtol=1e-10)


def test_p_value_bulk_is_near_half():
    assert abs(p_value(1000.0, 1000) - 0.5) < 0.05


def test_p_value_matches_high_precision_tail():
    rng = np.random.default_rng(10)
    for _ in range(25):
        dof = int(rng.integers(1, 400))
        score = float(rng.uniform(0.0, 3.0) * dof)
        want = float(
            mpmath.gammainc(dof / 2.0, score / 2.0, mpmath.inf, regularized=True)
        )
        if want < 1e-290:
            continue
        assert_allclose(p_value(score, dof), want, rtol=1e-10)


def test_p_value_monotone_in_score():
    scores = np.linspace(0.0, 80.0, 40)
    vals = [p_value(float(s), 12) for s in scores]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_p_value_rejects_bad_inputs():
    with pytest.raises(ContractViolation):
        p_value(-1.0, 3)
    with pytest.raises(ContractViolation):
        p_value(math.inf, 3)
    with pytest.raises(ContractViolation):
        p_value(1.0, 0)


# ---------------------------------------------------------------------------
# the verdict
# ---------------------------------------------------------------------------

def test_score_window_first_window_is_never_anomalous():
    counts = make_counts([8, 2], unit=[[[5, 3], [1, 1]]])
    stats = StreamStats.zeros(2, (2,), ())
    verdict = score_window(counts, stats, 4.0, (2,), (), threshold=0.05)
    assert verdict.score == 0.0
    assert verdict.p_value == 1.0
    assert not verdict.anomalous
    assert verdict.dof == degrees_of_freedom(2, (2,), ())


def test_score_window_flags_wild_window():
    # history says ~10 records per window, this one brings 400 to one unit
    unit_hist = np.array([[50, 50], [40, 40]])
    stats = make_stats(
        unit_hist.sum(axis=1), unit=[unit_hist], span=18.0
    )
    counts = make_counts([400, 0], unit=[[[400, 0], [0, 0]]])
    verdict = score_window(counts, stats, 1.0, (2,), (), threshold=0.05)
    assert verdict.anomalous
    assert verdict.p_value < 1e-6


def test_score_window_verdict_agrees_with_threshold():
    rng = np.random.default_rng(5)
    unit_hist = rng.integers(5, 40, size=(3, 4))
    stats = make_stats(unit_hist.sum(axis=1), unit=[unit_hist], span=50.0)
    for _ in range(20):
        unit = rng.integers(0, 12, size=(3, 4))
        counts = make_counts(unit.sum(axis=1), unit=[unit])
        verdict = score_window(counts, stats, 10.0, (4,), (), threshold=0.2)
        assert verdict.anomalous == (verdict.p_value < 0.2)


# ---------------------------------------------------------------------------
# the running history
# ---------------------------------------------------------------------------

def test_update_stats_accumulates_counts_and_span():
    stats = StreamStats.zeros(2, (2,), (3,))
    counts = make_counts([4, 1], unit=[[[3, 1], [1, 0]]], cell=[[[2, 1, 1], [0, 0, 1]]])
    out = update_stats(stats, counts, delta=3.0, anomalous=False)
    out = update_stats(out, counts, delta=2.0, anomalous=False)
    assert_allclose(out.component_totals, [8, 2])
    assert_allclose(out.unit_counts[0], [[6, 2], [2, 0]])
    assert_allclose(out.cell_counts[0], [[4, 2, 2], [0, 0, 2]])
    assert out.normal_span == 5.0


def test_update_stats_skips_anomalous_windows():
    stats = StreamStats.zeros(1, (), ())
    stats = update_stats(stats, make_counts([5]), 1.0, anomalous=False)
    frozen = update_stats(stats, make_counts([900]), 1.0, anomalous=True)
    assert_allclose(frozen.component_totals, [5])
    assert frozen.normal_span == 1.0


def test_update_stats_empty_window_still_counts_time():
    stats = StreamStats.zeros(1, (), ())
    out = update_stats(stats, make_counts([0]), 7.5, anomalous=False)
    assert out.component_totals[0] == 0
    assert out.normal_span == 7.5


def test_update_stats_guards_against_saturation():
    stats = make_stats([np.int64(2) ** 62 + 1], span=1.0)
    with pytest.raises(NumericError):
        update_stats(stats, make_counts([1]), 1.0, anomalous=False)


@settings(max_examples=40, deadline=None)
@given(
    window_totals=st.lists(
        st.lists(st.integers(0, 30), min_size=2, max_size=2), min_size=1, max_size=6
    ),
)
def test_update_stats_never_decreases(window_totals):
    stats = StreamStats.zeros(2, (), ())
    prev = stats.component_totals.copy()
    for totals in window_totals:
        stats = update_stats(stats, make_counts(totals), 1.0, anomalous=False)
        assert (stats.component_totals >= prev).all()
        prev = stats.component_totals.copy()
