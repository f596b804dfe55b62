"""Window-level anomaly decision: compare a window's count tables against
what the stream's accepted history predicts, as one chi-squared statistic.

Expected counts scale the pooled (window + history) counts to the window's
time share:  E = (N + S) * delta / (span + delta)  where S accumulates counts
and ``span`` the wall time of previously accepted windows.  The statistic sums
Pearson terms over the per-component totals, every categorical table row and
every grid table row; its null distribution is chi-squared with

    dof = K * (sum U + sum G - M1 - M2 + 1) - 1

degrees of freedom.  Windows whose upper tail probability falls below the
threshold are flagged and kept out of the running statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaincc

from .errors import ConfigurationError, ContractViolation, NumericError
from .types import CountStats, StreamStats

__all__ = [
    "ExpectedCounts",
    "WindowVerdict",
    "chi_square_score",
    "degrees_of_freedom",
    "expected_counts",
    "p_value",
    "score_window",
    "update_stats",
]

_EPS = 1e-9
_SATURATION_GUARD = np.int64(2) ** 62


@dataclass
class ExpectedCounts:
    """Null-model cell expectations for one window (floats, same shapes)."""

    component_totals: np.ndarray
    unit_counts: list[np.ndarray]
    cell_counts: list[np.ndarray]


@dataclass(frozen=True)
class WindowVerdict:
    score: float
    dof: int
    p_value: float
    anomalous: bool


def expected_counts(counts: CountStats, stats: StreamStats, delta: float) -> ExpectedCounts:
    """Scale pooled counts down to the window's share of total observed time."""
    denom = stats.normal_span + delta
    if not denom > 0:
        raise ContractViolation(
            "no time base: accumulated span and window delta are both zero"
        )
    ratio = delta / denom
    return ExpectedCounts(
        component_totals=(counts.component_totals + stats.component_totals) * ratio,
        unit_counts=[
            (n + s) * ratio for n, s in zip(counts.unit_counts, stats.unit_counts)
        ],
        cell_counts=[
            (n + s) * ratio for n, s in zip(counts.cell_counts, stats.cell_counts)
        ],
    )


def _pearson(observed: np.ndarray, expected: np.ndarray) -> float:
    """Sum of (O-E)^2 / E with near-zero expectations floored at 1e-9.

    A cell the null considers empty contributes nothing if it stayed empty,
    and a large floored term if mass showed up there anyway.
    """
    obs = np.asarray(observed, dtype=float)
    exp = np.asarray(expected, dtype=float)
    tiny = exp < _EPS
    dead = tiny & (obs == 0)
    denom = np.where(tiny, _EPS, exp)
    terms = (obs - exp) ** 2 / denom
    terms[dead] = 0.0
    return float(terms.sum())


def chi_square_score(counts: CountStats, expected: ExpectedCounts) -> float:
    """Pearson statistic over the component block and every attribute row."""
    score = _pearson(counts.component_totals, expected.component_totals)
    for obs_tab, exp_tab in zip(counts.unit_counts, expected.unit_counts):
        for k in range(obs_tab.shape[0]):
            score += _pearson(obs_tab[k], exp_tab[k])
    for obs_tab, exp_tab in zip(counts.cell_counts, expected.cell_counts):
        for k in range(obs_tab.shape[0]):
            score += _pearson(obs_tab[k], exp_tab[k])
    return score


def degrees_of_freedom(
    components: int, unit_sizes: Sequence[int], cell_sizes: Sequence[int]
) -> int:
    """Null degrees of freedom of the summed statistic.

    One block of size K constrained by its total, plus per component one
    block per attribute, each constrained by its own total.
    """
    m1, m2 = len(unit_sizes), len(cell_sizes)
    dof = components * (sum(unit_sizes) + sum(cell_sizes) - m1 - m2 + 1) - 1
    if dof <= 0:
        raise ConfigurationError(
            f"degenerate test: {components} components with unit sizes {tuple(unit_sizes)} "
            f"and grid sizes {tuple(cell_sizes)} leave {dof} degrees of freedom"
        )
    return dof


def p_value(score: float, dof: int) -> float:
    """Upper tail probability of chi-squared(dof) at ``score``."""
    if score < 0 or not math.isfinite(score):
        raise ContractViolation(f"score must be finite and >= 0, got {score}")
    if dof < 1:
        raise ContractViolation(f"dof must be >= 1, got {dof}")
    return float(gammaincc(0.5 * dof, 0.5 * score))


def score_window(
    counts: CountStats,
    stats: StreamStats,
    delta: float,
    unit_sizes: Sequence[int],
    cell_sizes: Sequence[int],
    threshold: float,
) -> WindowVerdict:
    expected = expected_counts(counts, stats, delta)
    score = chi_square_score(counts, expected)
    dof = degrees_of_freedom(counts.component_totals.size, unit_sizes, cell_sizes)
    p = p_value(score, dof)
    return WindowVerdict(score=score, dof=dof, p_value=p, anomalous=p < threshold)


def update_stats(
    stats: StreamStats, counts: CountStats, delta: float, anomalous: bool
) -> StreamStats:
    """Fold a normal window into the running history; skip anomalous ones."""
    if anomalous:
        return stats
    if (stats.component_totals > _SATURATION_GUARD).any():
        raise NumericError("running counts are close to saturating int64")
    return StreamStats(
        component_totals=stats.component_totals + counts.component_totals,
        unit_counts=[s + n for s, n in zip(stats.unit_counts, counts.unit_counts)],
        cell_counts=[s + n for s, n in zip(stats.cell_counts, counts.cell_counts)],
        normal_span=stats.normal_span + delta,
    )
