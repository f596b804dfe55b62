"""Core value types: records, windows, count tables, model state, config.

Shapes used throughout, for a stream with ``K`` components, ``M1`` categorical
attributes (vocabulary sizes ``U``), ``M2`` continuous attributes (grid sizes
``G``) and windows of ``Tc`` distinct timestamps:

* per-component totals      ``(K,)``
* per-unit counts           one ``(K, U)`` table per categorical attribute
* per-cell counts           one ``(K, G)`` table per continuous attribute
* per-timestamp counts      ``(Tc, K)``

All count tables are int64.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ContractViolation

__all__ = [
    "Config",
    "CountStats",
    "CurrentTensor",
    "EventRecord",
    "ModelParams",
    "StreamStats",
    "counts_from_assignments",
    "default_config",
]


@dataclass(frozen=True)
class EventRecord:
    """One event: a timestamp plus one value per declared attribute.

    ``cat`` holds unit indices (already vocabulary-encoded), ``cont`` holds raw
    real values; grid lookup happens later so the same record can be re-binned.
    """

    timestamp: float
    cat: tuple[int, ...] = ()
    cont: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if not np.isfinite(self.timestamp):
            raise ContractViolation(f"non-finite timestamp {self.timestamp!r}")
        for v in self.cont:
            if not np.isfinite(v):
                raise ContractViolation(f"non-finite continuous value {v!r}")
        for u in self.cat:
            if u < 0:
                raise ContractViolation(f"negative unit index {u}")


@dataclass
class CurrentTensor:
    """One window: ``Tc`` distinct increasing timestamps with their records.

    ``delta`` is the wall-time the window accounts for: last timestamp minus
    the previous window's last timestamp (for the first window of a stream,
    the window's own span).
    """

    timestamps: np.ndarray
    records_by_time: list[list[EventRecord]]
    delta: float

    def __post_init__(self) -> None:
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        if self.timestamps.ndim != 1 or self.timestamps.size == 0:
            raise ContractViolation("window needs at least one timestamp")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ContractViolation("window timestamps must be strictly increasing")
        if len(self.records_by_time) != self.timestamps.size:
            raise ContractViolation("one record list per timestamp required")
        for t, recs in zip(self.timestamps, self.records_by_time):
            for r in recs:
                if r.timestamp != t:
                    raise ContractViolation("record filed under wrong timestamp")

    @property
    def span(self) -> int:
        """Number of distinct timestamps in the window."""
        return int(self.timestamps.size)

    @property
    def n_records(self) -> int:
        return sum(len(r) for r in self.records_by_time)

    def flatten(self) -> tuple[np.ndarray, list[np.ndarray], list[np.ndarray]]:
        """Return (time index, unit ids per cat attr, raw values per cont attr).

        Arrays are aligned over records in stream order; empty attribute lists
        come back as empty lists, and a window with zero records yields empty
        arrays of the right dtype.
        """
        flat = [r for recs in self.records_by_time for r in recs]
        m1 = len(flat[0].cat) if flat else 0
        m2 = len(flat[0].cont) if flat else 0
        t_idx = np.repeat(
            np.arange(self.span), [len(r) for r in self.records_by_time]
        ).astype(np.int64)
        unit_ids = [
            np.array([r.cat[i] for r in flat], dtype=np.int64) for i in range(m1)
        ]
        values = [
            np.array([r.cont[j] for r in flat], dtype=float) for j in range(m2)
        ]
        return t_idx, unit_ids, values


@dataclass
class CountStats:
    """Record counts of one window, cross-tabulated by component."""

    component_totals: np.ndarray         # (K,)
    unit_counts: list[np.ndarray]        # per categorical attribute, (K, U)
    cell_counts: list[np.ndarray]        # per continuous attribute, (K, G)
    time_counts: np.ndarray              # (Tc, K)

    @property
    def n_records(self) -> int:
        return int(self.component_totals.sum())

    def validate(self) -> None:
        """Raise if the tables disagree with each other."""
        total = self.component_totals
        if (total < 0).any():
            raise ContractViolation("negative component totals")
        for tab in (*self.unit_counts, *self.cell_counts):
            if not np.array_equal(tab.sum(axis=1), total):
                raise ContractViolation("attribute table rows do not sum to component totals")
        if not np.array_equal(self.time_counts.sum(axis=0), total):
            raise ContractViolation("per-timestamp counts do not sum to component totals")


@dataclass
class StreamStats:
    """Running totals over the normal (non-anomalous) history of a stream.

    ``normal_span`` accumulates the deltas of accepted windows; the count
    tables accumulate their per-component counts.
    """

    component_totals: np.ndarray
    unit_counts: list[np.ndarray]
    cell_counts: list[np.ndarray]
    normal_span: float = 0.0

    @classmethod
    def zeros(
        cls, components: int, unit_sizes: Sequence[int], cell_sizes: Sequence[int]
    ) -> "StreamStats":
        return cls(
            component_totals=np.zeros(components, dtype=np.int64),
            unit_counts=[np.zeros((components, u), dtype=np.int64) for u in unit_sizes],
            cell_counts=[np.zeros((components, g), dtype=np.int64) for g in cell_sizes],
        )


@dataclass
class ModelParams:
    """Per-window model estimate plus the carried priors it was grown from.

    * ``unit_probs``: per categorical attribute, (K, U) rows summing to 1.
    * ``density_scores``: per continuous attribute, (K, G) latent grid scores;
      the implied cell mass is ``softmax(scores + log widths)`` per row.
    * ``traj_means`` / ``traj_covs``: smoothed latent-weight states per
      component over the window's timestamps, shapes (K, Tc, 2) / (K, Tc, 2, 2).
    * ``prior_*``: the snapshots carried in from the previous window.
    """

    unit_probs: list[np.ndarray]
    density_scores: list[np.ndarray]
    traj_means: np.ndarray
    traj_covs: np.ndarray
    prior_unit_probs: list[np.ndarray]
    prior_density_scores: list[np.ndarray]


@dataclass(frozen=True)
class Config:
    """Engine settings; the zero-argument default is the reference setting.

    ``grid_cells`` and ``grid_lengthscale`` may be a single value applied to
    every continuous attribute or a sequence with one entry per attribute.
    ``concentration`` (the persistence weight of the categorical tables) and
    the lengthscales default to data-derived values when left ``None``:
    concentration 1/K, time lengthscale 10x the median inter-timestamp gap of
    the first window, grid lengthscale 10x the median cell width.
    """

    components: int = 20
    grid_cells: int | tuple[int, ...] = 300
    epochs: int = 30
    window_timestamps: int = 30
    concentration: float | None = None
    drift_var: float = 0.25                      # window-to-window density drift
    time_lengthscale: float | None = None
    time_signal_var: float = 1.0
    grid_lengthscale: float | tuple[float, ...] | None = None
    grid_signal_var: float = 1.0
    obs_noise_var: float = 0.01
    sde_order: int = 1                           # Matern-3/2 state dimension - 1
    max_opt_iters: int = 100
    p_threshold: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if self.components < 1:
            raise ConfigurationError("components must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.window_timestamps < 1:
            raise ConfigurationError("window_timestamps must be >= 1")
        if self.sde_order != 1:
            raise ConfigurationError("only the Matern-3/2 dynamics (sde_order=1) are supported")
        if not 0.0 < self.p_threshold < 1.0:
            raise ConfigurationError("p_threshold must lie in (0, 1)")
        if self.drift_var <= 0 or self.obs_noise_var <= 0:
            raise ConfigurationError("variances must be positive")

    @property
    def alpha(self) -> float:
        return 1.0 / self.components if self.concentration is None else self.concentration

    def grid_cells_for(self, attr: int) -> int:
        g = self.grid_cells
        cells = int(g[attr]) if isinstance(g, (tuple, list)) else int(g)
        if cells < 2:
            raise ConfigurationError("grids need at least 2 cells")
        return cells

    def grid_lengthscale_for(self, attr: int) -> float | None:
        ls = self.grid_lengthscale
        if ls is None:
            return None
        return float(ls[attr]) if isinstance(ls, (tuple, list)) else float(ls)

    def with_(self, **kwargs) -> "Config":
        return replace(self, **kwargs)


def default_config() -> Config:
    """Reference configuration: 20 components, 300-cell grids, 30 epochs,
    30-timestamp windows, concentration 1/K."""
    return Config()


def counts_from_assignments(
    assignments: np.ndarray,
    time_index: np.ndarray,
    unit_ids: Sequence[np.ndarray],
    cell_ids: Sequence[np.ndarray],
    *,
    components: int,
    unit_sizes: Sequence[int],
    cell_sizes: Sequence[int],
    window_timestamps: int,
) -> CountStats:
    """Cross-tabulate records by assigned component, from scratch.

    This is the reference counter: the incremental bookkeeping done during
    collapsed Gibbs sweeps must always agree with it exactly.
    """
    z = np.asarray(assignments, dtype=np.int64)
    t = np.asarray(time_index, dtype=np.int64)
    n = z.size
    if t.size != n:
        raise ContractViolation("assignments and time index differ in length")
    if n and (z.min() < 0 or z.max() >= components):
        raise ContractViolation("component assignment out of range")
    if n and (t.min() < 0 or t.max() >= window_timestamps):
        raise ContractViolation("time index out of range")

    comp = np.bincount(z, minlength=components).astype(np.int64)
    time_counts = np.zeros((window_timestamps, components), dtype=np.int64)
    np.add.at(time_counts, (t, z), 1)

    unit_counts = []
    for ids, size in zip(unit_ids, unit_sizes):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size != n:
            raise ContractViolation("unit id array length mismatch")
        if n and (ids.min() < 0 or ids.max() >= size):
            raise ContractViolation("unit id out of range")
        tab = np.zeros((components, size), dtype=np.int64)
        np.add.at(tab, (z, ids), 1)
        unit_counts.append(tab)

    cell_counts = []
    for ids, size in zip(cell_ids, cell_sizes):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size != n:
            raise ContractViolation("cell id array length mismatch")
        if n and (ids.min() < 0 or ids.max() >= size):
            raise ContractViolation("cell id out of range")
        tab = np.zeros((components, size), dtype=np.int64)
        np.add.at(tab, (z, ids), 1)
        cell_counts.append(tab)

    return CountStats(
        component_totals=comp,
        unit_counts=unit_counts,
        cell_counts=cell_counts,
        time_counts=time_counts,
    )
