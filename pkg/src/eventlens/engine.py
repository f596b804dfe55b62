"""Window-by-window driver: fit, score, fold into history, carry forward.

One :class:`StreamEngine` owns everything that persists across windows — the
running normal-history statistics, the carried model (categorical tables,
density scores, latent-trajectory end states), and the window counter that
seeds per-window randomness.  Per-window memory is released as soon as the
report is produced, so processing cost and footprint do not grow with stream
length.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .detector import WindowVerdict, score_window, update_stats
from .gpssm import SsmKernel, matern32_ssm
from .inference import CarryState, StreamLayout, build_grid_filter, run_inference
from .ingestion import GridSpec, build_grid
from .types import Config, CurrentTensor, ModelParams, StreamStats

__all__ = ["StreamEngine", "WindowReport", "build_layout", "softmax_rows"]


def softmax_rows(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-shift; rows sum to 1."""
    z = np.asarray(scores, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def _median_spacing(points: np.ndarray) -> float | None:
    pts = np.unique(np.asarray(points, dtype=float))
    if pts.size < 2:
        return None
    return float(np.median(np.diff(pts)))


def build_layout(
    timestamps: np.ndarray,
    unit_sizes: tuple[int, ...],
    value_arrays: list[np.ndarray],
    config: Config,
) -> StreamLayout:
    """Freeze the stream geometry from the first window's raw data.

    Grids span the observed value range per continuous attribute; unset
    lengthscales default to 10x the median spacing of the axis they smooth
    (timestamp gaps for the temporal kernel, cell widths for grid kernels),
    so the latent functions vary on a scale coarser than single steps.
    """
    grids: list[GridSpec] = []
    for m, values in enumerate(value_arrays):
        grids.append(build_grid(values, config.grid_cells_for(m)))

    if config.time_lengthscale is not None:
        time_ls = float(config.time_lengthscale)
    else:
        gap = _median_spacing(timestamps)
        time_ls = 10.0 * gap if gap is not None else 1.0
    time_kernel = matern32_ssm(time_ls, config.time_signal_var)

    grid_kernels: list[SsmKernel] = []
    grid_filters = []
    for m, spec in enumerate(grids):
        ls = config.grid_lengthscale_for(m)
        if ls is None:
            ls = 10.0 * float(np.median(spec.widths))
        kern = matern32_ssm(ls, config.grid_signal_var)
        grid_kernels.append(kern)
        grid_filters.append(build_grid_filter(kern, spec.centers, config.drift_var))

    return StreamLayout(
        unit_sizes=tuple(unit_sizes),
        grids=tuple(grids),
        time_kernel=time_kernel,
        grid_kernels=tuple(grid_kernels),
        grid_filters=tuple(grid_filters),
    )


@dataclass
class WindowReport:
    """Everything the driver knows about one processed window.

    ``to_json_dict`` keeps only the scalar, deterministic fields; wall time
    and the dense arrays stay in memory for sidecar exports.
    """

    index: int
    t_start: float
    t_end: float
    n_records: int
    delta: float
    score: float
    dof: int
    p_value: float
    anomalous: bool
    component_mass: np.ndarray          # (K,) time-averaged softmax weight
    wall_ms: float
    timestamps: np.ndarray = field(repr=False)      # (Tc,)
    weights: np.ndarray = field(repr=False)         # (Tc, K) softmax of B
    assignments: np.ndarray = field(repr=False)     # (N,) component per record

    def to_json_dict(self) -> dict:
        return {
            "window": self.index,
            "t_start": self.t_start,
            "t_end": self.t_end,
            "n_records": self.n_records,
            "score": self.score,
            "dof": self.dof,
            "p_value": self.p_value,
            "anomalous": self.anomalous,
            "component_mass": [float(v) for v in self.component_mass],
        }


class StreamEngine:
    """Drives the full per-window loop over an already-encoded stream."""

    def __init__(self, layout: StreamLayout, config: Config, seed: int | None = None):
        from .samplers import RngHandle

        self.layout = layout
        self.config = config
        self._root = RngHandle(config.seed if seed is None else seed)
        self.stats = StreamStats.zeros(
            config.components, layout.unit_sizes, layout.cell_sizes
        )
        self.carry = CarryState.initial(config.components, layout)
        self.last_params: ModelParams | None = None
        self.window_index = 0

    def process_window(self, tensor: CurrentTensor) -> WindowReport:
        start = time.perf_counter()
        rng = self._root.split(self.window_index).generator
        result = run_inference(tensor, self.carry, self.config, self.layout, rng)
        verdict: WindowVerdict = score_window(
            result.counts,
            self.stats,
            tensor.delta,
            self.layout.unit_sizes,
            self.layout.cell_sizes,
            self.config.p_threshold,
        )
        self.stats = update_stats(self.stats, result.counts, tensor.delta, verdict.anomalous)
        self.carry = result.carry
        self.last_params = result.params

        weights = softmax_rows(result.params.traj_means[:, :, 0].T)  # (Tc, K)
        report = WindowReport(
            index=self.window_index,
            t_start=float(tensor.timestamps[0]),
            t_end=float(tensor.timestamps[-1]),
            n_records=tensor.n_records,
            delta=float(tensor.delta),
            score=verdict.score,
            dof=verdict.dof,
            p_value=verdict.p_value,
            anomalous=verdict.anomalous,
            component_mass=weights.mean(axis=0),
            wall_ms=(time.perf_counter() - start) * 1e3,
            timestamps=np.asarray(tensor.timestamps, dtype=float),
            weights=weights,
            assignments=result.assignments,
        )
        self.window_index += 1
        return report
