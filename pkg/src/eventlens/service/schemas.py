"""Request/response bodies for the streaming sessions API."""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field

from ..types import Config


class SessionConfig(BaseModel):
    """Engine settings accepted when opening a session (all optional)."""

    model_config = ConfigDict(extra="forbid")

    components: int = 20
    grid_cells: int | tuple[int, ...] = 300
    epochs: int = 30
    window_timestamps: int = 30
    concentration: float | None = None
    drift_var: float = 0.25
    time_lengthscale: float | None = None
    grid_lengthscale: float | tuple[float, ...] | None = None
    time_signal_var: float = 1.0
    grid_signal_var: float = 1.0
    obs_noise_var: float = 0.01
    sde_order: int = 1
    max_opt_iters: int = 100
    p_threshold: float = 0.05
    seed: int = 0

    def to_config(self) -> Config:
        return Config(**self.model_dump())


class RecordIn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    timestamp: float
    categorical: list[str] = Field(default_factory=list)
    continuous: list[float] = Field(default_factory=list)
    label: int | None = None


class RecordBatch(BaseModel):
    model_config = ConfigDict(extra="forbid")

    records: list[RecordIn]


class SessionCreated(BaseModel):
    session_id: str


class WindowReportOut(BaseModel):
    window: int
    t_start: float
    t_end: float
    n_records: int
    score: float
    dof: int
    p_value: float
    anomalous: bool
    component_mass: list[float]
    wall_ms: float
    timestamps: list[float]
    weights: list[list[float]]


class BatchResult(BaseModel):
    reports: list[WindowReportOut]


class StatsOut(BaseModel):
    windows_processed: int
    anomalous_windows: int
    normal_span: float
    normal_records: int
    component_totals: list[int]


class UnitRanking(BaseModel):
    attribute: int
    component: int
    units: list[tuple[str, float]]


class DensityCurve(BaseModel):
    attribute: int
    component: int
    centers: list[float]
    density: list[float]


class SummariesOut(BaseModel):
    top_units: list[UnitRanking]
    densities: list[DensityCurve]


class ModelOut(BaseModel):
    components: int
    unit_probs: list[list[list[float]]]       # per cat attr: (K, U)
    density_scores: list[list[list[float]]]   # per cont attr: (K, G)
    unit_names: list[list[str]]               # per cat attr
    grid_edges: list[list[float]]             # per cont attr
    windows_processed: int
