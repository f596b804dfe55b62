"""Per-stream session state and the in-process session registry."""

from __future__ import annotations

import uuid

import numpy as np

from ..engine import StreamEngine, WindowReport, build_layout
from ..errors import SchemaError
from ..ingestion import RawRecord, StreamWindower, Vocab, encode_window
from ..types import Config, CurrentTensor


class StreamSession:
    """One live stream: windower -> (lazy) frozen layout -> engine.

    The vocabulary, grids, and kernels are frozen from the first completed
    window; until then records only accumulate in the windower.
    """

    def __init__(self, config: Config, session_id: str | None = None):
        self.session_id = session_id or uuid.uuid4().hex
        self.config = config
        self.windower = StreamWindower(config.window_timestamps)
        self.vocabs: list[Vocab] | None = None
        self.engine: StreamEngine | None = None
        self.anomalous_windows = 0
        self._arity: tuple[int, int] | None = None

    # -- ingestion ---------------------------------------------------------

    def add_records(self, records: list[RawRecord]) -> list[WindowReport]:
        reports = []
        for record in records:
            self._check_arity(record)
            for window in self.windower.push(record):
                reports.append(self._process(window))
        return reports

    def flush(self) -> list[WindowReport]:
        tail = self.windower.flush()
        return [self._process(tail)] if tail is not None else []

    def _check_arity(self, record: RawRecord) -> None:
        arity = (len(record.cat), len(record.cont))
        if self._arity is None:
            if arity == (0, 0):
                raise SchemaError("records need at least one attribute")
            self._arity = arity
        elif arity != self._arity:
            raise SchemaError(
                f"record has {arity[0]} categorical / {arity[1]} continuous "
                f"attributes; this stream uses {self._arity[0]} / {self._arity[1]}"
            )

    def _process(self, raw_window: CurrentTensor) -> WindowReport:
        if self.engine is None:
            self._freeze_layout(raw_window)
        assert self.vocabs is not None and self.engine is not None
        report = self.engine.process_window(encode_window(raw_window, self.vocabs))
        if report.anomalous:
            self.anomalous_windows += 1
        return report

    def _freeze_layout(self, first: CurrentTensor) -> None:
        flat = [r for group in first.records_by_time for r in group]
        m1, m2 = self._arity or (0, 0)
        self.vocabs = [Vocab(r.cat[i] for r in flat) for i in range(m1)]
        values = [np.array([r.cont[j] for r in flat], dtype=float) for j in range(m2)]
        layout = build_layout(
            first.timestamps,
            tuple(v.size for v in self.vocabs),
            values,
            self.config,
        )
        self.engine = StreamEngine(layout, self.config)

    # -- introspection -----------------------------------------------------

    @property
    def windows_processed(self) -> int:
        return self.engine.window_index if self.engine is not None else 0

    def stats_snapshot(self) -> dict:
        if self.engine is None:
            return {
                "windows_processed": 0,
                "anomalous_windows": 0,
                "normal_span": 0.0,
                "normal_records": 0,
                "component_totals": [],
            }
        stats = self.engine.stats
        return {
            "windows_processed": self.engine.window_index,
            "anomalous_windows": self.anomalous_windows,
            "normal_span": float(stats.normal_span),
            "normal_records": int(stats.component_totals.sum()),
            "component_totals": [int(v) for v in stats.component_totals],
        }

    def summaries(self, top: int = 10) -> dict:
        if self.engine is None or self.engine.last_params is None:
            raise SchemaError("no window has been processed yet")
        params = self.engine.last_params
        layout = self.engine.layout
        assert self.vocabs is not None
        rankings = []
        for m, table in enumerate(params.unit_probs):
            vocab = self.vocabs[m]
            for k in range(table.shape[0]):
                order = np.argsort(-table[k])[:top]
                rankings.append(
                    {
                        "attribute": m,
                        "component": k,
                        "units": [(vocab.decode(int(u)), float(table[k, u])) for u in order],
                    }
                )
        curves = []
        for m, scores in enumerate(params.density_scores):
            spec = layout.grids[m]
            for k in range(scores.shape[0]):
                dens = _normalized_density(scores[k], spec.widths)
                curves.append(
                    {
                        "attribute": m,
                        "component": k,
                        "centers": [float(c) for c in spec.centers],
                        "density": [float(d) for d in dens],
                    }
                )
        return {"top_units": rankings, "densities": curves}

    def model_snapshot(self) -> dict:
        if self.engine is None or self.engine.last_params is None:
            raise SchemaError("no window has been processed yet")
        params = self.engine.last_params
        layout = self.engine.layout
        assert self.vocabs is not None
        return {
            "components": self.config.components,
            "unit_probs": [t.tolist() for t in params.unit_probs],
            "density_scores": [t.tolist() for t in params.density_scores],
            "unit_names": [
                [v.decode(u) for u in range(v.size)] for v in self.vocabs
            ],
            "grid_edges": [[float(e) for e in g.edges] for g in layout.grids],
            "windows_processed": self.engine.window_index,
        }


def _normalized_density(scores: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Cell densities whose width-weighted sum is exactly 1."""
    z = scores - scores.max()
    mass = widths * np.exp(z)
    mass /= mass.sum()
    return mass / widths


class SessionManager:
    """Registry of live sessions, keyed by opaque ids."""

    def __init__(self):
        self._sessions: dict[str, StreamSession] = {}

    def create(self, config: Config) -> StreamSession:
        session = StreamSession(config)
        self._sessions[session.session_id] = session
        return session

    def get(self, session_id: str) -> StreamSession | None:
        return self._sessions.get(session_id)

    def delete(self, session_id: str) -> bool:
        return self._sessions.pop(session_id, None) is not None

    def __len__(self) -> int:
        return len(self._sessions)
