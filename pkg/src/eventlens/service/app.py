"""HTTP layer: FastAPI routes over a SessionManager."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from ..engine import WindowReport
from ..errors import ConfigurationError, NumericError, SchemaError
from .schemas import (
    BatchResult,
    ModelOut,
    RecordBatch,
    SessionConfig,
    SessionCreated,
    StatsOut,
    SummariesOut,
    WindowReportOut,
)
from .sessions import SessionManager, StreamSession
from ..ingestion import RawRecord


def _report_out(report: WindowReport) -> WindowReportOut:
    payload = report.to_json_dict()
    payload["wall_ms"] = report.wall_ms
    payload["timestamps"] = [float(v) for v in report.timestamps]
    payload["weights"] = [[float(v) for v in row] for row in report.weights]
    return WindowReportOut(**payload)


def create_app(manager: SessionManager | None = None) -> FastAPI:
    app = FastAPI(title="eventlens", version="0.1.0")
    app.state.manager = manager if manager is not None else SessionManager()

    @app.exception_handler(SchemaError)
    async def _schema_error(request, exc: SchemaError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ConfigurationError)
    async def _config_error(request, exc: ConfigurationError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(NumericError)
    async def _numeric_error(request, exc: NumericError):
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    def _session(session_id: str) -> StreamSession:
        session = app.state.manager.get(session_id)
        if session is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return session

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok", "sessions": len(app.state.manager)}

    @app.post("/sessions", response_model=SessionCreated)
    async def create_session(config: SessionConfig) -> SessionCreated:
        session = app.state.manager.create(config.to_config())
        return SessionCreated(session_id=session.session_id)

    @app.post("/sessions/{session_id}/records", response_model=BatchResult)
    async def add_records(session_id: str, batch: RecordBatch) -> BatchResult:
        session = _session(session_id)
        records = [
            RawRecord(
                timestamp=r.timestamp,
                cat=tuple(r.categorical),
                cont=tuple(r.continuous),
                label=r.label,
            )
            for r in batch.records
        ]
        reports = session.add_records(records)
        return BatchResult(reports=[_report_out(r) for r in reports])

    @app.post("/sessions/{session_id}/flush", response_model=BatchResult)
    async def flush(session_id: str) -> BatchResult:
        reports = _session(session_id).flush()
        return BatchResult(reports=[_report_out(r) for r in reports])

    @app.get("/sessions/{session_id}/stats", response_model=StatsOut)
    async def stats(session_id: str) -> StatsOut:
        return StatsOut(**_session(session_id).stats_snapshot())

    @app.get("/sessions/{session_id}/summaries", response_model=SummariesOut)
    async def summaries(session_id: str, top: int = 10) -> SummariesOut:
        return SummariesOut(**_session(session_id).summaries(top=top))

    @app.get("/sessions/{session_id}/model", response_model=ModelOut)
    async def model(session_id: str) -> ModelOut:
        return ModelOut(**_session(session_id).model_snapshot())

    @app.delete("/sessions/{session_id}")
    async def delete(session_id: str) -> dict:
        if not app.state.manager.delete(session_id):
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return {"deleted": session_id}

    return app


app = create_app()
