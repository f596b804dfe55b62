"""Session clients: in-process by default, HTTP against a running service.

Both clients speak the same dict shapes as the REST API, so the CLI works
identically either way; the in-process path skips serialization and keeps
single-machine runs dependency-light and fast.
"""

from __future__ import annotations

from dataclasses import asdict

from .engine import WindowReport
from .errors import EventLensError, NumericError, SchemaError
from .ingestion import RawRecord
from .service.schemas import SessionConfig
from .service.sessions import SessionManager
from .types import Config

__all__ = ["HttpClient", "LocalClient", "config_payload"]


def config_payload(config: Config) -> dict:
    """JSON-ready session settings from an engine Config."""
    payload = asdict(config)
    for key, value in payload.items():
        if isinstance(value, tuple):
            payload[key] = list(value)
    return payload


def _report_dict(report: WindowReport) -> dict:
    out = report.to_json_dict()
    out["wall_ms"] = report.wall_ms
    out["timestamps"] = [float(v) for v in report.timestamps]
    out["weights"] = [[float(v) for v in row] for row in report.weights]
    return out


class LocalClient:
    """Drives sessions in-process against a SessionManager."""

    def __init__(self, manager: SessionManager | None = None):
        self.manager = manager if manager is not None else SessionManager()

    def create_session(self, config: dict) -> str:
        parsed = SessionConfig(**config)
        return self.manager.create(parsed.to_config()).session_id

    def _session(self, session_id: str):
        session = self.manager.get(session_id)
        if session is None:
            raise SchemaError(f"no session {session_id!r}")
        return session

    def add_records(self, session_id: str, records: list[dict]) -> list[dict]:
        raw = [
            RawRecord(
                timestamp=float(r["timestamp"]),
                cat=tuple(r.get("categorical", ())),
                cont=tuple(r.get("continuous", ())),
                label=r.get("label"),
            )
            for r in records
        ]
        return [_report_dict(rep) for rep in self._session(session_id).add_records(raw)]

    def flush(self, session_id: str) -> list[dict]:
        return [_report_dict(rep) for rep in self._session(session_id).flush()]

    def stats(self, session_id: str) -> dict:
        return self._session(session_id).stats_snapshot()

    def summaries(self, session_id: str, top: int = 10) -> dict:
        return self._session(session_id).summaries(top=top)

    def model(self, session_id: str) -> dict:
        return self._session(session_id).model_snapshot()

    def delete(self, session_id: str) -> None:
        if not self.manager.delete(session_id):
            raise SchemaError(f"no session {session_id!r}")


class HttpClient:
    """Same session surface over REST (for `--server URL`)."""

    def __init__(self, base_url: str, timeout: float = 300.0):
        import httpx

        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def close(self) -> None:
        self._client.close()

    def _unwrap(self, response):
        if response.status_code in (400, 404, 422):
            raise SchemaError(f"server rejected request: {response.text}")
        if response.status_code >= 500:
            raise NumericError(f"server error: {response.text}")
        if response.status_code >= 300:
            raise EventLensError(f"unexpected response {response.status_code}: {response.text}")
        return response.json()

    def create_session(self, config: dict) -> str:
        return self._unwrap(self._client.post("/sessions", json=config))["session_id"]

    def add_records(self, session_id: str, records: list[dict]) -> list[dict]:
        body = {"records": records}
        return self._unwrap(
            self._client.post(f"/sessions/{session_id}/records", json=body)
        )["reports"]

    def flush(self, session_id: str) -> list[dict]:
        return self._unwrap(self._client.post(f"/sessions/{session_id}/flush"))["reports"]

    def stats(self, session_id: str) -> dict:
        return self._unwrap(self._client.get(f"/sessions/{session_id}/stats"))

    def summaries(self, session_id: str, top: int = 10) -> dict:
        return self._unwrap(
            self._client.get(f"/sessions/{session_id}/summaries", params={"top": top})
        )

    def model(self, session_id: str) -> dict:
        return self._unwrap(self._client.get(f"/sessions/{session_id}/model"))

    def delete(self, session_id: str) -> None:
        self._unwrap(self._client.delete(f"/sessions/{session_id}"))
