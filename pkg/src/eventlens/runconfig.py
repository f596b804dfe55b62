"""Flat key=value settings files for the command-line tools.

One key per line, ``key = value``; blank lines and ``#`` comments are
skipped.  A blank value means "unset" (fall back to the default).  Unknown
keys are schema errors so typos fail loudly instead of silently running
with defaults.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaError
from .ingestion import ColumnRoles
from .types import Config

__all__ = [
    "RunSettings",
    "build_config",
    "build_run_settings",
    "parse_kv_file",
]


def parse_kv_file(path) -> dict[str, str]:
    text = Path(path).read_text()
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected key = value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise SchemaError(f"{path}:{lineno}: empty key")
        if key in out:
            raise SchemaError(f"{path}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def _to_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise SchemaError(f"key {key!r} expects an integer, got {value!r}") from exc


def _to_float(key: str, value: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise SchemaError(f"key {key!r} expects a number, got {value!r}") from exc


def _to_list(value: str) -> list[str]:
    return [part.strip() for part in value.split(",") if part.strip()]


_CONFIG_INT_KEYS = {
    "components", "epochs", "window_timestamps", "sde_order", "max_opt_iters", "seed",
}
_CONFIG_FLOAT_KEYS = {
    "concentration", "drift_var", "time_lengthscale", "time_signal_var",
    "grid_signal_var", "obs_noise_var", "p_threshold",
}


def build_config(kv: dict[str, str], defaults: Config | None = None) -> Config:
    """Overlay recognized engine keys from ``kv`` onto ``defaults``."""
    base = defaults if defaults is not None else Config()
    overrides = {}
    for key, value in kv.items():
        if value == "":
            continue
        if key in _CONFIG_INT_KEYS:
            overrides[key] = _to_int(key, value)
        elif key in _CONFIG_FLOAT_KEYS:
            overrides[key] = _to_float(key, value)
        elif key == "grid_cells":
            cells = [_to_int(key, v) for v in _to_list(value)]
            overrides[key] = cells[0] if len(cells) == 1 else tuple(cells)
        elif key == "grid_lengthscale":
            scales = [_to_float(key, v) for v in _to_list(value)]
            overrides[key] = scales[0] if len(scales) == 1 else tuple(scales)
        else:
            raise SchemaError(f"unknown engine key: {key!r}")
    return base.with_(**overrides)


_IO_KEYS = {
    "input", "output_dir", "timestamp_column", "categorical_columns",
    "continuous_columns", "label_column",
}


@dataclass(frozen=True)
class RunSettings:
    input: Path
    output_dir: Path
    roles: ColumnRoles
    config: Config


def build_run_settings(kv: dict[str, str]) -> RunSettings:
    engine_kv = {k: v for k, v in kv.items() if k not in _IO_KEYS}
    config = build_config(engine_kv)

    missing = [k for k in ("input", "timestamp_column") if not kv.get(k)]
    if missing:
        raise SchemaError(f"run settings need keys: {', '.join(missing)}")
    roles = ColumnRoles(
        timestamp=kv["timestamp_column"],
        categorical=tuple(_to_list(kv.get("categorical_columns", ""))),
        continuous=tuple(_to_list(kv.get("continuous_columns", ""))),
        label=kv.get("label_column") or None,
    )
    if not roles.categorical and not roles.continuous:
        raise SchemaError("need at least one categorical or continuous column")
    return RunSettings(
        input=Path(kv["input"]),
        output_dir=Path(kv.get("output_dir") or "."),
        roles=roles,
        config=config,
    )
