"""Turning raw event rows into windows the engine can consume.

Responsibilities: CSV parsing (with schema errors that point at line numbers),
timestamp normalisation, grouping records into fixed-span windows of distinct
timestamps, categorical vocabularies, and the frozen value grids used to bin
continuous attributes.

Grids and vocabularies are frozen from the first window of a stream.  Each
vocabulary reserves one trailing "unknown" slot so values first seen later in
the stream still land somewhere the detector can see; grid lookups clamp to
the edge cells for the same reason.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateRangeError,
    OrderingError,
    SchemaError,
)
from .types import CurrentTensor, EventRecord

__all__ = [
    "ColumnRoles",
    "GridSpec",
    "RawRecord",
    "StreamWindower",
    "Vocab",
    "build_grid",
    "encode_window",
    "iter_csv_records",
    "locate_grid",
    "locate_grid_many",
    "parse_timestamp",
    "window_stream",
]

UNKNOWN_TOKEN = "<unknown>"


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridSpec:
    """A frozen 1-d binning: ``cells`` intervals with shared inner edges."""

    edges: np.ndarray    # (cells + 1,), strictly increasing
    centers: np.ndarray  # (cells,)
    widths: np.ndarray   # (cells,)

    @property
    def cells(self) -> int:
        return int(self.widths.size)


def build_grid(samples: np.ndarray, cells: int) -> GridSpec:
    """Equal-width grid over the central 99.8% of ``samples``.

    The base range is the [0.001, 0.999] quantile span; the first and last
    cells are then stretched to cover the raw sample min/max, so the tails
    seen so far always fall inside the grid.
    """
    if cells < 2:
        raise ConfigurationError(f"grids need at least 2 cells, got {cells}")
    s = np.asarray(samples, dtype=float)
    s = s[np.isfinite(s)]
    if s.size == 0:
        raise DegenerateRangeError("no finite samples to build a grid from")
    lo_q, hi_q = np.quantile(s, (0.001, 0.999))
    if hi_q <= lo_q:
        lo_q, hi_q = float(s.min()), float(s.max())
    if hi_q <= lo_q:
        raise DegenerateRangeError("all samples identical; cannot build a grid")
    edges = np.linspace(lo_q, hi_q, cells + 1)
    edges[0] = min(edges[0], float(s.min()))
    edges[-1] = max(edges[-1], float(s.max()))
    widths = np.diff(edges)
    if (widths <= 0).any():
        raise DegenerateRangeError("grid collapsed to zero-width cells")
    centers = 0.5 * (edges[:-1] + edges[1:])
    return GridSpec(edges=edges, centers=centers, widths=widths)


def locate_grid(spec: GridSpec, x: float) -> int:
    """Cell index of ``x``: half-open cells [e_g, e_{g+1}), clamped at the ends."""
    if not np.isfinite(x):
        raise ContractViolation(f"cannot bin non-finite value {x!r}")
    idx = int(np.searchsorted(spec.edges, x, side="right")) - 1
    return min(max(idx, 0), spec.cells - 1)


def locate_grid_many(spec: GridSpec, xs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`locate_grid`."""
    xs = np.asarray(xs, dtype=float)
    if not np.isfinite(xs).all():
        raise ContractViolation("cannot bin non-finite values")
    idx = np.searchsorted(spec.edges, xs, side="right") - 1
    return np.clip(idx, 0, spec.cells - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# vocabularies
# ---------------------------------------------------------------------------

class Vocab:
    """Frozen string-to-index mapping with a reserved trailing unknown slot."""

    def __init__(self, values: Iterable[str]):
        seen = sorted(set(values))
        self._index = {v: i for i, v in enumerate(seen)}
        self._tokens = seen + [UNKNOWN_TOKEN]

    @property
    def size(self) -> int:
        """Number of unit slots, including the unknown slot."""
        return len(self._tokens)

    @property
    def unknown_id(self) -> int:
        return len(self._tokens) - 1

    def encode(self, value: str) -> int:
        return self._index.get(value, self.unknown_id)

    def decode(self, unit: int) -> str:
        if not 0 <= unit < self.size:
            raise ContractViolation(f"unit index {unit} out of range")
        return self._tokens[unit]


# ---------------------------------------------------------------------------
# records and windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RawRecord:
    """A parsed but not yet vocabulary-encoded event row."""

    timestamp: float
    cat: tuple[str, ...] = ()
    cont: tuple[float, ...] = ()
    label: int | None = None


class StreamWindower:
    """Incrementally groups records into windows of ``span`` distinct timestamps.

    ``push`` returns the windows completed by the new record (zero or one);
    ``flush`` returns the trailing partial window, if any.  Records must
    arrive with non-decreasing timestamps.
    """

    def __init__(self, span: int):
        if span < 1:
            raise ConfigurationError("window span must be >= 1")
        self.span = span
        self._times: list[float] = []
        self._groups: list[list] = []
        self._prev_seen: float | None = None
        self._prev_window_end: float | None = None

    def push(self, record) -> list[CurrentTensor]:
        t = float(record.timestamp)
        if self._prev_seen is not None and t < self._prev_seen:
            raise OrderingError(
                f"timestamp {t} arrived after {self._prev_seen}; input must be sorted"
            )
        self._prev_seen = t
        if self._times and t == self._times[-1]:
            self._groups[-1].append(record)
            return []
        emitted = []
        if len(self._times) == self.span:
            emitted.append(self._emit())
        self._times.append(t)
        self._groups.append([record])
        return emitted

    def flush(self) -> CurrentTensor | None:
        if not self._times:
            return None
        return self._emit()

    def _emit(self) -> CurrentTensor:
        last = self._times[-1]
        start = self._prev_window_end if self._prev_window_end is not None else self._times[0]
        tensor = CurrentTensor(
            timestamps=np.array(self._times, dtype=float),
            records_by_time=self._groups,
            delta=last - start,
        )
        self._prev_window_end = last
        self._times = []
        self._groups = []
        return tensor


def window_stream(records: Iterable, span: int) -> Iterator[CurrentTensor]:
    """Group a sorted record iterable into windows; the final one may be short."""
    windower = StreamWindower(span)
    for record in records:
        yield from windower.push(record)
    tail = windower.flush()
    if tail is not None:
        yield tail


def encode_window(
    tensor: CurrentTensor, vocabs: Sequence[Vocab]
) -> CurrentTensor:
    """Replace categorical strings with vocabulary unit indices."""
    encoded = [
        [
            EventRecord(
                timestamp=r.timestamp,
                cat=tuple(v.encode(s) for v, s in zip(vocabs, r.cat)),
                cont=tuple(r.cont),
            )
            for r in group
        ]
        for group in tensor.records_by_time
    ]
    return CurrentTensor(
        timestamps=tensor.timestamps.copy(),
        records_by_time=encoded,
        delta=tensor.delta,
    )


# ---------------------------------------------------------------------------
# CSV input
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ColumnRoles:
    """Which CSV columns play which role."""

    timestamp: str
    categorical: tuple[str, ...] = ()
    continuous: tuple[str, ...] = ()
    label: str | None = None

    def __post_init__(self) -> None:
        names = [self.timestamp, *self.categorical, *self.continuous]
        if self.label is not None:
            names.append(self.label)
        if len(set(names)) != len(names):
            raise ConfigurationError("a CSV column was assigned two roles")


def parse_timestamp(raw: str) -> float:
    """Epoch seconds from a numeric string or an RFC 3339 datetime."""
    try:
        return float(raw)
    except ValueError:
        pass
    text = raw.strip()
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(text)
    except ValueError as exc:
        raise SchemaError(f"unparseable timestamp {raw!r}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.timestamp()


def iter_csv_records(
    path: str, roles: ColumnRoles, *, normalize: bool = True
) -> Iterator[RawRecord]:
    """Stream RawRecords out of a headered CSV file.

    Timestamps are normalised to seconds since the first record when
    ``normalize`` is set.  Malformed rows raise :class:`SchemaError` with the
    1-based line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        pos = {name: i for i, name in enumerate(header)}
        needed = [roles.timestamp, *roles.categorical, *roles.continuous]
        if roles.label is not None:
            needed.append(roles.label)
        missing = [c for c in needed if c not in pos]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}; header has {header}")

        origin: float | None = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(
                    f"{path} line {lineno}: expected {len(header)} fields, got {len(row)}"
                )
            try:
                ts = parse_timestamp(row[pos[roles.timestamp]])
            except SchemaError as exc:
                raise SchemaError(f"{path} line {lineno}: {exc}") from None
            if origin is None:
                origin = ts
            cat = tuple(row[pos[c]] for c in roles.categorical)
            cont = []
            for c in roles.continuous:
                try:
                    val = float(row[pos[c]])
                except ValueError:
                    raise SchemaError(
                        f"{path} line {lineno}: column {c!r} is not numeric: {row[pos[c]]!r}"
                    ) from None
                if not np.isfinite(val):
                    raise SchemaError(f"{path} line {lineno}: column {c!r} is not finite")
                cont.append(val)
            label: int | None = None
            if roles.label is not None:
                raw_label = row[pos[roles.label]].strip()
                if raw_label:
                    try:
                        label = int(float(raw_label))
                    except ValueError:
                        raise SchemaError(
                            f"{path} line {lineno}: label {raw_label!r} is not an integer"
                        ) from None
            yield RawRecord(
                timestamp=ts - origin if normalize else ts,
                cat=cat,
                cont=tuple(cont),
                label=label,
            )
