"""Streaming event-group summarization and group-anomaly detection.

The engine ingests an ordered stream of records (timestamp + categorical +
continuous attributes), summarizes each fixed-span window into K latent
components with smooth temporal weights, and scores the window's count
pattern against accumulated history with a chi-squared test.
"""

from .types import Config, CountStats, CurrentTensor, EventRecord, ModelParams, StreamStats, default_config
from .errors import (
    ConfigurationError,
    ContractViolation,
    DegenerateRangeError,
    EventLensError,
    NumericError,
    OrderingError,
    SchemaError,
    UndefinedMetricError,
)
from .detector import WindowVerdict, score_window, update_stats
from .engine import StreamEngine, WindowReport, build_layout
from .ingestion import ColumnRoles, RawRecord, StreamWindower, Vocab, build_grid, iter_csv_records
from .inference import CarryState, run_inference
from .samplers import RngHandle, sample_polya_gamma

__version__ = "0.1.0"

__all__ = [
    "CarryState",
    "ColumnRoles",
    "Config",
    "ConfigurationError",
    "ContractViolation",
    "CountStats",
    "CurrentTensor",
    "DegenerateRangeError",
    "EventLensError",
    "EventRecord",
    "ModelParams",
    "NumericError",
    "OrderingError",
    "RawRecord",
    "RngHandle",
    "SchemaError",
    "StreamEngine",
    "StreamStats",
    "StreamWindower",
    "UndefinedMetricError",
    "Vocab",
    "WindowReport",
    "WindowVerdict",
    "build_grid",
    "build_layout",
    "default_config",
    "iter_csv_records",
    "run_inference",
    "sample_polya_gamma",
    "score_window",
    "update_stats",
    "__version__",
]
