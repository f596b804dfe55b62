"""Shared builders for the test suite."""

import numpy as np
import pytest

from eventlens.types import CurrentTensor, EventRecord


def make_tensor(spec, delta=None):
    """Build a CurrentTensor from {timestamp: [(cat..., cont...), ...]}.

    ``spec`` maps each timestamp to a list of (cat_tuple, cont_tuple) pairs;
    an empty list leaves that timestamp without records.
    """
    times = sorted(spec)
    groups = [
        [EventRecord(timestamp=float(t), cat=c, cont=x) for c, x in spec[t]]
        for t in times
    ]
    span = float(times[-1]) - float(times[0]) if len(times) > 1 else 1.0
    return CurrentTensor(
        timestamps=np.array(times, dtype=float),
        records_by_time=groups,
        delta=span if delta is None else delta,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
