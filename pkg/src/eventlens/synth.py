"""Synthetic labeled event streams for end-to-end checks and benchmarks.

Each planted component owns a disjoint slice of the categorical vocabulary,
one Gaussian value mode, and a share of the overall event rate that is
piecewise-constant across window segments.  Anomalies are rate bursts: in a
burst window one component emits ``burst_multiplier`` times its usual rate,
and the extra records carry label 1 (the "group" pattern — individually the
records look ordinary, only their volume is off).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, SchemaError

__all__ = ["SynthSpec", "generate_stream", "write_stream_csv"]


@dataclass(frozen=True)
class SynthSpec:
    components: int = 3
    units_per_component: int = 1
    windows: int = 40
    window_timestamps: int = 30
    base_rate: float = 12.0          # expected records per timestamp, all components
    mode_spacing: float = 4.0        # distance between adjacent value modes
    mode_std: float = 0.6
    segment_windows: int = 5         # windows per constant mixing-proportion block
    mix_concentration: float = 1.0   # Dirichlet concentration of segment proportions
    wave_amplitude: float = 0.0      # per-component smooth rate modulation in [0, 1)
    wave_period: float | None = None  # modulation period; None: one window span
    burst_fraction: float = 0.1
    burst_multiplier: float = 20.0
    burst_component: int | None = None   # None: rotate across bursts
    burst_warmup: int = 5            # windows at the head that stay burst-free
    seed: int = 0

    def __post_init__(self):
        if self.components < 1 or self.units_per_component < 1:
            raise ConfigurationError("components and units_per_component must be >= 1")
        if self.windows < 1 or self.window_timestamps < 2:
            raise ConfigurationError("need >= 1 windows of >= 2 timestamps")
        if self.base_rate <= 0 or self.mode_std <= 0:
            raise ConfigurationError("base_rate and mode_std must be positive")
        if not 0.0 <= self.burst_fraction < 1.0:
            raise ConfigurationError("burst_fraction must lie in [0, 1)")
        if self.burst_multiplier < 1.0:
            raise ConfigurationError("burst_multiplier must be >= 1")
        if self.segment_windows < 1:
            raise ConfigurationError("segment_windows must be >= 1")
        if self.mix_concentration <= 0:
            raise ConfigurationError("mix_concentration must be positive")
        if not 0.0 <= self.wave_amplitude < 1.0:
            raise ConfigurationError("wave_amplitude must lie in [0, 1)")
        if self.wave_period is not None and self.wave_period <= 0:
            raise ConfigurationError("wave_period must be positive")
        if self.burst_component is not None and not (
            0 <= self.burst_component < self.components
        ):
            raise ConfigurationError("burst_component out of range")

    @classmethod
    def from_mapping(cls, raw: dict) -> "SynthSpec":
        kwargs = {}
        fields = set(cls.__dataclass_fields__)
        ints = {
            "components", "units_per_component", "windows", "window_timestamps",
            "segment_windows", "burst_warmup", "seed",
        }
        floats = {
            "base_rate", "mode_spacing", "mode_std", "mix_concentration",
            "wave_amplitude", "wave_period", "burst_fraction", "burst_multiplier",
        }
        for key, value in raw.items():
            if key not in fields:
                raise SchemaError(f"unknown stream-spec key: {key!r}")
            if value is None or value == "":
                continue
            try:
                if key in ints:
                    kwargs[key] = int(value)
                elif key in floats:
                    kwargs[key] = float(value)
                elif key == "burst_component":
                    kwargs[key] = int(value)
                else:  # pragma: no cover - no other field kinds today
                    kwargs[key] = value
            except ValueError as exc:
                raise SchemaError(f"bad value for stream-spec key {key!r}: {value!r}") from exc
        return cls(**kwargs)

    def unit_name(self, component: int, slot: int) -> str:
        return f"u{component:02d}_{slot:02d}"

    def mode_mean(self, component: int) -> float:
        return (component - 0.5 * (self.components - 1)) * self.mode_spacing

    def wave_factor(self, component: int, t: float) -> float:
        """Smooth rate modulation with a component-specific phase, mean 1."""
        if self.wave_amplitude == 0.0:
            return 1.0
        period = self.wave_period if self.wave_period is not None else float(self.window_timestamps)
        phase = 2.0 * math.pi * component / self.components
        return 1.0 + self.wave_amplitude * math.cos(2.0 * math.pi * t / period - phase)


@dataclass
class SynthRecord:
    timestamp: float
    unit: str
    value: float
    label: int
    component: int


@dataclass
class SynthStream:
    spec: SynthSpec
    records: list[SynthRecord]
    burst_windows: list[int] = field(default_factory=list)
    burst_targets: dict[int, int] = field(default_factory=dict)

    def labels_per_window(self) -> np.ndarray:
        counts = np.zeros(self.spec.windows, dtype=np.int64)
        tc = self.spec.window_timestamps
        for rec in self.records:
            if rec.label:
                counts[int(rec.timestamp) // tc] += 1
        return counts


def _segment_proportions(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """(n_segments, K) mixing proportions: half Dirichlet draw, half uniform.

    The uniform floor keeps every component active in every segment so the
    per-window counts never starve a component entirely.
    """
    n_segments = math.ceil(spec.windows / spec.segment_windows)
    raw = rng.dirichlet(np.full(spec.components, spec.mix_concentration), size=n_segments)
    return 0.5 * raw + 0.5 / spec.components


def _pick_burst_windows(spec: SynthSpec, rng: np.random.Generator) -> list[int]:
    eligible = np.arange(min(spec.burst_warmup, spec.windows), spec.windows)
    want = int(round(spec.burst_fraction * spec.windows))
    if want == 0 or eligible.size == 0:
        return []
    want = min(want, eligible.size)
    chosen = rng.choice(eligible, size=want, replace=False)
    return sorted(int(w) for w in chosen)


def generate_stream(spec: SynthSpec) -> SynthStream:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5F]))
    proportions = _segment_proportions(spec, rng)
    burst_windows = _pick_burst_windows(spec, rng)
    burst_targets: dict[int, int] = {}
    for i, w in enumerate(burst_windows):
        if spec.burst_component is not None:
            burst_targets[w] = spec.burst_component
        else:
            burst_targets[w] = i % spec.components

    tc = spec.window_timestamps
    records: list[SynthRecord] = []
    for w in range(spec.windows):
        pi = proportions[w // spec.segment_windows]
        burst_k = burst_targets.get(w)
        for j in range(tc):
            t = float(w * tc + j)
            for k in range(spec.components):
                lam = spec.base_rate * pi[k] * spec.wave_factor(k, t)
                n_base = int(rng.poisson(lam))
                n_extra = 0
                if burst_k == k:
                    n_extra = int(rng.poisson((spec.burst_multiplier - 1.0) * lam))
                for label, n in ((0, n_base), (1, n_extra)):
                    if n == 0:
                        continue
                    slots = rng.integers(0, spec.units_per_component, size=n)
                    values = rng.normal(spec.mode_mean(k), spec.mode_std, size=n)
                    for s, v in zip(slots, values):
                        records.append(
                            SynthRecord(t, spec.unit_name(k, int(s)), float(v), label, k)
                        )
    return SynthStream(
        spec=spec,
        records=records,
        burst_windows=burst_windows,
        burst_targets=burst_targets,
    )


def write_stream_csv(stream: SynthStream, path) -> None:
    """Timestamp-sorted CSV; generation already emits in timestamp order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "unit", "value", "label", "component"])
        for rec in stream.records:
            writer.writerow(
                [repr(rec.timestamp), rec.unit, repr(rec.value), rec.label, rec.component]
            )
