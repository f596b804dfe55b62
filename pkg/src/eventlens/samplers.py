"""Random draws: seeded handles, categorical draws, Polya-Gamma draws.

The Polya-Gamma sampler follows the exact alternating-series rejection scheme
for PG(1, c) (Devroye-style, mixing a truncated inverse-Gaussian body with an
exponential tail), with integer shapes b <= _EXACT_SHAPE_LIMIT drawn as sums of
b exact draws and larger shapes drawn from a moment-matched Gaussian truncated
at zero.  PG(b, c) has

    mean      b * tanh(c/2) / (2c)            (b/4 at c = 0)
    variance  b * (sinh(c) - c) / (4 c^3) / cosh(c/2)^2   (b/24 at c = 0)
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractViolation

__all__ = [
    "RngHandle",
    "pg_mean",
    "pg_variance",
    "sample_categorical",
    "sample_polya_gamma",
]

_EXACT_SHAPE_LIMIT = 170


class RngHandle:
    """A seeded PCG64 generator with deterministic child derivation.

    ``split(key)`` derives an independent stream from (seed, key); the same
    (seed, key) pair always yields the same stream regardless of how many
    draws the parent has made.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = _path
        self.generator = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, *_path]))
        )

    def split(self, key: int) -> "RngHandle":
        return RngHandle(self.seed, self._path + (int(key),))

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngHandle(seed={self.seed}, path={self._path})"


def sample_categorical(weights: np.ndarray, rng: np.random.Generator) -> int:
    """Draw one index proportional to ``weights`` (unnormalised, >= 0)."""
    w = np.asarray(weights, dtype=float)
    total = w.sum()
    if not np.isfinite(total) or total <= 0.0 or (w < 0).any():
        raise ContractViolation("categorical weights must be non-negative with positive finite sum")
    cdf = np.cumsum(w)
    u = rng.random() * cdf[-1]
    return int(np.searchsorted(cdf, u, side="right").clip(0, w.size - 1))


# ---------------------------------------------------------------------------
# Polya-Gamma
# ---------------------------------------------------------------------------

_TRUNC = 0.64
_HALF_PI_SQ = 0.5 * math.pi * math.pi
_SQRT2 = math.sqrt(2.0)


def pg_mean(b: float, c: float) -> float:
    c = abs(c)
    if c < 1e-8:
        # tanh(x)/x -> 1 - x^2/3
        x = 0.5 * c
        return 0.25 * b * (1.0 - x * x / 3.0)
    return 0.5 * b * math.tanh(0.5 * c) / c


def pg_variance(b: float, c: float) -> float:
    c = abs(c)
    if c < 1e-4:
        return b / 24.0
    # (sinh c - c)/c^3 * sech(c/2)^2, rearranged so large c cannot overflow:
    # sinh(c)*sech(c/2)^2 = 2*tanh(c/2)
    th = math.tanh(0.5 * c)
    sech2 = 1.0 / math.cosh(0.5 * c) ** 2 if c < 700 else 0.0
    return b * (2.0 * th - c * sech2) / (4.0 * c**3)


def _log_std_normal_cdf(x: float) -> float:
    """log Phi(x), safe far into the left tail."""
    if x > -15.0:
        return math.log(0.5 * math.erfc(-x / _SQRT2))
    # leading asymptotic term; only used where the result is astronomically small
    return -0.5 * x * x - math.log(-x) - 0.5 * math.log(2.0 * math.pi)


def _inverse_gaussian_cdf_unit_shape(t: float, z: float) -> float:
    """CDF at ``t`` of an inverse Gaussian with mean 1/z and shape 1 (z >= 0)."""
    rt = math.sqrt(t)
    if z <= 0.0:
        return math.erfc(1.0 / math.sqrt(2.0 * t))
    a = (t * z - 1.0) / rt
    b = -(t * z + 1.0) / rt
    term1 = 0.5 * math.erfc(-a / _SQRT2)
    log_term2 = 2.0 * z + _log_std_normal_cdf(b)
    return term1 + (math.exp(log_term2) if log_term2 < 0.0 else 1.0)


def _truncated_inverse_gaussian(z: float, rng: np.random.Generator) -> float:
    """Draw from IG(1/z, 1) conditioned on (0, _TRUNC]."""
    t = _TRUNC
    if z < 1.0 / t:
        # small tilt: propose from the z=0 body, thin by exp(-z^2 x / 2)
        while True:
            while True:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / ((1.0 + t * e1) ** 2)
            if z == 0.0 or rng.random() <= math.exp(-0.5 * z * z * x):
                return x
    mu = 1.0 / z
    while True:
        y = rng.standard_normal()
        y *= y
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) ** 2)
        if rng.random() > mu / (mu + x):
            x = mu * mu / x
        if x <= t:
            return x


def _series_coef(n: int, x: float) -> float:
    k = n + 0.5
    if x <= _TRUNC:
        return math.pi * k * (2.0 / (math.pi * x)) ** 1.5 * math.exp(-2.0 * k * k / x)
    return math.pi * k * math.exp(-0.5 * k * k * math.pi * math.pi * x)


def _sample_pg1(c: float, rng: np.random.Generator) -> float:
    """One exact PG(1, c) draw."""
    z = 0.5 * abs(c)
    t = _TRUNC
    rate = _HALF_PI_SQ / 4.0 + 0.5 * z * z  # pi^2/8 + z^2/2
    mass_right = (0.5 * math.pi / rate) * math.exp(-rate * t)
    mass_left = 2.0 * math.exp(-z) * _inverse_gaussian_cdf_unit_shape(t, z)
    p_right = mass_right / (mass_right + mass_left)
    while True:
        if rng.random() < p_right:
            x = t + rng.standard_exponential() / rate
        else:
            x = _truncated_inverse_gaussian(z, rng)
        # squeeze rejection on the alternating series
        s = _series_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n & 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


def sample_polya_gamma(b: int, c: float, rng: np.random.Generator) -> float:
    """Draw from PG(b, c) for integer shape b >= 1.

    Shapes up to 170 are sums of exact PG(1, c) draws; beyond that a
    moment-matched Gaussian truncated at zero is used (its skewness decays as
    1/sqrt(b), negligible there).
    """
    if b <= 0:
        raise ContractViolation(f"Polya-Gamma shape must be positive, got {b}")
    if b != int(b):
        raise ContractViolation(f"Polya-Gamma shape must be an integer, got {b}")
    if not math.isfinite(c):
        raise ContractViolation(f"Polya-Gamma tilt must be finite, got {c}")
    b = int(b)
    if b <= _EXACT_SHAPE_LIMIT:
        return sum(_sample_pg1(c, rng) for _ in range(b))
    mean = pg_mean(b, c)
    sd = math.sqrt(pg_variance(b, c))
    while True:
        draw = mean + sd * rng.standard_normal()
        if draw > 0.0:
            return draw
