"""Matern-3/2 dynamics as a linear-Gaussian state space, plus a dense-GP oracle.

The kernel k(r) = s2 * (1 + sqrt(3) r / l) * exp(-sqrt(3) r / l) is realised
exactly by the 2-d SDE  dx = F x dt + L dW  with

    lam = sqrt(3) / l
    F   = [[0, 1], [-lam^2, -2 lam]]          L = [0, 1]^T
    q   = 4 lam^3 * s2                        (white-noise spectral density)
    H   = [1, 0]                              (observe the function value)
    Pinf = diag(s2, lam^2 * s2)               (stationary covariance)

F has the repeated eigenvalue -lam, so the transition matrix has the closed
form  expm(F dt) = exp(-lam dt) * [[1 + lam dt, dt], [-lam^2 dt, 1 - lam dt]],
and the process noise over dt is  Q = Pinf - Phi Pinf Phi^T.

``exact_gp_posterior`` is the O(n^3) dense regression used to cross-check the
filter/smoother path; the two must agree to numerical precision.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, NumericError

__all__ = [
    "GaussState",
    "SsmKernel",
    "exact_gp_posterior",
    "kalman_step",
    "lyapunov_residual",
    "matern32_kernel",
    "matern32_ssm",
    "predict_sequence",
    "rts_sweep",
    "run_smoother",
    "run_smoother_batch",
    "transition",
    "transition_steps",
]

logger = logging.getLogger(__name__)

_JITTER = 1e-9


@dataclass
class GaussState:
    """Gaussian belief over the 2-d latent state."""

    mean: np.ndarray   # (2,)
    cov: np.ndarray    # (2, 2)

    @property
    def obs_mean(self) -> float:
        """Mean of the observed (function-value) coordinate."""
        return float(self.mean[0])

    def obs_var(self, noise_var: float = 0.0) -> float:
        """Variance of the observed coordinate, plus optional noise."""
        return float(self.cov[0, 0]) + noise_var


@dataclass(frozen=True)
class SsmKernel:
    """State-space form of a Matern-3/2 kernel."""

    lengthscale: float
    signal_var: float
    lam: float
    feedback: np.ndarray        # F, (2, 2)
    noise_gain: np.ndarray      # L, (2, 1)
    noise_density: float        # q
    stationary_cov: np.ndarray  # Pinf, (2, 2)

    def stationary_state(self) -> GaussState:
        return GaussState(np.zeros(2), self.stationary_cov.copy())


def matern32_ssm(lengthscale: float, signal_var: float) -> SsmKernel:
    if lengthscale <= 0 or signal_var <= 0:
        raise ContractViolation("lengthscale and signal variance must be positive")
    lam = math.sqrt(3.0) / lengthscale
    feedback = np.array([[0.0, 1.0], [-lam * lam, -2.0 * lam]])
    noise_gain = np.array([[0.0], [1.0]])
    noise_density = 4.0 * lam**3 * signal_var
    stationary_cov = np.diag([signal_var, lam * lam * signal_var])
    return SsmKernel(
        lengthscale=float(lengthscale),
        signal_var=float(signal_var),
        lam=lam,
        feedback=feedback,
        noise_gain=noise_gain,
        noise_density=noise_density,
        stationary_cov=stationary_cov,
    )


def lyapunov_residual(kernel: SsmKernel) -> float:
    """Max-abs residual of F Pinf + Pinf F^T + L q L^T (0 for a valid model)."""
    f, p = kernel.feedback, kernel.stationary_cov
    lql = kernel.noise_gain @ kernel.noise_gain.T * kernel.noise_density
    return float(np.abs(f @ p + p @ f.T + lql).max())


def transition(kernel: SsmKernel, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Discretised dynamics over a gap ``dt >= 0``: (Phi, Q)."""
    if dt < 0 or not math.isfinite(dt):
        raise ContractViolation(f"time gap must be finite and >= 0, got {dt}")
    lam = kernel.lam
    e = math.exp(-lam * dt)
    phi = e * np.array([[1.0 + lam * dt, dt], [-lam * lam * dt, 1.0 - lam * dt]])
    pinf = kernel.stationary_cov
    q = pinf - phi @ pinf @ phi.T
    q = 0.5 * (q + q.T)
    return phi, q


def kalman_step(
    state: GaussState,
    phi: np.ndarray,
    proc_cov: np.ndarray,
    obs: float,
    obs_var: float,
) -> tuple[GaussState, GaussState]:
    """One predict-update cycle observing the first state coordinate.

    Returns (predicted, filtered).  The update uses the innovation variance
    (predicted obs variance + obs noise) in the gain and the Joseph form for
    the covariance, which keeps it symmetric PSD over long runs.
    """
    if obs_var <= 0 or not math.isfinite(obs_var):
        raise ContractViolation(f"observation variance must be positive, got {obs_var}")
    mp = phi @ state.mean
    pp = phi @ state.cov @ phi.T + proc_cov
    pp = 0.5 * (pp + pp.T)

    innovation_var = pp[0, 0] + obs_var
    if innovation_var <= 0 or not math.isfinite(innovation_var):
        raise NumericError(f"non-positive innovation variance {innovation_var}")
    gain = pp[:, 0] / innovation_var
    mf = mp + gain * (obs - mp[0])
    a = np.eye(2)
    a[:, 0] -= gain
    pf = a @ pp @ a.T + obs_var * np.outer(gain, gain)
    pf = 0.5 * (pf + pf.T)
    return GaussState(mp, pp), GaussState(mf, pf)


def rts_sweep(
    filtered: list[GaussState],
    predicted: list[GaussState],
    phis: list[np.ndarray],
) -> list[GaussState]:
    """Backward smoothing pass.

    ``predicted[i]`` and ``phis[i]`` belong to the transition into step ``i``
    (so index 0 entries are the priors of the first step).  Singular predicted
    covariances are regularised with a small jitter and logged.
    """
    n = len(filtered)
    if not (len(predicted) == len(phis) == n) or n == 0:
        raise ContractViolation("filtered/predicted/phi lists must align and be non-empty")
    smoothed: list[GaussState] = [GaussState(np.zeros(2), np.zeros((2, 2)))] * n
    smoothed[-1] = GaussState(filtered[-1].mean.copy(), filtered[-1].cov.copy())
    for t in range(n - 2, -1, -1):
        pp_next = predicted[t + 1].cov
        target = phis[t + 1] @ filtered[t].cov
        try:
            gain = np.linalg.solve(pp_next, target).T
        except np.linalg.LinAlgError:
            logger.warning("singular predicted covariance at step %d; regularising", t + 1)
            gain = np.linalg.solve(pp_next + _JITTER * np.eye(2), target).T
        mean = filtered[t].mean + gain @ (smoothed[t + 1].mean - predicted[t + 1].mean)
        cov = filtered[t].cov + gain @ (smoothed[t + 1].cov - pp_next) @ gain.T
        smoothed[t] = GaussState(mean, 0.5 * (cov + cov.T))
    return smoothed


def _step_pairs(
    kernel: SsmKernel,
    times: np.ndarray,
    init: GaussState | None,
    init_time: float | None,
):
    """Yield (Phi, Q) per step, starting from the carried or stationary state."""
    if init is None:
        state = kernel.stationary_state()
        prev_t = float(times[0])
    else:
        state = GaussState(init.mean.copy(), init.cov.copy())
        prev_t = float(times[0]) if init_time is None else float(init_time)
    return state, prev_t


def transition_steps(
    kernel: SsmKernel,
    times: np.ndarray,
    init_time: float | None = None,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-step (Phi, Q) for a fixed observation grid.

    The gaps of one window never change across components or sweeps, so the
    discretised dynamics can be built once and handed to every
    :func:`run_smoother` / :func:`predict_sequence` call over that grid.
    """
    times = np.asarray(times, dtype=float)
    prev_t = float(times[0]) if init_time is None else float(init_time)
    steps = []
    for t in times:
        steps.append(transition(kernel, float(t) - prev_t))
        prev_t = float(t)
    return steps


def run_smoother(
    kernel: SsmKernel,
    times: np.ndarray,
    obs: np.ndarray,
    obs_vars: np.ndarray,
    init: GaussState | None = None,
    init_time: float | None = None,
    steps: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[list[GaussState], list[GaussState], list[GaussState], list[np.ndarray]]:
    """Filter + smooth a sequence of noisy function-value observations.

    Returns (predicted, filtered, smoothed, phis).  ``init`` is the belief at
    ``init_time`` (defaults: stationary zero-mean belief at ``times[0]``);
    ``steps`` short-circuits the per-gap discretisation with a precomputed
    :func:`transition_steps` result.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ContractViolation("need at least one observation time")
    if np.any(np.diff(times) < 0):
        raise ContractViolation("observation times must be non-decreasing")
    state, prev_t = _step_pairs(kernel, times, init, init_time)
    if prev_t > times[0]:
        raise ContractViolation("initial state lies after the first observation")
    if steps is None:
        steps = transition_steps(kernel, times, None if init is None else init_time)
    elif len(steps) != times.size:
        raise ContractViolation("precomputed steps do not match the observation grid")

    predicted: list[GaussState] = []
    filtered: list[GaussState] = []
    phis: list[np.ndarray] = []
    for (phi, q), y, v in zip(steps, obs, obs_vars):
        pred, filt = kalman_step(state, phi, q, float(y), float(v))
        predicted.append(pred)
        filtered.append(filt)
        phis.append(phi)
        state = filt
    smoothed = rts_sweep(filtered, predicted, phis)
    return predicted, filtered, smoothed, phis


def run_smoother_batch(
    kernel: SsmKernel,
    times: np.ndarray,
    obs: np.ndarray,
    obs_vars: np.ndarray,
    init_means: np.ndarray | None = None,
    init_covs: np.ndarray | None = None,
    init_time: float | None = None,
    steps: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Filter + smooth several series that share one observation grid.

    Same recursions as :func:`run_smoother`, vectorised over a series axis:
    ``obs`` and ``obs_vars`` are (T, J), the optional initial beliefs are
    (J, 2) and (J, 2, 2).  Returns smoothed means (J, T, 2) and covariances
    (J, T, 2, 2).  Only the smoothed moments are exposed; callers that need
    the intermediate filter quantities should run the per-series function.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ContractViolation("need at least one observation time")
    if np.any(np.diff(times) < 0):
        raise ContractViolation("observation times must be non-decreasing")
    obs = np.asarray(obs, dtype=float)
    obs_vars = np.asarray(obs_vars, dtype=float)
    if obs.ndim != 2 or obs.shape != obs_vars.shape or obs.shape[0] != times.size:
        raise ContractViolation("batched observations must be (T, J) and aligned")
    if (obs_vars <= 0).any() or not np.isfinite(obs_vars).all():
        raise ContractViolation("observation variances must be positive")
    span, j_num = obs.shape
    if init_means is None:
        mean = np.zeros((j_num, 2))
        cov = np.repeat(kernel.stationary_cov[None], j_num, axis=0)
        prev_t = float(times[0])
    else:
        mean = np.array(init_means, dtype=float).reshape(j_num, 2)
        cov = np.array(init_covs, dtype=float).reshape(j_num, 2, 2)
        prev_t = float(times[0]) if init_time is None else float(init_time)
    if prev_t > times[0]:
        raise ContractViolation("initial state lies after the first observation")
    if steps is None:
        steps = transition_steps(kernel, times, None if init_means is None else init_time)
    elif len(steps) != times.size:
        raise ContractViolation("precomputed steps do not match the observation grid")

    pred_means = np.empty((span, j_num, 2))
    pred_covs = np.empty((span, j_num, 2, 2))
    filt_means = np.empty((span, j_num, 2))
    filt_covs = np.empty((span, j_num, 2, 2))
    eye = np.eye(2)
    for i, (phi, q) in enumerate(steps):
        mp = mean @ phi.T
        pp = np.einsum("ab,jbc,dc->jad", phi, cov, phi) + q
        pp = 0.5 * (pp + pp.transpose(0, 2, 1))
        innovation_var = pp[:, 0, 0] + obs_vars[i]
        if (innovation_var <= 0).any() or not np.isfinite(innovation_var).all():
            raise NumericError("non-positive innovation variance in batched filter")
        gain = pp[:, :, 0] / innovation_var[:, None]
        mean = mp + gain * (obs[i] - mp[:, 0])[:, None]
        a = np.repeat(eye[None], j_num, axis=0)
        a[:, :, 0] -= gain
        cov = np.einsum("jab,jbc,jdc->jad", a, pp, a)
        cov += obs_vars[i, :, None, None] * np.einsum("ja,jb->jab", gain, gain)
        cov = 0.5 * (cov + cov.transpose(0, 2, 1))
        pred_means[i], pred_covs[i] = mp, pp
        filt_means[i], filt_covs[i] = mean, cov

    sm_means = np.empty_like(filt_means)
    sm_covs = np.empty_like(filt_covs)
    sm_means[-1], sm_covs[-1] = filt_means[-1], filt_covs[-1]
    for t in range(span - 2, -1, -1):
        pp_next = pred_covs[t + 1]
        target = np.einsum("ab,jbc->jac", steps[t + 1][0], filt_covs[t])
        try:
            gain = np.linalg.solve(pp_next, target).transpose(0, 2, 1)
        except np.linalg.LinAlgError:
            logger.warning("singular predicted covariance at step %d; regularising", t + 1)
            gain = np.linalg.solve(pp_next + _JITTER * eye, target).transpose(0, 2, 1)
        sm_means[t] = filt_means[t] + np.einsum(
            "jab,jb->ja", gain, sm_means[t + 1] - pred_means[t + 1]
        )
        cov_t = filt_covs[t] + np.einsum(
            "jab,jbc,jdc->jad", gain, sm_covs[t + 1] - pp_next, gain
        )
        sm_covs[t] = 0.5 * (cov_t + cov_t.transpose(0, 2, 1))
    return sm_means.transpose(1, 0, 2), sm_covs.transpose(1, 0, 2, 3)


def predict_sequence(
    kernel: SsmKernel,
    times: np.ndarray,
    init: GaussState | None = None,
    init_time: float | None = None,
    steps: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> list[GaussState]:
    """Roll the prior forward over ``times`` without assimilating anything."""
    times = np.asarray(times, dtype=float)
    state, _ = _step_pairs(kernel, times, init, init_time)
    if steps is None:
        steps = transition_steps(kernel, times, None if init is None else init_time)
    out: list[GaussState] = []
    for phi, q in steps:
        mean = phi @ state.mean
        cov = phi @ state.cov @ phi.T + q
        state = GaussState(mean, 0.5 * (cov + cov.T))
        out.append(state)
    return out


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

def matern32_kernel(
    a: np.ndarray, b: np.ndarray, lengthscale: float, signal_var: float
) -> np.ndarray:
    """Dense Matern-3/2 Gram matrix between 1-d input sets ``a`` and ``b``."""
    r = np.abs(np.subtract.outer(np.asarray(a, float), np.asarray(b, float)))
    s = math.sqrt(3.0) * r / lengthscale
    return signal_var * (1.0 + s) * np.exp(-s)


def exact_gp_posterior(
    times: np.ndarray,
    obs: np.ndarray,
    obs_vars: np.ndarray,
    lengthscale: float,
    signal_var: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Dense GP regression posterior (mean, variance) at the training inputs.

    Cubic-cost reference implementation; intended for small n as the oracle
    against the state-space path.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(obs, dtype=float)
    v = np.asarray(obs_vars, dtype=float)
    if (v <= 0).any():
        raise ContractViolation("observation variances must be positive")
    gram = matern32_kernel(t, t, lengthscale, signal_var)
    a = gram + np.diag(v) + _JITTER * np.eye(t.size)
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError("GP system not positive definite") from exc
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    mean = gram @ alpha
    half = np.linalg.solve(chol, gram)
    var = np.diag(gram) - np.einsum("ij,ij->j", half, half)
    return mean, var
