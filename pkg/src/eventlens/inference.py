"""Per-window model fitting: collapsed Gibbs over component assignments,
Polya-Gamma pseudo-observations for the latent weight trajectories, and MAP
estimation of the per-component grid densities.

One window is fitted by ``run_inference``: E epochs of {resample every
record's component; turn per-(timestamp, component) counts into Gaussian
pseudo-observations via Polya-Gamma draws; re-estimate the weight
trajectories with the Kalman smoother}, followed by one closed-form update of
the categorical tables and one L-BFGS pass per (component, continuous
attribute) for the densities.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ContractViolation, NumericError
from .gpssm import (
    GaussState,
    SsmKernel,
    predict_sequence,
    run_smoother_batch,
    transition,
    transition_steps,
)
from .ingestion import GridSpec, locate_grid_many
from .samplers import sample_polya_gamma
from .types import Config, CountStats, CurrentTensor, ModelParams, counts_from_assignments

__all__ = [
    "CarryState",
    "GibbsState",
    "GridFilter",
    "InferenceResult",
    "LgpObjective",
    "StreamLayout",
    "build_grid_filter",
    "component_conditional",
    "estimate_categorical_tables",
    "estimate_density_scores",
    "estimate_trajectories",
    "gibbs_epoch",
    "lgp_objective_and_gradient",
    "log_mass_table",
    "pg_augmented_posterior",
    "run_inference",
]

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# static stream layout and carried state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridFilter:
    """Data-independent prior quantities along one value grid.

    A Kalman pass over the grid axis maps a residual vector d to innovations
    r = A d with A unit lower triangular and variances s depending only on
    the kernel, the grid geometry, and the drift variance, so the implied
    Gaussian precision A' diag(1/s) A is assembled once per attribute and
    shared by every density evaluation.
    """

    innovation_vars: np.ndarray   # (G,)
    precision: np.ndarray         # (G, G)
    log_norm: float               # sum of log(2 pi s_g)


def build_grid_filter(kernel: SsmKernel, centers: np.ndarray, drift_var: float) -> GridFilter:
    g = centers.size
    s = np.empty(g)
    innov_rows = np.zeros((g, g))   # A: innovation as a linear map of d
    state_rows = np.zeros((2, g))   # filter mean as a linear map of d
    cov = kernel.stationary_cov.copy()
    prev = float(centers[0])
    eye = np.eye(2)
    for i in range(g):
        phi, q = transition(kernel, float(centers[i]) - prev)
        pp = phi @ cov @ phi.T + q
        pp = 0.5 * (pp + pp.T)
        s_i = pp[0, 0] + drift_var
        if s_i <= 0:
            raise NumericError("non-positive innovation variance on grid filter")
        k_i = pp[:, 0] / s_i
        a = eye.copy()
        a[:, 0] -= k_i
        cov = a @ pp @ a.T + drift_var * np.outer(k_i, k_i)
        cov = 0.5 * (cov + cov.T)
        s[i] = s_i
        predicted = phi @ state_rows
        innov_rows[i] = -predicted[0]
        innov_rows[i, i] += 1.0
        state_rows = predicted + np.outer(k_i, innov_rows[i])
        prev = float(centers[i])
    return GridFilter(
        innovation_vars=s,
        precision=innov_rows.T @ (innov_rows / s[:, None]),
        log_norm=float(np.log(2.0 * math.pi * s).sum()),
    )


@dataclass(frozen=True)
class StreamLayout:
    """Frozen geometry of one stream: vocab sizes, grids, kernels."""

    unit_sizes: tuple[int, ...]
    grids: tuple[GridSpec, ...]
    time_kernel: SsmKernel
    grid_kernels: tuple[SsmKernel, ...]
    grid_filters: tuple[GridFilter, ...]

    @property
    def cell_sizes(self) -> tuple[int, ...]:
        return tuple(g.cells for g in self.grids)


@dataclass
class CarryState:
    """Everything one window hands to the next."""

    prior_unit_probs: list[np.ndarray]       # per cat attr, (K, U)
    prior_density_scores: list[np.ndarray]   # per cont attr, (K, G)
    traj_states: list[GaussState] | None     # per component, at traj_time
    traj_time: float | None

    @classmethod
    def initial(cls, components: int, layout: StreamLayout) -> "CarryState":
        return cls(
            prior_unit_probs=[
                np.full((components, u), 1.0 / u) for u in layout.unit_sizes
            ],
            prior_density_scores=[
                np.zeros((components, g.cells)) for g in layout.grids
            ],
            traj_states=None,
            traj_time=None,
        )


# ---------------------------------------------------------------------------
# collapsed Gibbs
# ---------------------------------------------------------------------------

def _logsumexp(v: np.ndarray) -> float:
    m = v.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(v - m).sum()))


def log_mass_table(scores: np.ndarray, log_widths: np.ndarray) -> np.ndarray:
    """Per-row log cell mass implied by grid scores: log softmax(scores + log w)."""
    raw = np.atleast_2d(scores) + log_widths
    shift = raw.max(axis=1, keepdims=True)
    out = raw - shift - np.log(np.exp(raw - shift).sum(axis=1, keepdims=True))
    return out if scores.ndim > 1 else out[0]


def component_conditional(
    log_weights: np.ndarray,
    loo_unit_cols: Sequence[np.ndarray],
    loo_totals: np.ndarray,
    prior_unit_cols: Sequence[np.ndarray],
    log_mass_cols: Sequence[np.ndarray],
    alpha: float,
) -> np.ndarray:
    """Posterior over a record's component, all other assignments held fixed.

    ``log_weights`` are the latent weights at the record's timestamp (their
    softmax normaliser is constant in k and cancels); counts are leave-one-out.
    """
    logp = np.array(log_weights, dtype=float)
    for col, prior_col in zip(loo_unit_cols, prior_unit_cols):
        logp += np.log(col + alpha * prior_col) - np.log(loo_totals + alpha)
    for col in log_mass_cols:
        logp += col
    shift = logp.max()
    if not np.isfinite(shift):
        raise NumericError("component conditional degenerated to all-zero weights")
    p = np.exp(logp - shift)
    return p / p.sum()


@dataclass
class GibbsState:
    """Mutable sweep state: assignments, live count tables, epoch tables."""

    assignments: np.ndarray              # (n,)
    counts: CountStats
    time_index: np.ndarray               # (n,)
    unit_ids: list[np.ndarray]           # per cat attr, (n,)
    cell_ids: list[np.ndarray]           # per cont attr, (n,)
    prior_unit_probs: list[np.ndarray]   # per cat attr, (K, U)
    log_mass_tables: list[np.ndarray]    # per cont attr, (K, G)
    log_weight_table: np.ndarray         # (Tc, K)
    alpha: float


def gibbs_epoch(state: GibbsState, rng: np.random.Generator) -> None:
    """One in-place sweep over all records, in stream order.

    The record conditional is evaluated in plain probability space against
    tables exponentiated once per sweep — every factor is bounded by 1, so
    nothing can overflow, and the rare record whose product underflows
    entirely is redone through the log-space route.
    """
    z = state.assignments
    n = z.size
    if n == 0:
        return
    comp = state.counts.component_totals
    time_counts = state.counts.time_counts
    unit_tabs = state.counts.unit_counts
    cell_tabs = state.counts.cell_counts
    uids = state.unit_ids
    cids = state.cell_ids
    tix = state.time_index
    weights = state.log_weight_table
    priors = state.prior_unit_probs
    masses = state.log_mass_tables
    alpha = state.alpha
    k_max = comp.size - 1
    uniforms = rng.random(n)

    w_exp = np.exp(weights - weights.max(axis=1, keepdims=True))
    mass_exp = [np.exp(tab) for tab in masses]
    alpha_priors = [alpha * tab for tab in priors]

    for i in range(n):
        zi = z[i]
        t = tix[i]
        comp[zi] -= 1
        time_counts[t, zi] -= 1
        p = w_exp[t]
        for m in range(len(uids)):
            u = uids[m][i]
            col = unit_tabs[m][:, u]
            col[zi] -= 1
            p = p * (col + alpha_priors[m][:, u]) / (comp + alpha)
        for m in range(len(cids)):
            g = cids[m][i]
            cell_tabs[m][zi, g] -= 1
            p = p * mass_exp[m][:, g]
        cdf = np.cumsum(p)
        total = cdf[-1]
        if not total > 0:
            cdf = np.cumsum(
                component_conditional(
                    weights[t],
                    [unit_tabs[m][:, uids[m][i]] for m in range(len(uids))],
                    comp,
                    [priors[m][:, uids[m][i]] for m in range(len(uids))],
                    [masses[m][:, cids[m][i]] for m in range(len(cids))],
                    alpha,
                )
            )
            total = cdf[-1]
        znew = int(np.searchsorted(cdf, uniforms[i] * total, side="right"))
        if znew > k_max:
            znew = k_max
        z[i] = znew
        comp[znew] += 1
        time_counts[t, znew] += 1
        for m in range(len(uids)):
            unit_tabs[m][znew, uids[m][i]] += 1
        for m in range(len(cids)):
            cell_tabs[m][znew, cids[m][i]] += 1


# ---------------------------------------------------------------------------
# Polya-Gamma pseudo-observations and trajectory estimation
# ---------------------------------------------------------------------------

def pg_augmented_posterior(
    prior_mean: np.ndarray,
    prior_var: np.ndarray,
    time_counts: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian pseudo-observations of the latent weights at each timestamp.

    Each component's share of a timestamp's N_t records is a one-vs-rest
    binomial in the softmax weights, which the Polya-Gamma identity with
    exponent kappa = N_tk - N_t/2 turns conditionally Gaussian.  For each
    (t, k): draw omega ~ PG(N_t, mu_tk - xi_tk) with xi the log-sum-exp of
    the other components' weights (omega = 0 when the timestamp is empty),
    then condition the Gaussian prior on the count evidence:

        var_pg = 1 / (1/var + omega)
        mean_pg = var_pg * (mu/var + N_tk - N_t/2 + omega * xi)

    Returns (omega, mean_pg, var_pg), all (Tc, K).  The PG shape is the
    timestamp total N_t: the binomial has N_t trials, and kappa above is
    exactly the a - b/2 of the identity with b = N_t.
    """
    mu = np.asarray(prior_mean, dtype=float)
    var = np.asarray(prior_var, dtype=float)
    counts = np.asarray(time_counts)
    span, k_num = mu.shape
    if (var <= 0).any():
        raise ContractViolation("prior variances must be positive")
    omega = np.zeros((span, k_num))
    xi = np.empty((span, k_num))
    n_t = counts.sum(axis=1)
    for t in range(span):
        mu_t = mu[t]
        trials = int(n_t[t])
        if k_num > 1:
            # xi_k = logsumexp of the *other* components, via the total minus
            # each own term
            shift = mu_t.max()
            exp_shifted = np.exp(mu_t - shift)
            total = exp_shifted.sum()
            rest = total - exp_shifted
            with np.errstate(divide="ignore"):
                xi_t = shift + np.log(rest)
            # a dominant component cancels badly in the subtraction; redo
            # those few entries with a masked reduction
            for k in np.nonzero(rest <= total * 1e-9)[0]:
                xi_t[k] = _logsumexp(np.delete(mu_t, k))
        else:
            xi_t = np.full(1, -math.inf)
        # numerical guard: keep the tilt finite (only bites for k_num == 1
        # or wildly separated weights, where the draw is ~0 anyway)
        np.clip(xi_t, mu_t - 1000.0, mu_t + 1000.0, out=xi_t)
        xi[t] = xi_t
        if trials > 0:
            for k in range(k_num):
                omega[t, k] = sample_polya_gamma(trials, float(mu_t[k] - xi_t[k]), rng)
    post_var = 1.0 / (1.0 / var + omega)
    post_mean = post_var * (mu / var + counts - 0.5 * n_t[:, None] + omega * xi)
    return omega, post_mean, post_var


def estimate_trajectories(
    kernel: SsmKernel,
    times: np.ndarray,
    obs_means: np.ndarray,
    obs_vars: np.ndarray,
    init_states: list[GaussState] | None,
    init_time: float | None,
    steps: list[tuple[np.ndarray, np.ndarray]] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Smooth each component's pseudo-observation sequence.

    ``obs_means``/``obs_vars`` are (Tc, K).  Returns smoothed state means
    (K, Tc, 2) and covariances (K, Tc, 2, 2).
    """
    if init_states is None:
        init_means = init_covs = None
    else:
        init_means = np.stack([s.mean for s in init_states])
        init_covs = np.stack([s.cov for s in init_states])
    return run_smoother_batch(
        kernel, times, obs_means, obs_vars,
        init_means=init_means, init_covs=init_covs,
        init_time=init_time, steps=steps,
    )


# ---------------------------------------------------------------------------
# categorical tables
# ---------------------------------------------------------------------------

def estimate_categorical_tables(
    unit_counts: np.ndarray,
    component_totals: np.ndarray,
    prior: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """Posterior-mean unit probabilities: (counts + alpha*prior) / (total + alpha).

    Components with no records keep their prior row exactly.
    """
    if alpha <= 0:
        raise ContractViolation("concentration must be positive")
    out = np.empty_like(prior, dtype=float)
    for k in range(prior.shape[0]):
        nk = component_totals[k]
        if nk == 0:
            out[k] = prior[k]
        else:
            out[k] = (unit_counts[k] + alpha * prior[k]) / (nk + alpha)
    return out


# ---------------------------------------------------------------------------
# grid densities
# ---------------------------------------------------------------------------

@dataclass
class LgpObjective:
    """MAP objective for one (component, continuous attribute) density.

    Maximises   sum_g n_g (log w_g + c_g)  -  n_tot log sum_g w_g e^{c_g}
              - 0.5 * [ log|2 pi S| + d' M d ],   d = c - prior_scores

    with M the grid-axis filter precision held by ``grid_filter``.
    """

    cell_counts: np.ndarray     # (G,)
    total: int
    log_widths: np.ndarray      # (G,)
    prior_scores: np.ndarray    # (G,)
    grid_filter: GridFilter

    def value_and_grad(self, c: np.ndarray) -> tuple[float, np.ndarray]:
        c = np.asarray(c, dtype=float)
        flt = self.grid_filter
        counts = self.cell_counts

        # data terms
        raw = self.log_widths + c
        shift = raw.max()
        expraw = np.exp(raw - shift)
        lse = shift + math.log(expraw.sum())
        softmax = expraw / expraw.sum()
        value = float(counts @ raw) - self.total * lse
        grad = counts - self.total * softmax

        # smoothness prior over the residual
        d = c - self.prior_scores
        md = flt.precision @ d
        value -= 0.5 * (flt.log_norm + float(d @ md))
        grad = grad - md
        return value, grad


def lgp_objective_and_gradient(
    c: np.ndarray, objective: LgpObjective
) -> tuple[float, np.ndarray]:
    """Functional form of :meth:`LgpObjective.value_and_grad`."""
    return objective.value_and_grad(c)


def estimate_density_scores(
    cell_counts: np.ndarray,
    component_totals: np.ndarray,
    prior_scores: np.ndarray,
    log_widths: np.ndarray,
    grid_filter: GridFilter,
    max_iters: int,
) -> np.ndarray:
    """MAP grid scores per component, started from the carried prior scores."""
    k_num, g_num = prior_scores.shape
    out = np.empty((k_num, g_num))
    for k in range(k_num):
        obj = LgpObjective(
            cell_counts=cell_counts[k].astype(float),
            total=int(component_totals[k]),
            log_widths=log_widths,
            prior_scores=prior_scores[k],
            grid_filter=grid_filter,
        )

        def negated(c: np.ndarray) -> tuple[float, np.ndarray]:
            val, grad = obj.value_and_grad(c)
            return -val, -grad

        res = minimize(
            negated,
            x0=prior_scores[k].copy(),
            jac=True,
            method="L-BFGS-B",
            options={"maxcor": 10, "maxiter": max_iters, "gtol": 1e-6, "ftol": 1e-14},
        )
        if not res.success and res.status != 1:  # status 1 = iteration cap
            logger.warning("density optimisation stalled (component %d): %s", k, res.message)
        out[k] = res.x
    return out


# ---------------------------------------------------------------------------
# the per-window driver
# ---------------------------------------------------------------------------

@dataclass
class InferenceResult:
    params: ModelParams
    counts: CountStats
    assignments: np.ndarray
    carry: CarryState


def run_inference(
    tensor: CurrentTensor,
    carry: CarryState,
    config: Config,
    layout: StreamLayout,
    rng: np.random.Generator,
) -> InferenceResult:
    """Fit one window and produce the carry for the next (algorithm core)."""
    k_num = config.components
    span = tensor.span
    times = tensor.timestamps
    t_idx, unit_ids, values = tensor.flatten()
    n = t_idx.size
    if n == 0:
        unit_ids = [np.empty(0, dtype=np.int64) for _ in layout.unit_sizes]
        values = [np.empty(0, dtype=float) for _ in layout.grids]
    elif len(unit_ids) != len(layout.unit_sizes) or len(values) != len(layout.grids):
        raise ContractViolation("record attribute arity does not match the stream layout")
    cell_ids = [locate_grid_many(spec, v) for spec, v in zip(layout.grids, values)]

    log_widths = [np.log(spec.widths) for spec in layout.grids]
    mass_tables = [
        log_mass_table(scores, lw)
        for scores, lw in zip(carry.prior_density_scores, log_widths)
    ]

    # the window's time grid is fixed, so discretise its dynamics once
    steps = transition_steps(
        layout.time_kernel,
        times,
        carry.traj_time if carry.traj_states is not None else None,
    )

    # epoch-1 latent weights: pure prediction from the carried states
    preds = [
        predict_sequence(
            layout.time_kernel, times, init=st, init_time=carry.traj_time, steps=steps
        )
        for st in (carry.traj_states or [None] * k_num)
    ]
    mu = np.array([[p[t].obs_mean for p in preds] for t in range(span)])
    var = np.array(
        [[p[t].obs_var(config.obs_noise_var) for p in preds] for t in range(span)]
    )

    assignments = rng.integers(0, k_num, size=n).astype(np.int64)
    counts = counts_from_assignments(
        assignments,
        t_idx,
        unit_ids,
        cell_ids,
        components=k_num,
        unit_sizes=layout.unit_sizes,
        cell_sizes=layout.cell_sizes,
        window_timestamps=span,
    )
    state = GibbsState(
        assignments=assignments,
        counts=counts,
        time_index=t_idx,
        unit_ids=unit_ids,
        cell_ids=cell_ids,
        prior_unit_probs=carry.prior_unit_probs,
        log_mass_tables=mass_tables,
        log_weight_table=mu,
        alpha=config.alpha,
    )

    traj_means = np.zeros((k_num, span, 2))
    traj_covs = np.zeros((k_num, span, 2, 2))
    for _ in range(config.epochs):
        state.log_weight_table = mu
        gibbs_epoch(state, rng)
        _, pg_mean_tab, pg_var_tab = pg_augmented_posterior(
            mu, var, state.counts.time_counts, rng
        )
        traj_means, traj_covs = estimate_trajectories(
            layout.time_kernel,
            times,
            pg_mean_tab,
            pg_var_tab,
            carry.traj_states,
            carry.traj_time,
            steps=steps,
        )
        mu = traj_means[:, :, 0].T.copy()
        var = traj_covs[:, :, 0, 0].T + config.obs_noise_var

    unit_probs = [
        estimate_categorical_tables(
            state.counts.unit_counts[m],
            state.counts.component_totals,
            carry.prior_unit_probs[m],
            config.alpha,
        )
        for m in range(len(layout.unit_sizes))
    ]
    density_scores = [
        estimate_density_scores(
            state.counts.cell_counts[m],
            state.counts.component_totals,
            carry.prior_density_scores[m],
            log_widths[m],
            layout.grid_filters[m],
            config.max_opt_iters,
        )
        for m in range(len(layout.grids))
    ]

    params = ModelParams(
        unit_probs=unit_probs,
        density_scores=density_scores,
        traj_means=traj_means,
        traj_covs=traj_covs,
        prior_unit_probs=carry.prior_unit_probs,
        prior_density_scores=carry.prior_density_scores,
    )
    new_carry = CarryState(
        prior_unit_probs=[a.copy() for a in unit_probs],
        prior_density_scores=[c.copy() for c in density_scores],
        traj_states=[
            GaussState(traj_means[k, -1].copy(), traj_covs[k, -1].copy())
            for k in range(k_num)
        ],
        traj_time=float(times[-1]),
    )
    return InferenceResult(
        params=params,
        counts=state.counts,
        assignments=state.assignments,
        carry=new_carry,
    )
