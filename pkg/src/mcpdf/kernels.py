"""Metropolis kernels targeting warped distributions q ∝ p / Θ.

The proposal is an isotropic-per-coordinate Gaussian random walk.  A
candidate is rejected outright when its prior density is zero or its
performance value falls outside the bin grid: the importance
distribution is supported only on the preimage of the grid, and that
hard restriction is enforced here rather than in the (clamped) warped
density itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .histogram import ThetaTable, bin_indices
from .model import PerformanceModel, batch_performance
from .streams import RandomStream, derive_stream

__all__ = [
    "ProposalConfig",
    "KernelOutcome",
    "default_proposal",
    "propose",
    "metropolis_step",
    "metropolis_sweep",
    "incremental_weight",
    "incremental_weight_batch",
]


@dataclass(frozen=True, eq=False)
class ProposalConfig:
    """Random-walk proposal scales (scalar or one per input dimension)."""

    step_scale: np.ndarray

    def __post_init__(self):
        scale = np.atleast_1d(np.asarray(self.step_scale, dtype=float))
        if scale.ndim != 1 or not np.all(np.isfinite(scale)) or not np.all(scale > 0):
            raise ValueError("step_scale must be a positive scalar or vector")
        scale = scale.copy()
        scale.flags.writeable = False
        object.__setattr__(self, "step_scale", scale)


def default_proposal(model: PerformanceModel, stream: RandomStream | None = None) -> ProposalConfig:
    """Half the prior standard deviation per coordinate.

    Falls back to an empirical estimate from 1024 prior draws when the
    model does not declare ``prior_std``.
    """
    if model.prior_std is not None:
        return ProposalConfig(0.5 * model.prior_std)
    if stream is None:
        stream = derive_stream(0, (0,))
    draws = np.asarray(model.prior_sample(stream, 1024), dtype=float)
    std = draws.std(axis=0)
    if not np.all(std > 0):
        raise ValueError("could not derive a proposal scale: prior draws are degenerate")
    return ProposalConfig(0.5 * std)


@dataclass(frozen=True, eq=False)
class KernelOutcome:
    """State of one particle after a Metropolis step."""

    state: np.ndarray
    performance: float
    bin: int
    accepted: bool


def propose(config: ProposalConfig, states: np.ndarray, stream: RandomStream) -> np.ndarray:
    """Gaussian random-walk candidates for ``states`` (a vector or rows)."""
    arr = np.asarray(states, dtype=float)
    single = arr.ndim == 1
    rows = np.atleast_2d(arr)
    noise = stream.rng.standard_normal(rows.shape)
    out = rows + noise * config.step_scale
    return out[0] if single else out


def metropolis_sweep(
    theta: ThetaTable,
    model: PerformanceModel,
    config: ProposalConfig,
    states: np.ndarray,
    performances: np.ndarray,
    bins: np.ndarray,
    stream: RandomStream,
    steps: int = 1,
    workers: int | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    """Advance every row by ``steps`` Metropolis moves targeting q ∝ p/Θ.

    ``performances`` and ``bins`` must cache ``g`` and the bin index of
    each current state (all in range).  Acceptance uses
    ``min(1, [p(x*) Θ_b(x)] / [p(x) Θ_b(x*)])``; candidates outside the
    prior support or the grid are rejected.

    Returns
    -------
    (states, performances, bins, accepted, proposed)
        Updated copies of the three ensemble arrays plus acceptance
        tallies summed over the sweep.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    states = np.array(states, dtype=float)
    perfs = np.array(performances, dtype=float)
    bins = np.array(bins, dtype=np.int64)
    n = states.shape[0]
    log_theta = theta.log_theta
    log_p = np.asarray(model.prior_log_density(states), dtype=float)
    rng = stream.rng
    accepted_total = 0
    for _ in range(steps):
        noise = rng.standard_normal(states.shape)
        u = rng.random(n)
        candidates = states + noise * config.step_scale
        log_p_cand = np.asarray(model.prior_log_density(candidates), dtype=float)
        feasible = np.isfinite(log_p_cand)
        y_cand = np.full(n, np.nan)
        if np.any(feasible):
            y_cand[feasible] = batch_performance(model, candidates[feasible], workers)
        idx_cand, in_range = bin_indices(theta.grid, y_cand)
        valid = feasible & in_range
        with np.errstate(invalid="ignore", divide="ignore"):
            log_ratio = (log_p_cand - log_theta[idx_cand]) - (log_p - log_theta[bins])
            accept = valid & (np.log(u) < log_ratio)
        states[accept] = candidates[accept]
        perfs[accept] = y_cand[accept]
        bins[accept] = idx_cand[accept]
        log_p[accept] = log_p_cand[accept]
        accepted_total += int(np.count_nonzero(accept))
    return states, perfs, bins, accepted_total, n * steps


def metropolis_step(
    theta: ThetaTable,
    model: PerformanceModel,
    config: ProposalConfig,
    state: np.ndarray,
    performance: float,
    bin: int,
    stream: RandomStream,
) -> KernelOutcome:
    """One Metropolis move for a single particle (see :func:`metropolis_sweep`)."""
    states, perfs, bins, accepted, _ = metropolis_sweep(
        theta,
        model,
        config,
        np.asarray(state, dtype=float)[np.newaxis, :],
        np.asarray([performance], dtype=float),
        np.asarray([bin], dtype=np.int64),
        stream,
        steps=1,
    )
    return KernelOutcome(
        state=states[0], performance=float(perfs[0]), bin=int(bins[0]), accepted=bool(accepted)
    )


def incremental_weight(theta_from: ThetaTable, theta_to: ThetaTable, bin: int) -> float:
    """Log incremental weight for a particle sitting in ``bin``.

    With the approximately optimal backward kernel the weight update
    reduces to the ratio of consecutive targets at the *previous* state:
    ``log Θ_from[bin] - log Θ_to[bin]`` (Θ appears in the denominator of
    the warped density, so the ratio of targets inverts it).
    """
    if theta_from.grid != theta_to.grid:
        raise ValueError("theta tables are defined on different grids")
    return float(theta_from.log_theta[bin] - theta_to.log_theta[bin])


def incremental_weight_batch(
    theta_from: ThetaTable, theta_to: ThetaTable, bins: np.ndarray
) -> np.ndarray:
    """Vectorised :func:`incremental_weight` over an ensemble's bins."""
    if theta_from.grid != theta_to.grid:
        raise ValueError("theta tables are defined on different grids")
    bins = np.asarray(bins, dtype=np.int64)
    return theta_from.log_theta[bins] - theta_to.log_theta[bins]
