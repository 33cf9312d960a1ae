"""Sequential-Monte-Carlo sampler over the evolving warped targets.

Between flat-histogram iterations the target changes from
q_t ∝ p/Θ_t to q_{t+1} ∝ p/Θ_{t+1}.  Instead of re-equilibrating an
MCMC chain, a particle ensemble is carried across: weights absorb the
target change (with the approximately optimal backward kernel the
incremental weight depends only on each particle's previous bin), a
Metropolis sweep moves the particles under the new target, and the
ensemble is resampled when the effective sample size degenerates.
Large target jumps are bridged by a tempering ladder of interpolated
tables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .histogram import BinGrid, ThetaTable, bin_indices, interpolate_theta
from .kernels import ProposalConfig, incremental_weight_batch, metropolis_sweep
from .model import PerformanceModel, batch_performance
from .streams import RandomStream

__all__ = [
    "SmcsConfig",
    "ParticleEnsemble",
    "AdvanceRecord",
    "prior_ensemble",
    "effective_sample_size",
    "systematic_resample",
    "smcs_advance",
    "ladder_size",
    "temper_transition",
]


@dataclass(frozen=True)
class SmcsConfig:
    """Tuning knobs of the sequential sampler.

    ess_min_fraction
        Resample when ESS drops below this fraction of the ensemble size.
    temper_trigger
        Tempering kicks in when the largest |Δ log Θ| over bins occupied
        by the ensemble exceeds this (default log 10: one decade).
    temper_max_steps
        Cap on the ladder length.
    kernel_steps
        Metropolis moves applied per (tempered) transition.
    """

    ess_min_fraction: float = 0.5
    temper_trigger: float = math.log(10.0)
    temper_max_steps: int = 10
    kernel_steps: int = 1

    def __post_init__(self):
        if not 0.0 <= self.ess_min_fraction <= 1.0:
            raise ValueError("ess_min_fraction must lie in [0, 1]")
        if self.temper_trigger <= 0:
            raise ValueError("temper_trigger must be positive")
        if self.temper_max_steps < 1:
            raise ValueError("temper_max_steps must be >= 1")
        if self.kernel_steps < 1:
            raise ValueError("kernel_steps must be >= 1")


@dataclass(eq=False)
class ParticleEnsemble:
    """Weighted particles with cached performances and bin indices.

    ``log_weights`` is kept normalised (``logsumexp == 0``).  The cached
    ``performances``/``bins`` always refer to ``states`` row-by-row.
    """

    states: np.ndarray
    performances: np.ndarray
    bins: np.ndarray
    log_weights: np.ndarray

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def validate(self, model: PerformanceModel | None = None, grid: BinGrid | None = None) -> None:
        """Check the internal invariants (used by the test-suite)."""
        n = self.size
        if self.performances.shape != (n,) or self.bins.shape != (n,) or self.log_weights.shape != (n,):
            raise ValueError("ensemble arrays are not aligned")
        if abs(float(logsumexp(self.log_weights))) > 1e-8:
            raise ValueError("log_weights are not normalised")
        if model is not None:
            y = batch_performance(model, self.states)
            if not np.allclose(y, self.performances, rtol=1e-12, atol=1e-12, equal_nan=True):
                raise ValueError("cached performances do not match the states")
        if grid is not None:
            idx, in_range = bin_indices(grid, self.performances)
            if not np.all(in_range):
                raise ValueError("ensemble contains out-of-grid performances")
            if not np.array_equal(idx, self.bins):
                raise ValueError("cached bins do not match the performances")


def prior_ensemble(
    model: PerformanceModel, grid: BinGrid, n: int, stream: RandomStream
) -> tuple[ParticleEnsemble, int]:
    """Equal-weight ensemble of prior draws.

    Draws landing outside the grid keep a clamped bin index; their count
    is returned alongside so the driver can report it.  (They carry
    weight into the histogram stage, where they are tallied as
    out-of-range and dropped.)
    """
    if n < 1:
        raise ValueError("ensemble size must be >= 1")
    states = np.asarray(model.prior_sample(stream, n), dtype=float)
    if states.shape != (n, model.dim):
        raise ValueError(f"prior_sample returned shape {states.shape}, expected ({n}, {model.dim})")
    perfs = batch_performance(model, states)
    idx, in_range = bin_indices(grid, perfs)
    ensemble = ParticleEnsemble(
        states=states,
        performances=perfs,
        bins=idx,
        log_weights=np.full(n, -math.log(n)),
    )
    return ensemble, int(np.count_nonzero(~in_range))


def effective_sample_size(log_weights: np.ndarray) -> float:
    """Kish effective sample size ``1 / Σ w_i²`` of normalised weights."""
    log_weights = np.asarray(log_weights, dtype=float)
    norm = logsumexp(log_weights)
    if not np.isfinite(norm):
        raise ValueError("weights have no finite mass")
    return float(np.exp(-logsumexp(2.0 * (log_weights - norm))))


def systematic_resample(ensemble: ParticleEnsemble, stream: RandomStream) -> ParticleEnsemble:
    """Systematic (low-variance) resampling to equal weights.

    A single uniform offset u ~ U[0, 1/n) places the comb
    ``u + j/n``; particle multiplicities are the comb counts in each
    weight interval.  Uniform input weights reproduce the ensemble
    exactly.
    """
    n = ensemble.size
    weights = np.exp(ensemble.log_weights - logsumexp(ensemble.log_weights))
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    offset = stream.rng.random() / n
    points = offset + np.arange(n) / n
    chosen = np.clip(np.searchsorted(cdf, points, side="right"), 0, n - 1)
    return ParticleEnsemble(
        states=ensemble.states[chosen].copy(),
        performances=ensemble.performances[chosen].copy(),
        bins=ensemble.bins[chosen].copy(),
        log_weights=np.full(n, -math.log(n)),
    )


@dataclass(frozen=True)
class AdvanceRecord:
    """Diagnostics of one SMC transition."""

    ess: float
    resampled: bool
    acceptance_rate: float


def smcs_advance(
    ensemble: ParticleEnsemble,
    theta_from: ThetaTable,
    theta_to: ThetaTable,
    model: PerformanceModel,
    proposal: ProposalConfig,
    config: SmcsConfig,
    stream: RandomStream,
    workers: int | None = None,
) -> tuple[ParticleEnsemble, AdvanceRecord]:
    """One SMC transition from target ``q ∝ p/theta_from`` to ``p/theta_to``.

    Order of operations: reweight (incremental weights use each
    particle's *pre-move* bin), renormalise, measure ESS, move particles
    with the Metropolis kernel under ``theta_to``, then resample if the
    ESS fell below the configured fraction.
    """
    log_w = ensemble.log_weights + incremental_weight_batch(theta_from, theta_to, ensemble.bins)
    log_w = log_w - logsumexp(log_w)
    ess = effective_sample_size(log_w)

    states, perfs, bins, accepted, proposed = metropolis_sweep(
        theta_to,
        model,
        proposal,
        ensemble.states,
        ensemble.performances,
        ensemble.bins,
        stream.child(0),
        steps=config.kernel_steps,
        workers=workers,
    )
    moved = ParticleEnsemble(states=states, performances=perfs, bins=bins, log_weights=log_w)

    resample = ess < config.ess_min_fraction * ensemble.size
    if resample:
        moved = systematic_resample(moved, stream.child(1))
    return moved, AdvanceRecord(ess=ess, resampled=resample, acceptance_rate=accepted / proposed)


def ladder_size(
    ensemble: ParticleEnsemble, theta_t: ThetaTable, theta_next: ThetaTable, config: SmcsConfig
) -> int:
    """Number of tempered sub-steps needed for the jump Θ_t → Θ_{t+1}.

    The jump size is the largest |Δ log Θ| over bins currently occupied
    by the ensemble; one sub-step per ``temper_trigger`` of jump, capped
    at ``temper_max_steps``.
    """
    occupied = np.unique(ensemble.bins)
    gap = float(np.max(np.abs(theta_next.log_theta[occupied] - theta_t.log_theta[occupied])))
    if gap <= config.temper_trigger:
        return 1
    return min(math.ceil(gap / config.temper_trigger), config.temper_max_steps)


def temper_transition(
    ensemble: ParticleEnsemble,
    theta_t: ThetaTable,
    theta_next: ThetaTable,
    model: PerformanceModel,
    proposal: ProposalConfig,
    config: SmcsConfig,
    stream: RandomStream,
    workers: int | None = None,
) -> tuple[ParticleEnsemble, list[AdvanceRecord]]:
    """Move the ensemble from target Θ_t to Θ_{t+1}, tempering if needed.

    The ladder interpolates linearly in Θ-space at α_k = k/K,
    k = 1..K, with the last rung equal to ``theta_next`` exactly; each
    rung is one :func:`smcs_advance`.
    """
    steps = ladder_size(ensemble, theta_t, theta_next, config)
    records = []
    current = ensemble
    previous = theta_t
    for k in range(1, steps + 1):
        rung = interpolate_theta(theta_t, theta_next, k / steps)
        current, record = smcs_advance(
            current, previous, rung, model, proposal, config, stream.child(k - 1), workers=workers
        )
        records.append(record)
        previous = rung
    return current, records
