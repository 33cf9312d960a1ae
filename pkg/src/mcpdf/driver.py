"""Outer flat-histogram iteration and the sampling back ends.

One run reconstructs the probability mass of every bin of the
performance grid.  Iteration 0 samples the prior; each later iteration
targets the warped distribution q_t ∝ p/Θ_t with one of three engines
(sequential particle ensemble, single MCMC chain, parallel MCMC
chains), histograms the samples, and updates Θ with the occupancy so
the next target flattens the histogram further.  The final estimate is
the last iteration's occupancy multiplied back by the Θ it was sampled
under.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .histogram import (
    BinCounts,
    BinGrid,
    ThetaTable,
    accumulate_counts,
    bin_indices,
    flatness,
    stabilize_theta,
    update_theta,
    visited_fraction,
)
from .kernels import ProposalConfig, default_proposal, metropolis_sweep
from .model import PerformanceModel, batch_performance
from .smcs import SmcsConfig, prior_ensemble, temper_transition
from .streams import derive_stream

__all__ = [
    "SAMPLER_KINDS",
    "RunConfig",
    "PdfEstimate",
    "McmcIterationResult",
    "run_mmc",
    "run_plain_mc",
    "run_mcmc_iteration",
    "tail_probability",
]

SAMPLER_KINDS = ("msmcs", "mmc_mcmc_single", "mmc_mcmc_multi", "plain_mc")

_MC_CHUNK = 1 << 17


@dataclass(frozen=True)
class RunConfig:
    """Settings of one reconstruction run.

    particles
        Samples drawn per iteration (ensemble size / chain budget).
    sampler
        One of :data:`SAMPLER_KINDS`.  ``mmc_mcmc_multi`` splits the
        per-iteration budget over ``chains`` parallel chains;
        ``plain_mc`` ignores the iteration structure and draws
        ``samples`` prior samples.
    burn_in
        Fraction of each chain discarded (MCMC engines only).
    flatness_stop
        When set, stop as soon as an iteration's histogram flatness
        (max/min over visited bins) falls to or below this ratio.
    min_bin_evidence
        Cumulative hit count a bin needs before its table entry is
        trusted; below it the bin borrows the nearest trusted bin's
        weight (see :func:`~mcpdf.histogram.stabilize_theta`).
    estimate_window
        When set to W > 1, the final estimate is the hit-count-weighted
        average of the last W iterations' per-iteration estimates
        Ĥ_t·Θ_t instead of the last iteration's alone.  Every iteration
        at the flat-histogram fixed point estimates the same bin masses,
        so averaging trades no bias for a substantial variance
        reduction; ``None`` (or 1) keeps the single-iteration estimate.
    """

    grid: BinGrid
    iterations: int = 20
    particles: int = 5000
    sampler: str = "msmcs"
    chains: int = 1
    samples: int | None = None
    burn_in: float = 0.0
    seed: int = 0
    proposal: ProposalConfig | None = None
    smcs: SmcsConfig = field(default_factory=SmcsConfig)
    workers: int | None = None
    flatness_stop: float | None = None
    min_bin_evidence: int = 16
    estimate_window: int | None = None

    def __post_init__(self):
        if self.sampler not in SAMPLER_KINDS:
            raise ValueError(f"unknown sampler {self.sampler!r}; choose from {SAMPLER_KINDS}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.particles < 2:
            raise ValueError(f"particles must be >= 2, got {self.particles}")
        if self.chains < 1:
            raise ValueError(f"chains must be >= 1, got {self.chains}")
        if self.sampler == "mmc_mcmc_multi" and self.particles % self.chains != 0:
            raise ValueError(
                f"chains ({self.chains}) must divide the per-iteration budget ({self.particles})"
            )
        if not 0.0 <= self.burn_in < 1.0:
            raise ValueError(f"burn_in must lie in [0, 1), got {self.burn_in}")
        if self.samples is not None and self.samples < 1:
            raise ValueError(f"samples must be >= 1, got {self.samples}")
        if self.flatness_stop is not None and self.flatness_stop < 1.0:
            raise ValueError("flatness_stop is a max/min ratio and must be >= 1")
        if self.min_bin_evidence < 1:
            raise ValueError(f"min_bin_evidence must be >= 1, got {self.min_bin_evidence}")
        if self.estimate_window is not None and self.estimate_window < 1:
            raise ValueError(f"estimate_window must be >= 1, got {self.estimate_window}")


@dataclass(frozen=True, eq=False)
class PdfEstimate:
    """Reconstructed bin probabilities plus run diagnostics.

    ``bin_prob`` holds P(y ∈ B_i), normalised to sum 1 for every
    backend (plain MC assigns out-of-range samples to the nearest edge
    bin and reports them in the diagnostics).  ``raw_hits`` are the
    unweighted sample counts of the final iteration.
    """

    grid: BinGrid
    bin_prob: np.ndarray
    raw_hits: np.ndarray
    diagnostics: dict

    @property
    def density(self) -> np.ndarray:
        return self.bin_prob / self.grid.width

    @property
    def log10_density(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log10(self.density)


def tail_probability(estimate: PdfEstimate, threshold: float) -> float:
    """P(y > threshold) from the binned estimate.

    Sums the probability of all bins above the threshold; the bin
    containing it contributes proportionally to the part of its width
    that lies above.  The threshold must lie on the grid: the lower
    edge returns the total grid mass, the upper edge returns 0.
    """
    grid = estimate.grid
    threshold = float(threshold)
    if not grid.lower <= threshold <= grid.upper:
        raise ValueError(
            f"threshold {threshold} lies outside the grid [{grid.lower}, {grid.upper}]"
        )
    total = float(np.sum(estimate.bin_prob))
    if threshold == grid.lower:
        return total
    if threshold == grid.upper:
        return 0.0
    i = min(int((threshold - grid.lower) // grid.width), grid.count - 1)
    above_edge = grid.lower + (i + 1) * grid.width
    fraction = (above_edge - threshold) / grid.width
    return float(np.sum(estimate.bin_prob[i + 1 :]) + fraction * estimate.bin_prob[i])


def run_plain_mc(
    model: PerformanceModel,
    grid: BinGrid,
    samples: int,
    seed: int = 0,
    workers: int | None = None,
) -> PdfEstimate:
    """Histogram of plain prior sampling: P̂_i = N_i / samples.

    Out-of-range samples are assigned to the nearest edge bin (and
    tallied in the diagnostics) so the estimate stays normalised.
    """
    samples = int(samples)
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    root = derive_stream(seed, (0,))
    hits = np.zeros(grid.count, dtype=np.int64)
    out_of_range = 0
    invalid = 0
    done = 0
    chunk_index = 0
    while done < samples:
        n = min(_MC_CHUNK, samples - done)
        states = np.asarray(model.prior_sample(root.child(0, chunk_index), n), dtype=float)
        perfs = batch_performance(model, states, workers)
        idx, in_range = bin_indices(grid, perfs)
        finite = np.isfinite(perfs)
        hits += np.bincount(idx[finite], minlength=grid.count)
        out_of_range += int(np.count_nonzero(finite & ~in_range))
        invalid += int(np.count_nonzero(~finite))
        done += n
        chunk_index += 1
    kept = int(hits.sum())
    if kept == 0:
        raise RuntimeError("no sample produced a finite performance value")
    prob = hits / kept
    diagnostics = {
        "sampler": "plain_mc",
        "model": model.name,
        "samples": samples,
        "seed": int(seed),
        "out_of_range": out_of_range,
        "invalid": invalid,
        "iterations": [],
    }
    return PdfEstimate(grid=grid, bin_prob=prob, raw_hits=hits, diagnostics=diagnostics)


def run_mmc(model: PerformanceModel, config: RunConfig) -> PdfEstimate:
    """Reconstruct the performance density with the configured engine."""
    if config.sampler == "plain_mc":
        budget = config.samples if config.samples is not None else config.particles * config.iterations
        return run_plain_mc(model, config.grid, budget, seed=config.seed, workers=config.workers)
    return _run_flat_histogram(model, config)


# roles used as the trailing stream-path component of each iteration
_DRAW = 0  # fresh sampling (prior draws)
_MOVE = 1  # kernel moves / tempering
_PICK = 2  # chain initial-state selection
_SCALE = 3  # proposal-scale estimation


def _run_flat_histogram(model: PerformanceModel, config: RunConfig) -> PdfEstimate:
    grid = config.grid
    root = derive_stream(config.seed, (0,))
    proposal = config.proposal
    if proposal is None:
        proposal = default_proposal(model, root.child(0, _SCALE))

    theta = ThetaTable.uniform(grid)
    previous_theta = theta
    cumulative_hits = np.zeros(grid.count, dtype=np.int64)
    iteration_diags: list[dict] = []

    ensemble = None  # msmcs state
    chain_carry = None  # single-chain warm-start state

    last_counts: BinCounts | None = None
    last_theta = theta
    stopped_early = None
    iter_prob: list[np.ndarray] = []  # per-iteration renormalised Ĥ_t·Θ_t
    iter_hits: list[np.ndarray] = []

    for t in range(config.iterations):
        if t == 0:
            values, raw = _prior_iteration(model, grid, config, root.child(0, _DRAW))
            if config.sampler == "msmcs":
                ensemble = raw
                weights = np.exp(ensemble.log_weights)
                values = ensemble.performances
            else:
                weights = None
            ess_history = None
            ladder = 0
            resampled = 0
            acceptance = None
        elif config.sampler == "msmcs":
            ensemble, records = temper_transition(
                ensemble,
                previous_theta,
                theta,
                model,
                proposal,
                config.smcs,
                root.child(t, _MOVE),
                workers=config.workers,
            )
            weights = np.exp(ensemble.log_weights)
            values = ensemble.performances
            ess_history = [rec.ess for rec in records]
            ladder = len(records)
            resampled = sum(rec.resampled for rec in records)
            acceptance = float(np.mean([rec.acceptance_rate for rec in records]))
        else:
            values, acceptance, chain_carry = _mcmc_iteration(
                theta, model, proposal, config, root.child(t), chain_carry
            )
            weights = None
            ess_history = None
            ladder = 0
            resampled = 0

        counts = accumulate_counts(grid, values, weights)
        cumulative_hits += counts.raw_hits
        trusted = cumulative_hits >= config.min_bin_evidence
        if not trusted.any():
            trusted = cumulative_hits > 0
        theta_next = stabilize_theta(update_theta(theta, counts), trusted)
        iteration_flatness = flatness(counts)
        iteration_diags.append(
            {
                "iteration": t,
                "flatness": iteration_flatness,
                "visited_fraction": visited_fraction(counts),
                "out_of_range": counts.out_of_range,
                "samples": int(values.shape[0]),
                "acceptance_rate": acceptance,
                "ess": ess_history,
                "ladder_length": ladder,
                "resample_events": resampled,
            }
        )
        mass_t = counts.weighted_mass * np.exp(theta.log_theta)
        total_t = float(mass_t.sum())
        if total_t > 0:
            iter_prob.append(mass_t / total_t)
            iter_hits.append(np.asarray(counts.raw_hits, dtype=float))
        last_counts, last_theta = counts, theta
        previous_theta, theta = theta, theta_next
        if config.flatness_stop is not None and iteration_flatness <= config.flatness_stop:
            stopped_early = t
            break

    # Final estimate: occupancy un-warped by the table it was sampled
    # under, renormalised over the grid.  With an estimate window the
    # last W per-iteration estimates are combined, each bin weighted by
    # the hit counts behind it.
    window = 1 if config.estimate_window is None else min(config.estimate_window, len(iter_prob))
    if window <= 1:
        mass = last_counts.weighted_mass * np.exp(last_theta.log_theta)
    else:
        probs = np.stack(iter_prob[-window:])
        hits = np.stack(iter_hits[-window:])
        weight_total = hits.sum(axis=0)
        with np.errstate(invalid="ignore"):
            mass = np.where(weight_total > 0, (hits * probs).sum(axis=0) / weight_total, 0.0)
    total = float(mass.sum())
    if total <= 0:
        raise RuntimeError("reconstruction collapsed: no in-range mass in the final iteration")
    diagnostics = {
        "sampler": config.sampler,
        "model": model.name,
        "seed": int(config.seed),
        "particles": int(config.particles),
        "iterations_run": len(iteration_diags),
        "stopped_early_at": stopped_early,
        "chains": int(config.chains) if config.sampler == "mmc_mcmc_multi" else 1,
        "burn_in": float(config.burn_in),
        "estimate_window": window,
        "final_log_theta": np.array(last_theta.log_theta),
        "iterations": iteration_diags,
    }
    return PdfEstimate(
        grid=grid,
        bin_prob=mass / total,
        raw_hits=np.array(last_counts.raw_hits),
        diagnostics=diagnostics,
    )


def _prior_iteration(model, grid, config, stream):
    """Iteration 0: plain prior draws for every engine."""
    if config.sampler == "msmcs":
        ensemble, _ = prior_ensemble(model, grid, config.particles, stream)
        return ensemble.performances, ensemble
    states = np.asarray(model.prior_sample(stream, config.particles), dtype=float)
    perfs = batch_performance(model, states, config.workers)
    return perfs, None


def _prior_chain_seeds(model, grid, n, stream, workers):
    """Fresh in-range prior draws used as cold chain starting states.

    A cold start is prior-typical, not target-typical: the chain only
    forgets it if it is long enough to mix into the warped target.  The
    single-chain backend therefore cold-starts once and then continues
    the same chain across iterations, while the multi-chain backend
    cold-starts every chain at every iteration -- the naive parallel
    initialisation whose missing burn-in is exactly what separates one
    long chain from many short ones.
    """
    states = np.empty((n, model.dim))
    perfs = np.empty(n)
    bins = np.empty(n, dtype=np.int64)
    have = 0
    for attempt in range(64):
        batch = max(2 * (n - have), 64)
        draw = np.asarray(model.prior_sample(stream.child(attempt), batch), dtype=float)
        y = batch_performance(model, draw, workers)
        idx, in_range = bin_indices(grid, y)
        take = min(int(np.count_nonzero(in_range)), n - have)
        if take:
            keep = np.nonzero(in_range)[0][:take]
            states[have : have + take] = draw[keep]
            perfs[have : have + take] = y[keep]
            bins[have : have + take] = idx[keep]
            have += take
        if have == n:
            return states, perfs, bins
    raise RuntimeError(
        "could not draw chain seeds on the performance grid; widen the grid or check the model"
    )


def _mcmc_iteration(theta, model, proposal, config, stream, carry):
    """One MCMC iteration over the warped target.

    The single-chain backend runs one long chain for the whole
    reconstruction: each iteration resumes from the previous iteration's
    final state (``carry``), so no per-iteration burn-in is needed and
    all samples are utilised.  The multi-chain backend restarts every
    chain from a fresh prior draw each iteration.
    """
    if config.sampler == "mmc_mcmc_single":
        if carry is None:
            seeds = _prior_chain_seeds(model, theta.grid, 1, stream.child(_PICK), config.workers)
            carry = (seeds[0][0], seeds[1][0], seeds[2][0])
        states, perfs, bins, acceptance = _single_chain(
            theta,
            model,
            proposal,
            config.particles,
            stream.child(_MOVE),
            *carry,
        )
        discard = int(config.burn_in * perfs.shape[0])
        carry = (states[-1], perfs[-1], bins[-1])
        return perfs[discard:], acceptance, carry

    seeds = _prior_chain_seeds(model, theta.grid, config.chains, stream.child(_PICK), config.workers)
    length = config.particles // config.chains
    states, perfs, bins, acceptance = _parallel_chains(
        theta,
        model,
        proposal,
        length,
        stream.child(_MOVE),
        seeds[0],
        seeds[1],
        seeds[2],
        config.workers,
    )
    discard = int(config.burn_in * length)
    return perfs[discard:].reshape(-1), acceptance, None


@dataclass(frozen=True, eq=False)
class McmcIterationResult:
    """Retained samples of one Metropolis iteration, with cached y/bins."""

    states: np.ndarray
    performances: np.ndarray
    bins: np.ndarray
    acceptance_rate: float


def run_mcmc_iteration(
    theta: ThetaTable,
    model: PerformanceModel,
    proposal: ProposalConfig,
    n_samples: int,
    chains: int = 1,
    burn_in_fraction: float = 0.0,
    seed: int = 0,
    workers: int | None = None,
) -> McmcIterationResult:
    """One standalone MCMC iteration targeting ``theta``'s warped density.

    Runs ``chains`` Metropolis chains of combined length ``n_samples``
    (``chains`` must divide it evenly), each cold-started from an
    in-range prior draw, and discards the first ``burn_in_fraction`` of
    every chain.  Inside :func:`run_mmc` the single-chain engine instead
    resumes its one long chain across iterations; this entry point is
    for driving an iteration directly against a fixed table.
    """
    n_samples = int(n_samples)
    if chains < 1:
        raise ValueError(f"chains must be >= 1, got {chains}")
    if n_samples < chains:
        raise ValueError(f"need at least one sample per chain, got {n_samples} for {chains}")
    if n_samples % chains != 0:
        raise ValueError(f"chains ({chains}) must divide n_samples ({n_samples})")
    if not 0.0 <= burn_in_fraction < 1.0:
        raise ValueError(f"burn_in_fraction must lie in [0, 1), got {burn_in_fraction}")
    root = derive_stream(seed, (0,))
    seeds = _prior_chain_seeds(model, theta.grid, chains, root.child(0, _PICK), workers)
    length = n_samples // chains
    if chains == 1:
        states, perfs, bins, acceptance = _single_chain(
            theta, model, proposal, length, root.child(0, _MOVE), seeds[0][0], seeds[1][0], seeds[2][0]
        )
        discard = int(burn_in_fraction * length)
        return McmcIterationResult(
            states[discard:], perfs[discard:], bins[discard:], acceptance
        )
    states, perfs, bins, acceptance = _parallel_chains(
        theta, model, proposal, length, root.child(0, _MOVE), seeds[0], seeds[1], seeds[2], workers
    )
    discard = int(burn_in_fraction * length)
    return McmcIterationResult(
        states[discard:].reshape(-1, model.dim),
        perfs[discard:].reshape(-1),
        bins[discard:].reshape(-1),
        acceptance,
    )


def _single_chain(theta, model, proposal, length, stream, x0, y0, b0):
    """One Metropolis chain recorded state-by-state (scalar inner loop)."""
    grid = theta.grid
    log_theta = theta.log_theta
    lower, width, count = grid.lower, grid.width, grid.count
    upper = grid.upper
    rng = stream.rng
    noise = rng.standard_normal((length, x0.size)) * proposal.step_scale
    with np.errstate(divide="ignore"):
        log_u = np.log(rng.random(length))

    states = np.empty((length, x0.size))
    perfs = np.empty(length)
    bins = np.empty(length, dtype=np.int64)
    x = np.array(x0, dtype=float)
    y = float(y0)
    b = int(b0)
    log_p = float(np.asarray(model.prior_log_density(x[np.newaxis, :]))[0])
    accepted = 0
    for s in range(length):
        candidate = x + noise[s]
        log_p_cand = float(np.asarray(model.prior_log_density(candidate[np.newaxis, :]))[0])
        if log_p_cand > -math.inf:
            y_cand = float(np.asarray(model.performance(candidate[np.newaxis, :]))[0])
            if math.isfinite(y_cand) and lower <= y_cand <= upper:
                b_cand = min(int((y_cand - lower) // width), count - 1)
                if log_u[s] < (log_p_cand - log_theta[b_cand]) - (log_p - log_theta[b]):
                    x, y, b, log_p = candidate, y_cand, b_cand, log_p_cand
                    accepted += 1
        states[s] = x
        perfs[s] = y
        bins[s] = b
    return states, perfs, bins, accepted / length


def _parallel_chains(theta, model, proposal, length, stream, x0, y0, b0, workers):
    """Lock-step parallel chains built on the vectorised kernel sweep."""
    chains = x0.shape[0]
    states = np.array(x0, dtype=float)
    perfs = np.array(y0, dtype=float)
    bins = np.array(b0, dtype=np.int64)
    traj_states = np.empty((length, chains, states.shape[1]))
    traj_perfs = np.empty((length, chains))
    traj_bins = np.empty((length, chains), dtype=np.int64)
    accepted = 0
    for s in range(length):
        states, perfs, bins, acc, _ = metropolis_sweep(
            theta, model, proposal, states, perfs, bins, stream.child(s), steps=1, workers=workers
        )
        traj_states[s] = states
        traj_perfs[s] = perfs
        traj_bins[s] = bins
        accepted += acc
    return traj_states, traj_perfs, traj_bins, accepted / (length * chains)
