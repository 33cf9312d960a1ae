"""Full-density reconstruction of scalar performance measures.

Given a deterministic map y = g(x) and a prior on x, this package
reconstructs the probability density of y over a chosen range — bulk
and deep tails alike — with a flat-histogram (multicanonical) adaptive
importance-sampling iteration.  The warped targets are sampled either
by a parallel sequential-Monte-Carlo ensemble (the recommended engine)
or by single/multi-chain Metropolis MCMC; a plain Monte Carlo baseline
is included for validation.
"""

from .benchmarks import (
    benchmark_model,
    cantilever_deflection,
    cantilever_model,
    chi_square_bin_mass,
    chi_square_density,
    chi_square_model,
    copula_loss,
    copula_model,
    copula_tail_probability,
    default_settings,
    quarter_car_model,
    quarter_car_response,
)
from .driver import (
    SAMPLER_KINDS,
    McmcIterationResult,
    PdfEstimate,
    RunConfig,
    run_mcmc_iteration,
    run_mmc,
    run_plain_mc,
    tail_probability,
)
from .histogram import (
    BinCounts,
    BinGrid,
    ThetaTable,
    accumulate_counts,
    bin_index,
    bin_indices,
    flatness,
    interpolate_theta,
    stabilize_theta,
    update_theta,
    visited_fraction,
    warped_log_density,
    warped_log_density_batch,
)
from .kernels import (
    KernelOutcome,
    ProposalConfig,
    default_proposal,
    incremental_weight,
    incremental_weight_batch,
    metropolis_step,
    metropolis_sweep,
    propose,
)
from .model import PerformanceModel, batch_performance, evaluate, worker_count
from .smcs import (
    AdvanceRecord,
    ParticleEnsemble,
    SmcsConfig,
    effective_sample_size,
    ladder_size,
    prior_ensemble,
    smcs_advance,
    systematic_resample,
    temper_transition,
)
from .streams import RandomStream, derive_stream

__version__ = "0.1.0"
