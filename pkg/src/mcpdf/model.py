"""Performance-model abstraction shared by every sampler.

A model bundles an input dimension, a prior over inputs, and the
deterministic performance map ``y = g(x)`` whose output density is to
be reconstructed.  All callables are vectorised over rows so that the
particle engines can evaluate whole ensembles in one call.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .streams import RandomStream

__all__ = ["PerformanceModel", "evaluate", "batch_performance", "worker_count"]

#: Environment variable selecting the worker count for batched model
#: evaluation.  Results are bitwise identical for any setting.
WORKERS_ENV = "MCPDF_WORKERS"


@dataclass(frozen=True, eq=False)
class PerformanceModel:
    """A scalar performance measure ``y = g(x)`` under input uncertainty.

    Parameters
    ----------
    dim : int
        Input dimension.
    prior_log_density : callable
        ``(n, dim) array -> (n,) array`` of log prior densities.  Must
        return ``-inf`` (never raise) for inputs outside the prior's
        support, and a finite value for anything ``prior_sample`` can
        produce.
    prior_sample : callable
        ``(stream, n) -> (n, dim) array`` of prior draws taken from the
        given :class:`~mcpdf.streams.RandomStream`.
    performance : callable
        ``(n, dim) array -> (n,) array`` applying ``g`` row-wise.  Rows
        must be evaluated independently (no cross-row coupling), which
        is what makes chunked parallel evaluation exact.
    name : str
        Identifier used in reports.
    prior_std : array or None
        Per-dimension prior scale; feeds the default random-walk
        proposal.  When ``None``, samplers estimate it from prior draws.
    """

    dim: int
    prior_log_density: Callable[[np.ndarray], np.ndarray]
    prior_sample: Callable[[RandomStream, int], np.ndarray]
    performance: Callable[[np.ndarray], np.ndarray]
    name: str = "model"
    prior_std: np.ndarray | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"model dimension must be >= 1, got {self.dim}")
        if self.prior_std is not None:
            std = np.asarray(self.prior_std, dtype=float)
            if std.shape != (self.dim,) or not np.all(std > 0):
                raise ValueError("prior_std must be a positive vector of length dim")
            object.__setattr__(self, "prior_std", std)


def evaluate(model: PerformanceModel, x: np.ndarray) -> float:
    """Evaluate ``g`` at a single input vector.

    Raises
    ------
    ValueError
        If ``x`` does not have shape ``(model.dim,)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (model.dim,):
        raise ValueError(f"expected input of shape ({model.dim},), got {x.shape}")
    return float(np.asarray(model.performance(x[np.newaxis, :]))[0])


def worker_count(override: int | None = None) -> int:
    """Resolve the evaluation worker count.

    Order of precedence: explicit ``override``, the ``MCPDF_WORKERS``
    environment variable, then 1 (serial).
    """
    if override is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        if not raw:
            return 1
        override = int(raw)
    if override < 1:
        raise ValueError(f"worker count must be >= 1, got {override}")
    return override


def _chunk_bounds(n: int, workers: int) -> list[tuple[int, int]]:
    # Fixed split independent of scheduling; row-wise models make the
    # chunked result identical to the serial one.
    per = -(-n // workers)
    return [(i, min(i + per, n)) for i in range(0, n, per)]


def batch_performance(
    model: PerformanceModel, states: np.ndarray, workers: int | None = None
) -> np.ndarray:
    """Evaluate ``g`` over the rows of ``states``, possibly in parallel.

    The array is split into contiguous chunks handed to a thread pool;
    chunk results are concatenated in index order, so the output is
    bitwise identical for every worker count.
    """
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != model.dim:
        raise ValueError(f"expected states of shape (n, {model.dim}), got {states.shape}")
    n = states.shape[0]
    if n == 0:
        return np.empty(0, dtype=float)
    k = worker_count(workers)
    if k <= 1 or n < 2 * k:
        return np.asarray(model.performance(states), dtype=float)
    bounds = _chunk_bounds(n, k)
    with ThreadPoolExecutor(max_workers=k) as pool:
        parts = list(pool.map(lambda b: np.asarray(model.performance(states[b[0] : b[1]])), bounds))
    return np.concatenate(parts).astype(float, copy=False)
