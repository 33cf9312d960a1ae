"""Binned support of the performance variable and flat-histogram tables.

The reconstruction discretises the performance range ``[lower, upper]``
into ``count`` equal bins.  A :class:`ThetaTable` holds the bin-weight
vector Θ used to warp the prior into the importance distribution
``q(x) ∝ p(x) / Θ_{bin(g(x))}``; at convergence Θ is proportional to the
bin probabilities and the sampled histogram is flat.  All Θ handling is
done in log space, normalised so that ``logsumexp(log_theta) = 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .model import PerformanceModel, evaluate

__all__ = [
    "BinGrid",
    "ThetaTable",
    "BinCounts",
    "bin_index",
    "bin_indices",
    "accumulate_counts",
    "update_theta",
    "stabilize_theta",
    "interpolate_theta",
    "flatness",
    "visited_fraction",
    "warped_log_density",
    "warped_log_density_batch",
]


@dataclass(frozen=True)
class BinGrid:
    """Equal-width binning of the performance range ``[lower, upper]``.

    Bin ``i`` covers ``[lower + i*width, lower + (i+1)*width)``; the last
    bin is closed on the right so the grid partitions the range exactly.
    """

    lower: float
    upper: float
    count: int

    def __post_init__(self):
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        object.__setattr__(self, "count", int(self.count))
        if not np.isfinite(self.lower) or not np.isfinite(self.upper):
            raise ValueError("grid bounds must be finite")
        if self.upper <= self.lower:
            raise ValueError(f"grid upper bound must exceed lower bound, got [{self.lower}, {self.upper}]")
        if self.count < 1:
            raise ValueError(f"grid needs at least one bin, got {self.count}")

    @property
    def width(self) -> float:
        return (self.upper - self.lower) / self.count

    @property
    def centers(self) -> np.ndarray:
        return self.lower + (np.arange(self.count) + 0.5) * self.width

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, self.count + 1)


def bin_index(grid: BinGrid, y: float) -> int | None:
    """Index of the bin containing ``y``, or ``None`` outside the grid.

    ``y == upper`` maps to the last bin; values below ``lower`` or above
    ``upper`` (including non-finite values) map to ``None``.
    """
    y = float(y)
    if not np.isfinite(y) or y < grid.lower or y > grid.upper:
        return None
    i = int((y - grid.lower) // grid.width)
    return min(i, grid.count - 1)


def bin_indices(grid: BinGrid, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`bin_index` with clamping.

    Returns
    -------
    idx : int array
        Bin index per value, clamped to ``[0, count-1]`` even for
        out-of-range values (callers use the accompanying mask to decide
        whether the clamped index is meaningful).
    in_range : bool array
        True where the value lies inside ``[lower, upper]`` and is finite.
    """
    values = np.asarray(values, dtype=float)
    with np.errstate(invalid="ignore"):
        raw = np.floor((values - grid.lower) / grid.width)
    raw = np.nan_to_num(raw, nan=-1.0, posinf=float(grid.count), neginf=-1.0)
    idx = np.clip(raw.astype(np.int64), 0, grid.count - 1)
    in_range = np.isfinite(values) & (values >= grid.lower) & (values <= grid.upper)
    return idx, in_range


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class ThetaTable:
    """Log bin weights, normalised so that ``logsumexp(log_theta) == 0``.

    The constructor accepts any finite log-weight vector and normalises
    it; Θ is defined up to an overall constant, so only ratios matter.
    """

    grid: BinGrid
    log_theta: np.ndarray

    def __post_init__(self):
        log_theta = np.asarray(self.log_theta, dtype=float)
        if log_theta.shape != (self.grid.count,):
            raise ValueError(
                f"log_theta must have shape ({self.grid.count},), got {log_theta.shape}"
            )
        if not np.all(np.isfinite(log_theta)):
            raise ValueError("log_theta must be finite everywhere: Θ must be positive on the grid")
        object.__setattr__(self, "log_theta", _frozen(log_theta - logsumexp(log_theta)))

    @classmethod
    def uniform(cls, grid: BinGrid) -> "ThetaTable":
        """The flat table Θ_i = 1/count used to start a run."""
        return cls(grid, np.zeros(grid.count))

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)


@dataclass(frozen=True, eq=False)
class BinCounts:
    """One iteration's histogram of performance samples.

    ``weighted_mass`` is the importance-weighted occupancy Ĥ_i (sums to
    at most 1; mass carried by out-of-range samples is dropped and
    tallied), ``raw_hits`` the unweighted in-range sample counts.
    """

    grid: BinGrid
    weighted_mass: np.ndarray
    raw_hits: np.ndarray
    out_of_range: int

    def __post_init__(self):
        object.__setattr__(self, "weighted_mass", _frozen(self.weighted_mass))
        hits = np.array(self.raw_hits, dtype=np.int64, copy=True)
        hits.flags.writeable = False
        object.__setattr__(self, "raw_hits", hits)


def accumulate_counts(
    grid: BinGrid,
    values: np.ndarray,
    weights: np.ndarray | None = None,
    chunks: int | None = None,
) -> BinCounts:
    """Histogram weighted samples of the performance variable.

    Parameters
    ----------
    grid : BinGrid
    values : array
        Performance samples.
    weights : array or None
        Normalised importance weights (must sum to 1 within 1e-9);
        ``None`` means uniform ``1/n``.
    chunks : int or None
        When given, the accumulation is performed over ``chunks``
        contiguous blocks combined in a fixed pairwise order — the same
        reduction a multi-worker run uses, so results do not depend on
        the degree of parallelism.

    Raises
    ------
    ValueError
        On length mismatch, negative weights, or an unnormalised weight
        vector.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if weights is None:
        if n == 0:
            raise ValueError("cannot accumulate an empty sample set")
        weights = np.full(n, 1.0 / n)
    else:
        weights = np.asarray(weights, dtype=float)
    if weights.shape != values.shape:
        raise ValueError(f"values and weights must align, got {values.shape} vs {weights.shape}")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    total = float(np.sum(weights))
    if not np.isfinite(total) or abs(total - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {total!r})")

    idx, in_range = bin_indices(grid, values)
    kept = idx[in_range]
    kept_w = weights[in_range]

    if chunks is None or chunks <= 1 or kept.size == 0:
        mass = np.bincount(kept, weights=kept_w, minlength=grid.count)
        hits = np.bincount(kept, minlength=grid.count)
    else:
        per = -(-kept.size // int(chunks))
        mass_parts = []
        hits_parts = []
        for start in range(0, kept.size, per):
            block = slice(start, min(start + per, kept.size))
            mass_parts.append(np.bincount(kept[block], weights=kept_w[block], minlength=grid.count))
            hits_parts.append(np.bincount(kept[block], minlength=grid.count))
        mass = _pairwise_sum(mass_parts)
        hits = _pairwise_sum(hits_parts)
    return BinCounts(
        grid=grid,
        weighted_mass=mass,
        raw_hits=hits.astype(np.int64),
        out_of_range=int(np.count_nonzero(~in_range)),
    )


def _pairwise_sum(parts: list[np.ndarray]) -> np.ndarray:
    # Fixed-shape reduction tree: (p0+p1) + (p2+p3) + ...
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def update_theta(theta: ThetaTable, counts: BinCounts) -> ThetaTable:
    """One flat-histogram update: Θ' ∝ Ĥ · Θ with empty-bin carry.

    Bins visited this iteration get the product Ĥ_i Θ_i, normalised to
    unit mass over the visited set; unvisited bins keep their previous
    (normalised) weight so the sampler is not pushed toward regions it
    has no evidence about.  The result is renormalised globally.
    """
    if counts.grid != theta.grid:
        raise ValueError("counts and theta are defined on different grids")
    visited = counts.weighted_mass > 0
    if not np.any(visited):
        raise ValueError("cannot update theta from an iteration with no in-range samples")
    new_log = np.array(theta.log_theta, copy=True)
    with np.errstate(divide="ignore"):
        prod = np.log(counts.weighted_mass[visited]) + theta.log_theta[visited]
    new_log[visited] = prod - logsumexp(prod)
    return ThetaTable(theta.grid, new_log)


def stabilize_theta(theta: ThetaTable, trusted: np.ndarray) -> ThetaTable:
    """Give low-evidence bins the log-weight of the nearest trusted bin.

    A bin that has produced no samples yet carries no information of its
    own — its table entry is the initialization value dragged along by
    the empty-bin carry rule.  Left in place, that stale value makes the
    warped target strongly repellent exactly where the recursion still
    needs to go: the frontier bins it has calibrated are orders of
    magnitude lighter, so kernel moves across the frontier are rejected
    almost surely and exploration stalls.  Conversely, a bin whose first
    estimate rests on a handful of samples gets a wildly noisy product —
    typically orders of magnitude too small — and the next warped target
    then demands most of the ensemble inside that one bin, starving the
    rest of the grid.

    Both pathologies are cured the same way: bins outside the ``trusted``
    mask borrow the nearest trusted bin's weight, which keeps the warped
    density continuous across the exploration frontier (moves into fresh
    bins survive at the plain Metropolis rate) while deferring each bin's
    entry into the recursion until its occupancy statistics can support
    an estimate.  Trusted bins are returned unchanged (up to the table's
    global normalisation).  A tie between two equidistant trusted
    neighbours is broken toward the smaller weight, which errs toward
    exploration.
    """
    trusted = np.asarray(trusted, dtype=bool)
    if trusted.shape != (theta.grid.count,):
        raise ValueError(
            f"trusted mask must have one entry per bin, got {trusted.shape} "
            f"for {theta.grid.count} bins"
        )
    if trusted.all():
        return theta
    if not trusted.any():
        return theta
    anchors = np.nonzero(trusted)[0]
    holes = np.nonzero(~trusted)[0]
    right = np.searchsorted(anchors, holes)
    left = np.clip(right - 1, 0, anchors.size - 1)
    right = np.clip(right, 0, anchors.size - 1)
    left_dist = np.abs(holes - anchors[left])
    right_dist = np.abs(anchors[right] - holes)
    log_left = theta.log_theta[anchors[left]]
    log_right = theta.log_theta[anchors[right]]
    nearest = np.where(
        left_dist < right_dist,
        log_left,
        np.where(right_dist < left_dist, log_right, np.minimum(log_left, log_right)),
    )
    new_log = np.array(theta.log_theta, copy=True)
    new_log[holes] = nearest
    return ThetaTable(theta.grid, new_log)


def interpolate_theta(theta_a: ThetaTable, theta_b: ThetaTable, alpha: float) -> ThetaTable:
    """Linear interpolation in Θ-space: (1-α)·Θ_a + α·Θ_b, renormalised.

    The endpoints are returned exactly (``alpha == 0`` gives ``theta_a``,
    ``alpha == 1`` gives ``theta_b``), which keeps tempering ladders
    anchored to their targets.
    """
    if theta_a.grid != theta_b.grid:
        raise ValueError("cannot interpolate tables on different grids")
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"interpolation weight must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return theta_a
    if alpha == 1.0:
        return theta_b
    mixed = np.logaddexp(np.log1p(-alpha) + theta_a.log_theta, np.log(alpha) + theta_b.log_theta)
    return ThetaTable(theta_a.grid, mixed)


def flatness(counts: BinCounts) -> float:
    """Max/min ratio of ``weighted_mass`` over visited bins (1 = flat).

    Raises
    ------
    ValueError
        If no bin carries any mass (the ratio is undefined).
    """
    occupied = counts.weighted_mass[counts.weighted_mass > 0]
    if occupied.size == 0:
        raise ValueError("flatness is undefined when no bin carries mass")
    return float(occupied.max() / occupied.min())


def visited_fraction(counts: BinCounts) -> float:
    """Fraction of grid bins with positive weighted occupancy."""
    return float(np.count_nonzero(counts.weighted_mass > 0) / counts.grid.count)


def warped_log_density(
    theta: ThetaTable, model: PerformanceModel, x: np.ndarray, performance: float | None = None
) -> float:
    """Unnormalised log importance density ``log p(x) - log Θ_{bin(g(x))}``.

    Performance values that fall outside the grid are clamped to the
    nearest edge bin; the hard restriction to the grid's preimage is
    enforced by the transition kernels, not here.  ``performance`` can
    be supplied to reuse an already-computed ``g(x)``.
    """
    x = np.asarray(x, dtype=float)
    log_p = float(np.asarray(model.prior_log_density(x[np.newaxis, :]))[0])
    if log_p == -np.inf:
        return -np.inf
    y = evaluate(model, x) if performance is None else float(performance)
    if not np.isfinite(y):
        return -np.inf
    i = bin_index(theta.grid, y)
    if i is None:
        i = 0 if y < theta.grid.lower else theta.grid.count - 1
    return log_p - float(theta.log_theta[i])


def warped_log_density_batch(
    theta: ThetaTable,
    model: PerformanceModel,
    states: np.ndarray,
    performances: np.ndarray | None = None,
) -> np.ndarray:
    """Row-wise :func:`warped_log_density` over an ensemble."""
    states = np.asarray(states, dtype=float)
    log_p = np.asarray(model.prior_log_density(states), dtype=float)
    if performances is None:
        from .model import batch_performance

        performances = batch_performance(model, states)
    performances = np.asarray(performances, dtype=float)
    idx, _ = bin_indices(theta.grid, performances)
    out = log_p - theta.log_theta[idx]
    out[~np.isfinite(performances)] = -np.inf
    return out
