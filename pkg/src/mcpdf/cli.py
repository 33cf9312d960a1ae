"""Command-line front end: manifests in, CSV + JSON bundles out.

Subcommands
-----------
``run``
    Execute a reconstruction described by a JSON manifest (and/or
    flags), writing ``histogram.csv``, ``diagnostics.json``, and
    ``manifest.json`` into the output directory.  The manifest echo is
    fully resolved — re-running from it reproduces every file
    byte-for-byte.
``compare``
    Per-bin absolute/relative error of a saved histogram against the
    analytic chi-square density or another saved histogram.
``tail``
    Query exceedance probabilities P(y > t) on a saved histogram.

Parallel model evaluation is controlled by the ``MCPDF_WORKERS``
environment variable; results are bitwise identical for any setting.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .benchmarks import (
    MODEL_NAMES,
    benchmark_model,
    chi_square_density,
    copula_tail_probability,
    default_settings,
)
from .driver import SAMPLER_KINDS, PdfEstimate, RunConfig, run_mmc, tail_probability
from .histogram import BinGrid
from .kernels import ProposalConfig
from .smcs import SmcsConfig

__all__ = [
    "RunManifest",
    "ResultBundle",
    "parse_manifest",
    "run_command",
    "compare_command",
    "write_bundle",
    "load_estimate",
    "main",
]

HISTOGRAM_HEADER = "bin_center,prob,density,log10_density"

_DEFAULT_LOSS_FRACTIONS = (0.1, 0.2, 0.25, 0.3)


@dataclass(frozen=True)
class RunManifest:
    """Fully-resolved description of one run.

    Every field has a documented default (several depend on the model),
    so a minimal manifest needs only ``{"model": ...}``.  Unknown keys
    are rejected by :func:`parse_manifest`.
    """

    model: str
    model_params: tuple = ()  # sorted (key, value) pairs
    sampler: str = "msmcs"
    iterations: int = 20
    particles: int | None = None  # default depends on the model
    samples: int | None = None  # plain_mc budget; default particles*iterations
    chains: int | None = None  # default 10 for mmc_mcmc_multi, else 1
    burn_in: float = 0.0
    bins: int | None = None  # default depends on the model
    range: tuple | None = None  # (lower, upper); default depends on the model
    seed: int = 0
    ess_min: float = 0.5
    temper_trigger: float = math.log(10.0)
    temper_max_steps: int = 10
    kernel_steps: int | None = None  # default depends on the model
    step_scale: tuple | float | None = None  # default depends on the model
    estimate_window: int | None = None  # default depends on the model
    min_bin_evidence: int = 16
    flatness_stop: float | None = None
    tail_thresholds: tuple = ()
    loss_fractions: tuple | None = None  # copula default (0.1, 0.2, 0.25, 0.3)
    out: str | None = None


_MANIFEST_DEFAULTS = {
    "model_params": {},
    "sampler": "msmcs",
    "iterations": 20,
    "particles": None,
    "samples": None,
    "chains": None,
    "burn_in": 0.0,
    "bins": None,
    "range": None,
    "seed": 0,
    "ess_min": 0.5,
    "temper_trigger": math.log(10.0),
    "temper_max_steps": 10,
    "kernel_steps": None,
    "step_scale": None,
    "estimate_window": None,
    "min_bin_evidence": 16,
    "flatness_stop": None,
    "tail_thresholds": (),
    "loss_fractions": None,
    "out": None,
}


def _fail(key: str, value, why: str) -> ValueError:
    return ValueError(f"manifest key {key!r}: {why} (got {value!r})")


def parse_manifest(text: str) -> RunManifest:
    """Validate a JSON manifest and resolve all defaults.

    Raises
    ------
    ValueError
        Naming the offending key/value: unknown keys, unknown model or
        sampler, non-positive sizes, malformed ranges.
    """
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ValueError(f"manifest is not valid JSON: {err}") from None
    if not isinstance(raw, dict):
        raise ValueError("manifest must be a JSON object")

    known = set(_MANIFEST_DEFAULTS) | {"model"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValueError(f"unknown manifest key(s): {', '.join(map(repr, unknown))}")
    if "model" not in raw:
        raise ValueError("manifest key 'model' is required")

    model = raw["model"]
    if model not in MODEL_NAMES:
        raise _fail("model", model, f"must be one of {sorted(MODEL_NAMES)}")
    merged = {**_MANIFEST_DEFAULTS, **raw}

    params = merged["model_params"]
    if not isinstance(params, dict):
        raise _fail("model_params", params, "must be an object")
    try:
        benchmark_model(model, params)
    except TypeError as err:
        raise ValueError(f"manifest key 'model_params': {err}") from None

    sampler = merged["sampler"]
    if sampler not in SAMPLER_KINDS:
        raise _fail("sampler", sampler, f"must be one of {list(SAMPLER_KINDS)}")

    def positive_int(key, minimum=1, optional=False):
        value = merged[key]
        if value is None and optional:
            return None
        if not isinstance(value, int) or isinstance(value, bool) or value < minimum:
            raise _fail(key, value, f"must be an integer >= {minimum}")
        return value

    iterations = positive_int("iterations")
    particles = positive_int("particles", minimum=2, optional=True)
    samples = positive_int("samples", optional=True)
    chains = positive_int("chains", optional=True)
    bins = positive_int("bins", optional=True)
    temper_max_steps = positive_int("temper_max_steps")
    kernel_steps = positive_int("kernel_steps", optional=True)
    estimate_window = positive_int("estimate_window", optional=True)
    min_bin_evidence = positive_int("min_bin_evidence")

    def finite_float(key, value):
        try:
            out = float(value)
        except (TypeError, ValueError):
            raise _fail(key, value, "must be a number") from None
        if not math.isfinite(out):
            raise _fail(key, value, "must be finite")
        return out

    burn_in = finite_float("burn_in", merged["burn_in"])
    if not 0.0 <= burn_in < 1.0:
        raise _fail("burn_in", burn_in, "must lie in [0, 1)")
    ess_min = finite_float("ess_min", merged["ess_min"])
    if not 0.0 <= ess_min <= 1.0:
        raise _fail("ess_min", ess_min, "must lie in [0, 1]")
    temper_trigger = finite_float("temper_trigger", merged["temper_trigger"])
    if temper_trigger <= 0:
        raise _fail("temper_trigger", temper_trigger, "must be positive")

    grid_range = merged["range"]
    if grid_range is not None:
        if not isinstance(grid_range, (list, tuple)) or len(grid_range) != 2:
            raise _fail("range", grid_range, "must be a [lower, upper] pair")
        lo = finite_float("range", grid_range[0])
        hi = finite_float("range", grid_range[1])
        if hi <= lo:
            raise _fail("range", grid_range, "upper bound must exceed lower bound")
        grid_range = (lo, hi)

    seed = merged["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise _fail("seed", seed, "must be an integer")

    step_scale = merged["step_scale"]
    if step_scale is not None:
        if isinstance(step_scale, (list, tuple)):
            step_scale = tuple(finite_float("step_scale", v) for v in step_scale)
            if not step_scale or any(v <= 0 for v in step_scale):
                raise _fail("step_scale", merged["step_scale"], "entries must be positive")
        else:
            step_scale = finite_float("step_scale", step_scale)
            if step_scale <= 0:
                raise _fail("step_scale", step_scale, "must be positive")

    flatness_stop = merged["flatness_stop"]
    if flatness_stop is not None:
        flatness_stop = finite_float("flatness_stop", flatness_stop)
        if flatness_stop < 1.0:
            raise _fail("flatness_stop", flatness_stop, "is a max/min ratio and must be >= 1")

    def float_list(key):
        value = merged[key]
        if value is None:
            return None
        if not isinstance(value, (list, tuple)):
            raise _fail(key, value, "must be a list of numbers")
        return tuple(finite_float(key, v) for v in value)

    tail_thresholds = float_list("tail_thresholds") or ()
    loss_fractions = float_list("loss_fractions")
    if loss_fractions is not None and model != "copula":
        raise _fail("loss_fractions", merged["loss_fractions"], "only applies to the copula model")

    out = merged["out"]
    if out is not None and not isinstance(out, str):
        raise _fail("out", out, "must be a path string")

    # model-dependent defaults
    defaults = default_settings(model, params)
    default_grid = defaults["grid"]
    if particles is None:
        particles = defaults["particles"]
    if bins is None and grid_range is None:
        bins, grid_range = default_grid.count, (default_grid.lower, default_grid.upper)
    elif bins is None:
        bins = default_grid.count
    elif grid_range is None:
        grid_range = (default_grid.lower, default_grid.upper)
    if chains is None:
        chains = 10 if sampler == "mmc_mcmc_multi" else 1
    if sampler == "plain_mc" and samples is None:
        samples = particles * iterations
    if kernel_steps is None:
        kernel_steps = defaults["kernel_steps"]
    if estimate_window is None:
        estimate_window = defaults["estimate_window"]
    if step_scale is None and defaults["step_scale"] is not None:
        resolved = np.atleast_1d(np.asarray(defaults["step_scale"], dtype=float))
        step_scale = float(resolved[0]) if resolved.size == 1 else tuple(map(float, resolved))
    if model == "copula" and loss_fractions is None:
        loss_fractions = _DEFAULT_LOSS_FRACTIONS

    return RunManifest(
        model=model,
        model_params=tuple(sorted(params.items())),
        sampler=sampler,
        iterations=iterations,
        particles=particles,
        samples=samples,
        chains=chains,
        burn_in=burn_in,
        bins=bins,
        range=grid_range,
        seed=seed,
        ess_min=ess_min,
        temper_trigger=temper_trigger,
        temper_max_steps=temper_max_steps,
        kernel_steps=kernel_steps,
        step_scale=step_scale,
        estimate_window=estimate_window,
        min_bin_evidence=min_bin_evidence,
        flatness_stop=flatness_stop,
        tail_thresholds=tail_thresholds,
        loss_fractions=loss_fractions,
        out=out,
    )


def manifest_to_json(manifest: RunManifest) -> str:
    """Serialise a resolved manifest; parses back to an equal manifest."""
    data = asdict(manifest)
    data["model_params"] = dict(manifest.model_params)
    data["range"] = list(manifest.range) if manifest.range is not None else None
    data["tail_thresholds"] = list(manifest.tail_thresholds)
    data["loss_fractions"] = (
        list(manifest.loss_fractions) if manifest.loss_fractions is not None else None
    )
    if isinstance(manifest.step_scale, tuple):
        data["step_scale"] = list(manifest.step_scale)
    return json.dumps(data, indent=2, sort_keys=True)


@dataclass(frozen=True, eq=False)
class ResultBundle:
    """A completed run: estimate, tail queries, and the manifest echo."""

    manifest: RunManifest
    estimate: PdfEstimate
    tail_probabilities: dict
    loss_tail_probabilities: dict


def _run_config(manifest: RunManifest) -> RunConfig:
    lo, hi = manifest.range
    proposal = None
    if manifest.step_scale is not None:
        proposal = ProposalConfig(np.atleast_1d(np.asarray(manifest.step_scale, dtype=float)))
    return RunConfig(
        grid=BinGrid(lo, hi, manifest.bins),
        iterations=manifest.iterations,
        particles=manifest.particles,
        sampler=manifest.sampler,
        chains=manifest.chains,
        samples=manifest.samples,
        burn_in=manifest.burn_in,
        seed=manifest.seed,
        proposal=proposal,
        smcs=SmcsConfig(
            ess_min_fraction=manifest.ess_min,
            temper_trigger=manifest.temper_trigger,
            temper_max_steps=manifest.temper_max_steps,
            kernel_steps=manifest.kernel_steps,
        ),
        flatness_stop=manifest.flatness_stop,
        min_bin_evidence=manifest.min_bin_evidence,
        estimate_window=manifest.estimate_window,
    )


def run_command(manifest: RunManifest) -> ResultBundle:
    """Execute the run a manifest describes."""
    model = benchmark_model(manifest.model, dict(manifest.model_params))
    estimate = run_mmc(model, _run_config(manifest))
    tails = {
        _num_key(t): tail_probability(estimate, t) for t in manifest.tail_thresholds
    }
    loss_tails = {}
    if manifest.model == "copula" and manifest.loss_fractions:
        obligors = dict(manifest.model_params).get("obligors", 250)
        loss_tails = {
            _num_key(b): copula_tail_probability(estimate, b * obligors)
            for b in manifest.loss_fractions
        }
    return ResultBundle(
        manifest=manifest,
        estimate=estimate,
        tail_probabilities=tails,
        loss_tail_probabilities=loss_tails,
    )


def _num_key(value: float) -> str:
    return repr(float(value))


def histogram_rows(estimate: PdfEstimate) -> list[str]:
    centers = estimate.grid.centers
    density = estimate.density
    log10 = estimate.log10_density
    rows = [HISTOGRAM_HEADER]
    for i in range(estimate.grid.count):
        rows.append(
            f"{float(centers[i])!r},{float(estimate.bin_prob[i])!r},"
            f"{float(density[i])!r},{float(log10[i])!r}"
        )
    return rows


def write_bundle(bundle: ResultBundle, out_dir: str | Path) -> dict[str, Path]:
    """Write histogram.csv, diagnostics.json, and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "histogram": out / "histogram.csv",
        "diagnostics": out / "diagnostics.json",
        "manifest": out / "manifest.json",
    }
    paths["histogram"].write_text("\n".join(histogram_rows(bundle.estimate)) + "\n")
    diagnostics = dict(bundle.estimate.diagnostics)
    diagnostics["raw_hits"] = [int(h) for h in bundle.estimate.raw_hits]
    if "final_log_theta" in diagnostics:
        diagnostics["final_log_theta"] = [float(v) for v in diagnostics["final_log_theta"]]
    if bundle.tail_probabilities:
        diagnostics["tail_probabilities"] = bundle.tail_probabilities
    if bundle.loss_tail_probabilities:
        diagnostics["loss_tail_probabilities"] = bundle.loss_tail_probabilities
    paths["diagnostics"].write_text(json.dumps(diagnostics, indent=2, sort_keys=True) + "\n")
    paths["manifest"].write_text(manifest_to_json(bundle.manifest) + "\n")
    return paths


def load_estimate(path: str | Path) -> PdfEstimate:
    """Rebuild a :class:`PdfEstimate` from a saved histogram.

    ``path`` may be the histogram CSV itself or a bundle directory.
    Only the grid and bin probabilities are recovered (no diagnostics).
    """
    path = Path(path)
    if path.is_dir():
        path = path / "histogram.csv"
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0] != HISTOGRAM_HEADER:
        raise ValueError(f"{path} is not a histogram file (bad header)")
    body = [line.split(",") for line in lines[1:]]
    if not body:
        raise ValueError(f"{path} contains no histogram rows")
    centers = np.array([float(r[0]) for r in body])
    prob = np.array([float(r[1]) for r in body])
    if centers.size == 1:
        raise ValueError("cannot infer a bin width from a single row")
    width = centers[1] - centers[0]
    lower = centers[0] - width / 2
    grid = BinGrid(lower, lower + width * centers.size, centers.size)
    return PdfEstimate(
        grid=grid,
        bin_prob=prob,
        raw_hits=np.zeros(centers.size, dtype=np.int64),
        diagnostics={"loaded_from": str(path)},
    )


def compare_command(
    estimate: PdfEstimate, reference: str, dof: int = 20
) -> tuple[list[str], dict]:
    """Per-bin error report against a reference density.

    ``reference`` is either the literal ``"analytic_chi_square"`` or a
    path to a saved histogram on the identical grid.  Errors are
    computed on densities; the relative error is left blank where the
    reference density is zero.

    Returns the CSV rows of the report and a summary dict of error
    quantiles.
    """
    centers = estimate.grid.centers
    if reference == "analytic_chi_square":
        ref_density = np.asarray(chi_square_density(centers, dof=dof))
    else:
        other = load_estimate(reference)
        if other.grid != estimate.grid:
            raise ValueError(
                f"grid mismatch: result has {estimate.grid}, reference has {other.grid}"
            )
        ref_density = other.density
    est_density = estimate.density
    abs_err = np.abs(est_density - ref_density)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel_err = np.where(ref_density > 0, abs_err / ref_density, np.nan)

    rows = ["bin_center,estimate_density,reference_density,abs_error,rel_error"]
    for i in range(centers.size):
        rel = "" if not np.isfinite(rel_err[i]) else repr(float(rel_err[i]))
        rows.append(
            f"{float(centers[i])!r},{float(est_density[i])!r},"
            f"{float(ref_density[i])!r},{float(abs_err[i])!r},{rel}"
        )
    defined = rel_err[np.isfinite(rel_err)]
    summary = {
        "abs_error": _quantile_summary(abs_err),
        "rel_error": _quantile_summary(defined) if defined.size else None,
        "bins": int(centers.size),
        "bins_with_reference": int(np.count_nonzero(np.isfinite(rel_err))),
    }
    return rows, summary


def _quantile_summary(err: np.ndarray) -> dict:
    return {
        "median": float(np.median(err)),
        "p90": float(np.quantile(err, 0.9)),
        "max": float(np.max(err)),
    }


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcpdf",
        description="Reconstruct the probability density of a scalar performance measure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a reconstruction run")
    run.add_argument("--manifest", help="path to a JSON manifest")
    run.add_argument("--model", choices=MODEL_NAMES)
    run.add_argument("--sampler", choices=SAMPLER_KINDS)
    run.add_argument("--iterations", type=int)
    run.add_argument("--particles", type=int)
    run.add_argument("--samples", type=int, help="plain_mc sample budget")
    run.add_argument("--bins", type=int)
    run.add_argument("--range", help="grid bounds as 'lower,upper'")
    run.add_argument("--seed", type=int)
    run.add_argument("--chains", type=int)
    run.add_argument("--burn-in", type=float, dest="burn_in")
    run.add_argument("--ess-min", type=float, dest="ess_min")
    run.add_argument("--temper-trigger", type=float, dest="temper_trigger")
    run.add_argument("--out", help="output directory")

    compare = sub.add_parser("compare", help="error report against a reference")
    compare.add_argument("--result", required=True, help="bundle directory or histogram.csv")
    compare.add_argument(
        "--reference",
        required=True,
        help="'analytic_chi_square' or a path to a reference histogram.csv",
    )
    compare.add_argument("--dof", type=int, default=20, help="chi-square degrees of freedom")
    compare.add_argument("--out", help="where to write the error CSV (default: alongside result)")

    tail = sub.add_parser("tail", help="tail probabilities from a saved histogram")
    tail.add_argument("--result", required=True, help="bundle directory or histogram.csv")
    tail.add_argument(
        "--threshold",
        type=float,
        action="append",
        default=[],
        help="P(y > threshold); repeatable",
    )
    tail.add_argument(
        "--loss-level",
        type=float,
        action="append",
        default=[],
        dest="loss_level",
        help="strict integer-loss exceedance P(L > level); repeatable",
    )
    return parser


def _manifest_from_args(args: argparse.Namespace) -> RunManifest:
    if args.manifest:
        raw = json.loads(Path(args.manifest).read_text())
        if not isinstance(raw, dict):
            raise ValueError("manifest must be a JSON object")
    else:
        raw = {}
    overrides = {
        "model": args.model,
        "sampler": args.sampler,
        "iterations": args.iterations,
        "particles": args.particles,
        "samples": args.samples,
        "bins": args.bins,
        "seed": args.seed,
        "chains": args.chains,
        "burn_in": args.burn_in,
        "ess_min": args.ess_min,
        "temper_trigger": args.temper_trigger,
        "out": args.out,
    }
    if args.range is not None:
        pieces = args.range.split(",")
        if len(pieces) != 2:
            raise ValueError("--range expects 'lower,upper'")
        raw["range"] = [float(pieces[0]), float(pieces[1])]
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return parse_manifest(json.dumps(raw))


def _default_out(manifest: RunManifest) -> str:
    return f"results_{manifest.model}_{manifest.sampler}_seed{manifest.seed}"


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            manifest = _manifest_from_args(args)
            bundle = run_command(manifest)
            out_dir = manifest.out or _default_out(manifest)
            paths = write_bundle(bundle, out_dir)
            print(f"histogram: {paths['histogram']}")
            print(f"diagnostics: {paths['diagnostics']}")
            print(f"manifest: {paths['manifest']}")
            for key, value in bundle.tail_probabilities.items():
                print(f"P(y > {key}) = {value:.6e}")
            for key, value in bundle.loss_tail_probabilities.items():
                print(f"P(L > {key}*n) = {value:.6e}")
        elif args.command == "compare":
            estimate = load_estimate(args.result)
            rows, summary = compare_command(estimate, args.reference, dof=args.dof)
            result_path = Path(args.result)
            base = result_path if result_path.is_dir() else result_path.parent
            out_path = Path(args.out) if args.out else base / "errors.csv"
            out_path.write_text("\n".join(rows) + "\n")
            print(f"errors: {out_path}")
            print(json.dumps(summary, indent=2, sort_keys=True))
        else:
            estimate = load_estimate(args.result)
            if not args.threshold and not args.loss_level:
                raise ValueError("provide at least one --threshold or --loss-level")
            for t in args.threshold:
                print(f"P(y > {t!r}) = {tail_probability(estimate, t):.6e}")
            for level in args.loss_level:
                print(f"P(L > {level!r}) = {copula_tail_probability(estimate, level):.6e}")
    except Exception as err:  # surface a clean diagnostic, nonzero exit
        print(f"error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
