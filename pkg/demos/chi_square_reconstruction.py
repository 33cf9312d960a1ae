"""
Reconstructing a chi-square density over five decades
=====================================================

y = sum(x_i^2) for 20 standard-normal inputs is chi-square distributed
with 20 degrees of freedom, so every reconstructed bin mass can be
checked against the closed-form density.  This script runs the
flat-histogram iteration with the particle-ensemble engine at the
standard budget (20 iterations of 5000 samples), prints the per-bin
relative errors, and plots the reconstruction against the analytic
curve.

Run:  python3 demos/chi_square_reconstruction.py
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from mcpdf import (
    ProposalConfig,
    RunConfig,
    SmcsConfig,
    benchmark_model,
    chi_square_bin_mass,
    chi_square_density,
    default_settings,
    run_mmc,
)

model = benchmark_model("chi_square")
settings = default_settings("chi_square")
grid = settings["grid"]

config = RunConfig(
    grid=grid,
    iterations=20,
    particles=settings["particles"],
    sampler="msmcs",
    seed=0,
    proposal=ProposalConfig(settings["step_scale"]),
    smcs=SmcsConfig(kernel_steps=settings["kernel_steps"]),
    estimate_window=settings["estimate_window"],
)
estimate = run_mmc(model, config)

analytic_mass = chi_square_bin_mass(grid, dof=20)
rel_err = np.abs(estimate.bin_prob - analytic_mass) / analytic_mass

print(f"grid: [{grid.lower}, {grid.upper}] in {grid.count} bins of width {grid.width}")
print(f"bin masses sum to {estimate.bin_prob.sum():.12f}")
print(f"relative error: median {np.median(rel_err):.3f}, max {rel_err.max():.3f}")
print()
print("  center   estimate    analytic    rel err")
for center, est, ref, err in zip(grid.centers, estimate.bin_prob, analytic_mass, rel_err):
    print(f"  {center:6.1f}   {est:.3e}  {ref:.3e}  {err:8.3f}")

# The per-iteration flatness ratio shows the histogram flattening out:
# iteration 1 samples the prior (ratio in the hundreds), the last
# iterations sample nearly uniformly across bins.
flatness = [it["flatness"] for it in estimate.diagnostics["iterations"]]
print()
print(f"flatness by iteration: {flatness[0]:.0f} -> {flatness[-1]:.2f}")

fig, (top, bottom) = plt.subplots(2, 1, figsize=(7, 7), sharex=True)
top.semilogy(grid.centers, estimate.density, drawstyle="steps-mid", label="reconstruction")
top.semilogy(grid.centers, chi_square_density(grid.centers, 20), "k--", label="closed form")
top.set_ylabel("density")
top.legend()
bottom.bar(grid.centers, rel_err, width=0.8 * grid.width)
bottom.set_xlabel("y")
bottom.set_ylabel("relative error")
fig.tight_layout()
fig.savefig("chi_square_reconstruction.png", dpi=120)
print("wrote chi_square_reconstruction.png")
