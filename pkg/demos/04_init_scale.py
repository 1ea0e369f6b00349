"""Sharpness against step size for a small and a large initialization.

A small init lands at roughly the same sharpness whatever the step, until the
step is so large that 2/eta caps it. A large init starts far sharper than
2/eta for every step here and does not settle at all.
"""
from relu_stability.experiments import InitScaleConfig, run_init_scale

# default data and widths, a coarser step grid and a single seed
cfg = InitScaleConfig(etas=(0.005, 0.02, 0.08, 0.2), seeds=(0,))
for table in run_init_scale(cfg).summary["tables"]:
    print(f"init scale {table['init_scale']:g}, crossover eta {table['crossover_eta']}")
    for eta, lam in zip(table["etas"], table["median_lambda_max"]):
        lam_s = "  (none converged)" if lam is None else f"{lam:8.3f}"
        print(f"  eta {eta:6.3f}  median lmax {lam_s}  2/eta {2 / eta:7.2f}")
