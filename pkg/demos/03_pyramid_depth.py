"""relu(1 - |x|_1) is two hidden layers away from exact, and GD keeps the
exact net; with one hidden layer better fits cost ever larger stability norm.
"""
from relu_stability.pyramid import (depth_separation_trend, pyramid_dataset, pyramid_stability_demo,
                                    two_layer_eta_star)

for factor in (1.0, 2.5):
    reps = [pyramid_stability_demo(2, 64, 1e-3, seed, eta_factor=factor) for seed in range(5)]
    ok = sum(r.converged for r in reps)
    print(f"eta = {factor} / lambda_max: {ok}/5 recover from a 1e-3 kick, "
          f"probe RMSE {max(r.probe_rmse for r in reps):.2e}")

eta_star = two_layer_eta_star(2, pyramid_dataset(2, 15, 0))
print(f"\ntwo-layer net is stable up to eta* = {eta_star:.3f}; "
      f"one-layer fits at that step need S <= {1 / eta_star - 0.5:.3f}")
print("  k   rmse     S")
for row in depth_separation_trend(widths=(4, 8, 16, 32), restarts=3, max_steps=20_000):
    print(f"{row.k:3d}  {row.fit_rmse:.4f}  {row.s_theta:.3f}")
