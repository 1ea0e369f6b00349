"""Train the same small network at several step sizes and compare sharpness
with the bounds computed from the trained weights.

Larger steps can only settle where the loss is flat enough (lambda_max <= 2/eta),
and the stability norm S must shrink accordingly: 1 + 2 S <= lambda_max.
"""
import numpy as np

from relu_stability.dataset import gen_gaussian_regression
from relu_stability.stability import stability_report
from relu_stability.training import Status, TrainConfig, init_shallow, train_gd

ds = gen_gaussian_regression(30, 5, seed=0)
print(f"{'eta':>7} {'status':>10} {'steps':>7} {'1+2S':>8} {'lmax':>8} {'flattest':>9} {'2/eta':>8} {'upper':>9}")
for eta in (0.005, 0.02, 0.08, 0.2, 0.3):
    res = train_gd(init_shallow(5, 20, 1.0, seed=0), ds, TrainConfig(eta=eta, max_steps=300_000))
    if res.status == Status.DIVERGED:
        print(f"{eta:7.4f} {'Diverged':>10}")
        continue
    rep = stability_report(res.params, ds, eta)
    print(f"{eta:7.4f} {res.status.value:>10} {res.steps:7d} {rep.lower_bound:8.3f} {rep.lambda_max:8.3f} "
          f"{rep.flattest_sharpness:9.3f} {rep.two_over_eta:8.2f} {rep.upper_bound:9.2f}")

# lambda_max depends on how weights are split between layers; the flattest
# rescaling removes that freedom but still cannot go below 1 + 2 S.
