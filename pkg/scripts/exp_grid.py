"""Estimate u for f = exp(x1 + z) on (0, 1) and compare with e^(x + t).

    python3 scripts/exp_grid.py [--n 200000] [--h 1e-4] [--seed 2024]
"""
import argparse
import math

from wickfk.data_function import DataFunction
from wickfk.domain import DomainSpec
from wickfk.estimator import EstimatorConfig, grid_evaluate
from wickfk.sde import SdeSpec, StepConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=200_000)
    ap.add_argument("--h", type=float, default=1e-4)
    ap.add_argument("--seed", type=int, default=2024)
    args = ap.parse_args()

    f = DataFunction.parse("exp(x1 + z)", 1)
    cfg = EstimatorConfig(args.n, seed=args.seed, step=StepConfig(args.h))
    ts = (0.0, 0.25, 0.5, 0.75, 1.0)
    xs = [0.1 * k for k in range(1, 10)]
    table = grid_evaluate(f, SdeSpec.brownian(1), DomainSpec.interval(0, 1), ts, xs, cfg,
                          common_random_numbers=True)
    print(f"{'t':>5} {'x':>5} {'u_mc':>10} {'exact':>10} {'err/se':>8}")
    for t, x, est in table.rows():
        exact = math.exp(x[0] + t)
        z = abs(est.mean.real - exact) / est.stderr_re if est.stderr_re else 0.0
        print(f"{t:5.2f} {x[0]:5.2f} {est.mean.real:10.5f} {exact:10.5f} {z:8.2f}")


if __name__ == "__main__":
    main()
