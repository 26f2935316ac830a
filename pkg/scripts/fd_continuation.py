"""March Monte Carlo data with the leapfrog wave solver and compare with Monte Carlo.

    python3 scripts/fd_continuation.py [--f "exp(x1 + z)"] [--t0 0.5] [--t1 1.0]
"""
import argparse

from wickfk.data_function import DataFunction
from wickfk.domain import DomainSpec
from wickfk.estimator import EstimatorConfig
from wickfk.reference import WaveFdConfig, fd_continuation_check
from wickfk.sde import SdeSpec, StepConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--f", default="exp(x1 + z)")
    ap.add_argument("--t0", type=float, default=0.5)
    ap.add_argument("--t1", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--nx", type=int, default=21)
    args = ap.parse_args()
    dx = 1.0 / (args.nx - 1)
    rep = fd_continuation_check(DataFunction.parse(args.f, 1), SdeSpec.brownian(1),
                                DomainSpec.interval(0, 1), args.t0, args.t1,
                                EstimatorConfig(args.n, seed=2024, step=StepConfig(1e-3)),
                                WaveFdConfig(args.nx, 0.5 * dx, args.t1 - args.t0, 1.0))
    print(rep.to_json())


if __name__ == "__main__":
    main()
