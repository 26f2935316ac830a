"""Naive, antithetic and Rao-Blackwell standard errors for a few data functions.

All three use n function evaluations.  Antithetic pairs reuse one exit
path for Z and -Z, so they sample only n/2 paths; when the exit noise
dominates this costs more than it saves.

    python3 scripts/variance_reduction.py [--n 50000]
"""
import argparse
import warnings

from wickfk.data_function import DataFunction
from wickfk.domain import DomainSpec
from wickfk.estimator import EstimatorConfig, IntegrabilityWarning, estimate_u
from wickfk.sde import SdeSpec, StepConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=50_000)
    ap.add_argument("--t", type=float, default=1.0)
    ap.add_argument("--x", type=float, default=0.5)
    args = ap.parse_args()
    bm, unit = SdeSpec.brownian(1), DomainSpec.interval(0, 1)
    step = StepConfig(1e-3)
    modes = {"naive": {}, "antithetic": {"antithetic": True},
             "rao-blackwell": {"rao_blackwell": "auto"}}
    warnings.simplefilter("ignore", IntegrabilityWarning)
    for text in ("exp(x1 + z)", "z^2", "z^3 * x1 + cos(2*z)"):
        f = DataFunction.parse(text, 1)
        print(text)
        for name, kw in modes.items():
            cfg = EstimatorConfig(args.n, seed=1, step=step, **kw)
            e = estimate_u(f, bm, unit, args.t, [args.x], cfg)
            print(f"  {name:14s} u={e.mean.real:+.5f}  se={e.stderr_re:.2e}")


if __name__ == "__main__":
    main()
