"""Mean exit time bias against h, with and without the Brownian-bridge correction.

Brownian motion from x = 0.5 on (0, 1), where E[tau] = 0.25.  The plain
scheme has O(sqrt h) bias and the corrected one O(h).

    python3 scripts/exit_bias_order.py [--n 1000000]
"""
import argparse
import math

from wickfk.domain import DomainSpec
from wickfk.exits import sample_exit_batch
from wickfk.sde import SdeSpec, StepConfig


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    bm, unit = SdeSpec.brownian(1), DomainSpec.interval(0, 1)
    print(f"{'h':>8} {'bias plain':>12} {'bias bridge':>12} {'se':>9}")
    prev = None
    for h in (0.08, 0.04, 0.02, 0.01):
        row = []
        for bridge in (False, True):
            b = sample_exit_batch(bm, unit, [0.5], StepConfig(h, bridge_correction=bridge),
                                  args.seed, args.n)
            row.append(b.tau.mean() - 0.25)
        se = b.tau.std(ddof=1) / math.sqrt(args.n)
        note = ""
        if prev is not None:
            note = f"  ratios {prev[0] / row[0]:.2f} {prev[1] / row[1]:.2f}"
        print(f"{h:8.3f} {row[0]:12.5f} {row[1]:12.5f} {se:9.1e}{note}")
        prev = row


if __name__ == "__main__":
    main()
