"""Profit gap between the auction and the posted price on the single-lane scaling instance.

Prints each theta's simulated gap next to its exact expectation and the fitted log-log slope.
Usage: python scripts/scaling_gap.py [--reps N] [--thetas 16 64 256 1024]
"""

import argparse

import numpy as np
from scipy.stats import poisson

from freightmech.metrics import scaling_gap


def exact_gap(theta: float) -> float:
    """0.5 E[D (X - D) / (X + 1); X > D] with X, D iid Poisson(theta / 2)."""
    k = np.arange(int(2 * theta + 20 * np.sqrt(theta) + 50))
    pk = poisson.pmf(k, theta / 2.0)
    X, D = k[:, None], k[None, :]
    return float(0.5 * pk @ np.where(X > D, D * (X - D) / (X + 1.0), 0.0) @ pk)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--reps", type=int, default=40)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--thetas", type=float, nargs="+", default=[16, 64, 256, 1024])
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    res = scaling_gap(args.thetas, 1000, 200, args.reps, args.seed,
                      parallel=args.parallel if args.parallel > 1 else False)
    print("theta,gap,se,exact")
    for p in res.points:
        print(f"{p.theta:g},{p.gap:.5f},{p.se:.5f},{exact_gap(p.theta):.5f}")
    th = np.log(args.thetas)
    exact_slope = np.polyfit(th, np.log([exact_gap(t) for t in args.thetas]), 1)[0]
    print(f"simulated slope {res.slope:.4f}, exact slope {exact_slope:.4f}")
