"""Independent reference computations used as test oracles."""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq, linprog
from scipy.stats import poisson


# -- auction: explicit assignment value and marginal exclusion ---------------

def _pool(bids, demand, reserve, priority):
    # Real bids rank ahead of the D dummy entries at the reserve when equal.
    real = [(float(b), 0, int(priority[i]), i) for i, b in enumerate(bids)]
    dummies = [(float(reserve), 1, 0, -1 - j) for j in range(demand)]
    return sorted(real + dummies)


def assignment_value(bids, demand, reserve) -> float:
    """min sum of accepted bids plus reserve per load sent to the outside option."""
    pool = sorted([float(b) for b in bids] + [float(reserve)] * demand)
    return float(sum(pool[:demand]))


def assignment_value_lp(bids, demand, reserve) -> float:
    """The same minimum from the LP relaxation (integral here)."""
    n = len(bids)
    c = np.append(np.asarray(bids, float), reserve)
    A_eq = np.ones((1, n + 1))
    bounds = [(0, 1)] * n + [(0, None)]
    res = linprog(c, A_eq=A_eq, b_eq=[demand], bounds=bounds, method="highs")
    return float(res.fun)


def marginal_exclusion(bids, demand, reserve, priority):
    """Winners and per-winner payments ``C^s + J(C^-s) - J(C)``."""
    pool = _pool(bids, demand, reserve, priority)
    winners = sorted(e[3] for e in pool[:demand] if e[1] == 0)
    J = assignment_value(bids, demand, reserve)
    pays = {}
    for s in winners:
        others = [b for i, b in enumerate(bids) if i != s]
        pays[s] = float(bids[s]) + assignment_value(others, demand, reserve) - J
    return winners, pays


# -- fluid: one lane by calculus ----------------------------------------------

def single_lane_flow(lam, d, lower, width, b, q=0.0):
    """Optimal fluid flow on one lane with U[lower, lower+width] costs.

    Cost ``lower*y + width*y^2/(lam + q*y) + b*(d - y)`` is convex in y on
    ``0 <= y <= min(d, lam/(1-q))``; its derivative is monotone, so the
    minimizer is a clipped root.
    """
    hi = min(d, lam / (1.0 - q))
    if q == 0.0:
        return float(np.clip((b - lower) * lam / (2.0 * width), 0.0, hi))

    def grad(y):
        v = lam + q * y
        return lower + width * y * (2 * lam + q * y) / v**2 - b

    if grad(0.0) >= 0:
        return 0.0
    if grad(hi) <= 0:
        return hi
    return brentq(grad, 0.0, hi, xtol=1e-14, rtol=1e-15)


# -- the scaling instance: exact expected gap ---------------------------------

def exact_gap(theta: float) -> float:
    """Expected per-period AUC saving over SP with reserve and price 1/2.

    X (bids under 1/2) and D are iid Poisson(theta/2); when X > D the
    (D+1)-th lowest of X uniforms on [0, 1/2] has mean (D+1)/(2(X+1)).
    """
    k = np.arange(int(2 * theta + 20 * np.sqrt(theta) + 50))
    pk = poisson.pmf(k, theta / 2.0)
    X, D = k[:, None], k[None, :]
    term = np.where(X > D, D * (X - D) / (X + 1.0), 0.0)
    return float(0.5 * pk @ term @ pk)


def pay_your_bid(inp, order, prio):
    """Discriminatory auction without shading: winners are paid their own bid."""

    class Out:
        pass

    bids = inp.bids
    k = min(inp.demand, int(np.count_nonzero(bids <= inp.reserve)))
    o = np.lexsort((prio, bids))[:k]
    out = Out()
    out.winners = o
    out.payment_to = lambda s: float(bids[s]) if np.any(o == s) else 0.0
    return out
