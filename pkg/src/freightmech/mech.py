"""Per-lane, per-period carrier mechanisms: posted price, uniform-price auction, hybrid."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Union

import numpy as np

from .net import CostDistribution


class Mechanism(str, enum.Enum):
    SP = "SP"
    AUC = "AUC"
    AUC_P = "AUC-P"
    HYB = "HYB"

    @property
    def uses_auction_reserve(self) -> bool:
        return self in (Mechanism.AUC, Mechanism.HYB)


class ConfigurationError(ValueError):
    pass


_EMPTY = np.zeros(0, dtype=int)


@dataclass(frozen=True)
class LaneAuctionInput:
    bids: np.ndarray
    demand: int
    reserve: float
    posted_price: float

    def __post_init__(self):
        bids = np.asarray(self.bids, dtype=float).reshape(-1)
        object.__setattr__(self, "bids", bids)
        if bids.size and not (np.isfinite(bids).all() and bids.min() >= 0):
            raise ValueError("bids must be finite and non-negative")
        if int(self.demand) != self.demand or self.demand < 0:
            raise ValueError("demand must be a non-negative integer")
        object.__setattr__(self, "demand", int(self.demand))


@dataclass(frozen=True)
class LaneOutcome:
    winners: np.ndarray
    payment_per_winner: float
    instant_bookings: np.ndarray

    @property
    def Y(self) -> int:
        return int(self.winners.size)

    @property
    def total_payment(self) -> float:
        return self.payment_per_winner * self.winners.size

    def payment_to(self, s: int) -> float:
        return self.payment_per_winner if (self.winners == s).any() else 0.0


def sp_allocate(inp: LaneAuctionInput, arrival_order) -> LaneOutcome:
    """Carriers scan the posted price in arrival order; each willing one takes a load while any remain."""
    order = np.asarray(arrival_order, dtype=int)
    willing = order[inp.bids[order] <= inp.posted_price]
    winners = willing[: inp.demand]
    return LaneOutcome(winners, float(inp.posted_price) if winners.size else 0.0, winners)


def auc_allocate(inp: LaneAuctionInput, priority=None) -> LaneOutcome:
    """Uniform-price auction with reserve ``inp.reserve``.

    The lowest bids at or under the reserve win, up to the demand; each winner
    is paid ``min(C[D+1], reserve)`` where ``C[D+1]`` is the (D+1)-th lowest
    bid (infinite when there are at most D bids). ``priority`` ranks equal
    bids, lower rank first.
    """
    bids = inp.bids
    n = bids.size
    D = inp.demand
    if n == 0 or D == 0:
        return LaneOutcome(_EMPTY, 0.0, _EMPTY)
    k = min(D, int(np.count_nonzero(bids <= inp.reserve)))
    if k == 0:
        return LaneOutcome(_EMPTY, 0.0, _EMPTY)
    # Only the D+1 lowest bids matter; keep everything tied with the cut.
    cand = np.flatnonzero(bids <= np.partition(bids, D)[D]) if D < n else np.arange(n)
    order = cand[np.argsort(bids[cand], kind="stable")]
    if priority is not None:
        sb = bids[order]
        if (sb[1:] == sb[:-1]).any():
            order = cand[np.lexsort((np.asarray(priority)[cand], bids[cand]))]
    marginal = bids[order[D]] if D < n else np.inf
    return LaneOutcome(order[:k], float(min(marginal, inp.reserve)), _EMPTY)


def hyb_allocate(inp: LaneAuctionInput, arrival_order, priority=None) -> LaneOutcome:
    """Posted price when under-price supply exceeds demand, else the auction at ``inp.reserve``."""
    if inp.reserve < inp.posted_price:
        raise ConfigurationError("hybrid reserve must be at least the posted price")
    x_sp = int(np.count_nonzero(inp.bids <= inp.posted_price))
    if x_sp > inp.demand:
        return sp_allocate(inp, arrival_order)
    out = auc_allocate(inp, priority)
    instant = out.winners[inp.bids[out.winners] <= inp.posted_price]
    return LaneOutcome(out.winners, out.payment_per_winner, instant)


def allocate(
    mechanism: Mechanism,
    bids: np.ndarray,
    demand: int,
    posted_price: float,
    reserve: float,
    rng: np.random.Generator,
) -> LaneOutcome:
    """Run ``mechanism`` on one lane; ``reserve`` is the AUC reserve xi*.

    AUC-P uses the posted price as its reserve. Arrival orders (permutations)
    and tie-breaking keys (uniform draws) come from ``rng``.
    """
    n = len(bids)
    if mechanism is Mechanism.SP:
        return sp_allocate(LaneAuctionInput(bids, demand, posted_price, posted_price), rng.permutation(n))
    if mechanism is Mechanism.AUC:
        return auc_allocate(LaneAuctionInput(bids, demand, reserve, posted_price), rng.random(n))
    if mechanism is Mechanism.AUC_P:
        return auc_allocate(LaneAuctionInput(bids, demand, posted_price, posted_price), rng.random(n))
    order = rng.permutation(n)
    return hyb_allocate(LaneAuctionInput(bids, demand, reserve, posted_price), order, rng.random(n))


def acceptance_threshold(mechanism: Mechanism, posted_price: float, reserve: float) -> float:
    return reserve if mechanism.uses_auction_reserve else posted_price


# -- incentive-compatibility verifier ---------------------------------------

LaneRule = Callable[[LaneAuctionInput, np.ndarray, np.ndarray], Any]


def _rule_for(mechanism: Union[Mechanism, str, LaneRule]) -> LaneRule:
    if callable(mechanism) and not isinstance(mechanism, (str, Mechanism)):
        return mechanism
    mech = Mechanism(mechanism)
    if mech is Mechanism.SP:
        return lambda inp, order, prio: sp_allocate(inp, order)
    if mech is Mechanism.AUC:
        return lambda inp, order, prio: auc_allocate(inp, prio)
    if mech is Mechanism.AUC_P:
        return lambda inp, order, prio: auc_allocate(
            LaneAuctionInput(inp.bids, inp.demand, inp.posted_price, inp.posted_price), prio
        )
    return lambda inp, order, prio: hyb_allocate(inp, order, prio)


@dataclass(frozen=True)
class ICReport:
    mechanism: str
    trials: int
    max_regret: float
    ir_violations: int
    worst: dict[str, Any] | None = None


def verify_ic(
    mechanism: Union[Mechanism, str, LaneRule],
    trials: int,
    rng: np.random.Generator,
    deviations: int = 50,
) -> ICReport:
    """Search for profitable misreports by a single focal carrier.

    Each trial draws a lane (at most 8 bids, random demand and prices), fixes
    the arrival order and tie priorities, and compares the focal carrier's
    truthful payoff with its payoff under ``deviations`` random bids plus the
    other bids and both prices. Returns the largest payoff gain found.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    rule = _rule_for(mechanism)
    name = getattr(mechanism, "value", None) or getattr(mechanism, "__name__", str(mechanism))
    max_regret = 0.0
    ir_violations = 0
    worst = None
    for _ in range(trials):
        n = int(rng.integers(1, 9))
        bids = rng.uniform(0.0, 1.0, n)
        if rng.random() < 0.3:
            bids = np.round(bids, 1)  # exercise ties
        D = int(rng.integers(0, n + 2))
        p = float(rng.uniform(0.05, 0.95))
        xi = p if rng.random() < 0.2 else p + float(rng.uniform(0.0, 0.5))
        s = int(rng.integers(n))
        order = rng.permutation(n)
        prio = rng.permutation(n)
        true_cost = bids[s]

        def payoff(bid: float) -> float:
            b = bids.copy()
            b[s] = bid
            out = rule(LaneAuctionInput(b, D, xi, p), order, prio)
            won = bool((np.asarray(out.winners) == s).any())
            return out.payment_to(s) - true_cost * won

        u_true = payoff(true_cost)
        if u_true < -1e-12:
            ir_violations += 1
        candidates = np.concatenate([
            rng.uniform(0.0, 1.5, deviations),
            bids, [p, xi, 0.0],
        ])
        for c in candidates:
            gain = payoff(float(c)) - u_true
            if gain > max_regret:
                max_regret = gain
                worst = dict(bids=bids.tolist(), demand=D, posted_price=p, reserve=xi,
                             focal=s, deviation=float(c), gain=gain)
    return ICReport(str(name), trials, float(max_regret), ir_violations, worst)


# -- revenue equivalence ------------------------------------------------------

def virtual_cost_identity(
    dist: CostDistribution,
    n_bidders: int,
    demand: int,
    reserve: float,
    n_samples: int,
    rng: np.random.Generator,
    batch: int = 200_000,
) -> dict[str, float]:
    """Monte Carlo of total auction payment against total winners' virtual cost.

    Both sides are averaged over ``n_samples`` i.i.d. single-lane instances
    with ``n_bidders`` truthful bids; ``se`` is the standard error of the
    paired difference.
    """
    pay_sum = virt_sum = 0.0
    diff_sum = diff_sq = 0.0
    done = 0
    while done < n_samples:
        m = min(batch, n_samples - done)
        C = np.sort(dist.sample(rng, (m, n_bidders)), axis=1)
        Y = np.minimum(np.count_nonzero(C <= reserve, axis=1), demand)
        marginal = C[:, demand] if demand < n_bidders else np.full(m, np.inf)
        pay = Y * np.minimum(marginal, reserve)
        won = np.arange(n_bidders)[None, :] < Y[:, None]
        virt = np.where(won, dist.virtual_cost(C), 0.0).sum(axis=1)
        diff = pay - virt
        pay_sum += pay.sum()
        virt_sum += virt.sum()
        diff_sum += diff.sum()
        diff_sq += (diff ** 2).sum()
        done += m
    mean_diff = diff_sum / done
    var = max(diff_sq / done - mean_diff ** 2, 0.0) * done / max(done - 1, 1)
    return {
        "mean_payment": pay_sum / done,
        "mean_virtual_cost": virt_sum / done,
        "mean_difference": mean_diff,
        "se": float(np.sqrt(var / done)),
        "n_samples": done,
    }
