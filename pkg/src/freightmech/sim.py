"""Discrete-time simulator of the two-sided freight marketplace.

Each period every lane runs the carrier mechanism on the available carriers'
realized costs, loaded carriers travel for the lane's travel time, and on
arrival a carrier either re-enters on one of the destination's outgoing lanes
(multinomial over the stay probabilities) or leaves. Fresh carriers arrive as
Poisson(lambda) and loads as Poisson(d*).

Randomness is split into named streams derived from the replication seed:
one arrival and one demand stream, one retention stream per node, and one
cost stream and one ordering stream per lane. Two mechanisms that agree on
carrier counts therefore consume identical draws, which is what couples
SP with AUC-P and AUC with HYB.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .fluid import FluidSolution
from .mech import Mechanism, allocate
from .net import Network

ARRIVALS, DEMAND, RETENTION, COSTS, ORDER, EXTRA_RETENTION, EXTRA_COSTS = range(7)

TRACE_FIELDS = ("S", "D", "X", "Y", "V", "Z", "P", "penalty", "instant")


def instance_id(network: Network) -> str:
    blob = json.dumps(network.to_dict(), sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


class Streams:
    """Named random substreams of one replication."""

    def __init__(self, seed: int, network: Network):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        mk = lambda *key: np.random.default_rng([seed, *key])
        self.arrivals = mk(ARRIVALS)
        self.demand = mk(DEMAND)
        self.retention = [mk(RETENTION, j) for j in range(network.n_nodes)]
        self.costs = [mk(COSTS, k) for k in range(network.n_lanes)]
        self.order = [mk(ORDER, k) for k in range(network.n_lanes)]
        # Only the coupled AUC-P/AUC run draws from these.
        self.extra_retention = [mk(EXTRA_RETENTION, j) for j in range(network.n_nodes)]
        self.extra_costs = [mk(EXTRA_COSTS, k) for k in range(network.n_lanes)]
        self.extra_order = [mk(ORDER, k, 1) for k in range(network.n_lanes)]


@dataclass
class MarketState:
    t: int
    costs: list[np.ndarray]
    demand: np.ndarray
    pipeline: list[np.ndarray]

    @property
    def S(self) -> np.ndarray:
        return np.array([c.size for c in self.costs], dtype=int)


@dataclass
class PeriodOutcome:
    S: np.ndarray
    D: np.ndarray
    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    Z: np.ndarray
    P: np.ndarray
    penalty: np.ndarray
    instant: np.ndarray


def _sample_costs(network: Network, counts: np.ndarray, rngs) -> list[np.ndarray]:
    return [lane.cost.sample(rngs[k], int(counts[k])) for k, lane in enumerate(network.lanes)]


def init_state(network: Network, fluid: FluidSolution, share: float, streams: Streams) -> MarketState:
    """Start with ``ceil(lam_bar* * share)`` carriers per lane and Poisson(d*) loads."""
    if not 0 < share <= 1:
        raise ValueError("share must lie in (0, 1]")
    S1 = np.ceil(np.asarray(fluid.lam_bar) * share - 1e-12).astype(int)
    return MarketState(
        t=1,
        costs=_sample_costs(network, S1, streams.costs),
        demand=streams.demand.poisson(fluid.demand),
        pipeline=[np.zeros(tau - 1, dtype=int) for tau in network.travel_time],
    )


def _advance_pipelines(network: Network, pipeline, Y):
    """Load the period's winners into transit; return (carriers finishing per node, new pipeline)."""
    finishing = np.zeros(network.n_nodes, dtype=int)
    new = []
    for k, pipe in enumerate(pipeline):
        dest = network.lanes[k].destination
        if pipe.size == 0:
            finishing[dest] += Y[k]
            new.append(pipe)
        else:
            finishing[dest] += pipe[0]
            nxt = np.empty_like(pipe)
            nxt[:-1] = pipe[1:]
            nxt[-1] = Y[k]
            new.append(nxt)
    return finishing, new


def _retain(network: Network, finishing: np.ndarray, rngs) -> np.ndarray:
    Z = np.zeros(network.n_lanes, dtype=int)
    q = network.stay_prob
    for j, lanes in enumerate(network.out_lanes):
        probs = np.append(q[lanes], 1.0 - q[lanes].sum())
        counts = rngs[j].multinomial(int(finishing[j]), probs)
        Z[lanes] = counts[:-1]
    return Z


def step(
    state: MarketState,
    network: Network,
    mechanism: Mechanism,
    prices: FluidSolution,
    streams: Streams,
) -> tuple[MarketState, PeriodOutcome]:
    mechanism = Mechanism(mechanism)
    L = network.n_lanes
    S = state.S
    D = state.demand
    X = np.zeros(L, dtype=int)
    Y = np.zeros(L, dtype=int)
    instant = np.zeros(L, dtype=int)
    P = np.zeros(L)
    p, xi = prices.p, prices.xi
    thr = xi if mechanism.uses_auction_reserve else p
    for k in range(L):
        bids = state.costs[k]
        out = allocate(mechanism, bids, int(D[k]), p[k], xi[k], streams.order[k])
        X[k] = np.count_nonzero(bids <= thr[k])
        Y[k] = out.winners.size
        P[k] = out.total_payment
        instant[k] = out.instant_bookings.size
    V = S - Y
    penalty = network.penalty * (D - Y)

    finishing, pipeline = _advance_pipelines(network, state.pipeline, Y)
    Z = _retain(network, finishing, streams.retention)
    S_next = Z + streams.arrivals.poisson(network.arrival_rate)
    nxt = MarketState(
        t=state.t + 1,
        costs=_sample_costs(network, S_next, streams.costs),
        demand=streams.demand.poisson(prices.demand),
        pipeline=pipeline,
    )
    return nxt, PeriodOutcome(S, D, X, Y, V, Z, P, penalty, instant)


@dataclass
class SimulationTrace:
    mechanism: str
    seed: int
    T: int
    T0: int
    instance: str
    lane_keys: tuple[str, ...]
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return self.T

    def period(self, t: int) -> PeriodOutcome:
        """Outcome of period ``t`` (1-based)."""
        return PeriodOutcome(**{f: self.columns[f][t - 1] for f in TRACE_FIELDS})

    @property
    def window(self) -> slice:
        return slice(self.T0, self.T)

    def lane_means(self) -> dict[str, np.ndarray]:
        w = self.window
        return {f: self.columns[f][w].mean(axis=0) for f in TRACE_FIELDS}

    def summary(self) -> dict[str, float]:
        """Post-warm-up per-period totals over all lanes."""
        w = self.window
        c = self.columns
        pay = c["P"][w].sum(axis=1)
        pen = c["penalty"][w].sum(axis=1)
        y_tot = float(c["Y"][w].sum())
        return {
            "kappa": float((pay + pen).mean()),
            "payment": float(pay.mean()),
            "penalty": float(pen.mean()),
            "Y": float(c["Y"][w].sum(axis=1).mean()),
            "S": float(c["S"][w].sum(axis=1).mean()),
            "D": float(c["D"][w].sum(axis=1).mean()),
            "sp_ratio": float(c["instant"][w].sum()) / y_tot if y_tot > 0 else float("nan"),
        }

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["period", "lane", "S", "D", "X", "Y", "V", "P", "penalty", "instant_bookings"])
            c = self.columns
            for t in range(self.T):
                for k, key in enumerate(self.lane_keys):
                    w.writerow([
                        t + 1, key, c["S"][t, k], c["D"][t, k], c["X"][t, k], c["Y"][t, k],
                        c["V"][t, k], repr(float(c["P"][t, k])), repr(float(c["penalty"][t, k])),
                        c["instant"][t, k],
                    ])


def run(
    network: Network,
    mechanism: Mechanism,
    fluid: FluidSolution,
    T: int,
    T0: int,
    seed: int,
    share: float = 1.0,
) -> SimulationTrace:
    """Simulate ``T`` periods; summaries use periods ``T0+1..T``."""
    if not T > T0 >= 0:
        raise ValueError(f"need T > T0 >= 0, got T={T}, T0={T0}")
    mechanism = Mechanism(mechanism)
    streams = Streams(seed, network)
    state = init_state(network, fluid, share, streams)
    L = network.n_lanes
    cols = {f: np.zeros((T, L), dtype=float if f in ("P", "penalty") else int) for f in TRACE_FIELDS}
    for t in range(T):
        state, out = step(state, network, mechanism, fluid, streams)
        for f in TRACE_FIELDS:
            cols[f][t] = getattr(out, f)
    return SimulationTrace(
        mechanism=mechanism.value, seed=seed, T=T, T0=T0, instance=instance_id(network),
        lane_keys=tuple(network.lane_key(k) for k in range(L)), columns=cols,
    )


METRICS = ("kappa", "payment", "penalty", "Y", "S", "D", "sp_ratio")


@dataclass
class Replications:
    mechanism: str
    T: int
    T0: int
    base_seed: int
    instance: str
    per_rep: dict[str, np.ndarray]
    traces: list[SimulationTrace] = field(default_factory=list)

    @property
    def n_reps(self) -> int:
        return len(self.per_rep["kappa"])

    @property
    def mean(self) -> dict[str, float]:
        return {k: float(np.mean(v)) for k, v in self.per_rep.items()}

    @property
    def se(self) -> dict[str, float]:
        n = self.n_reps
        if n < 2:
            return {k: float("nan") for k in self.per_rep}
        return {k: float(np.std(v, ddof=1) / math.sqrt(n)) for k, v in self.per_rep.items()}


def _one(args):
    network, mechanism, fluid, T, T0, seed, share, keep = args
    trace = run(network, mechanism, fluid, T, T0, seed, share)
    return trace.summary(), (trace if keep else None)


def run_replications(
    network: Network,
    mechanism: Mechanism,
    fluid: FluidSolution,
    T: int,
    T0: int,
    n_reps: int,
    base_seed: int,
    parallel: bool | int = False,
    share: float = 1.0,
    keep_traces: bool = True,
) -> Replications:
    """Replication ``r`` uses seed ``base_seed + r``; results do not depend on ``parallel``."""
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    mechanism = Mechanism(mechanism)
    jobs = [(network, mechanism, fluid, T, T0, base_seed + r, share, keep_traces) for r in range(n_reps)]
    workers = (parallel if isinstance(parallel, int) and not isinstance(parallel, bool) else
               (None if parallel else 1))
    if workers == 1 or n_reps == 1:
        results = [_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_one, jobs))
    per_rep = {m: np.array([r[0][m] for r in results]) for m in METRICS}
    traces = [r[1] for r in results if r[1] is not None]
    return Replications(mechanism.value, T, T0, base_seed, instance_id(network), per_rep, traces)


# -- coupled dominance check ---------------------------------------------------

@dataclass
class DominanceReport:
    lane_keys: tuple[str, ...]
    min_pathwise_gap: np.ndarray
    coupled_exceedance: np.ndarray
    uncoupled_exceedance: np.ndarray
    dkw_band: float
    n_samples: int
    alpha: float

    @property
    def pathwise_ok(self) -> bool:
        return bool(np.all(self.min_pathwise_gap >= 0))

    @property
    def cdf_ok(self) -> bool:
        return bool(np.all(self.uncoupled_exceedance <= self.dkw_band))

    def to_dict(self) -> dict:
        return {
            "dkw_band": self.dkw_band,
            "n_samples": self.n_samples,
            "alpha": self.alpha,
            "pathwise_ok": self.pathwise_ok,
            "cdf_ok": self.cdf_ok,
            "lanes": {
                key: {
                    "min_pathwise_gap": int(self.min_pathwise_gap[k]),
                    "coupled_exceedance": float(self.coupled_exceedance[k]),
                    "uncoupled_exceedance": float(self.uncoupled_exceedance[k]),
                }
                for k, key in enumerate(self.lane_keys)
            },
        }


def _max_cdf_exceedance(a: np.ndarray, b: np.ndarray) -> float:
    """``max_s [F_a(s) - F_b(s)]`` for integer samples."""
    grid = np.arange(0, max(a.max(initial=0), b.max(initial=0)) + 1)
    Fa = np.searchsorted(np.sort(a), grid, side="right") / a.size
    Fb = np.searchsorted(np.sort(b), grid, side="right") / b.size
    return float(np.max(Fa - Fb))


def coupled_paths(network: Network, fluid: FluidSolution, T: int, seed: int, share: float = 1.0):
    """Jointly simulate AUC-P and AUC on one probability space.

    AUC's carriers are AUC-P's carriers plus extra ones with independent
    costs; retention of the extra loaded carriers is drawn separately so the
    AUC counts never fall below the AUC-P counts. Returns the two ``(T, L)``
    arrays of available carriers.
    """
    st = Streams(seed, network)
    L = network.n_lanes
    p, xi = fluid.p, fluid.xi
    base = init_state(network, fluid, share, st)
    costs_p = base.costs
    extra = [np.zeros(0) for _ in range(L)]
    D = base.demand
    pipe_p = base.pipeline
    pipe_a = [x.copy() for x in base.pipeline]
    S_p = np.zeros((T, L), dtype=int)
    S_a = np.zeros((T, L), dtype=int)
    for t in range(T):
        Yp = np.zeros(L, dtype=int)
        Ya = np.zeros(L, dtype=int)
        for k in range(L):
            bids_a = np.concatenate([costs_p[k], extra[k]])
            S_p[t, k] = costs_p[k].size
            S_a[t, k] = bids_a.size
            Yp[k] = allocate(Mechanism.AUC_P, costs_p[k], int(D[k]), p[k], xi[k], st.order[k]).Y
            Ya[k] = allocate(Mechanism.AUC, bids_a, int(D[k]), p[k], xi[k], st.extra_order[k]).Y
        fin_p, pipe_p = _advance_pipelines(network, pipe_p, Yp)
        fin_a, pipe_a = _advance_pipelines(network, pipe_a, Ya)
        Zp = _retain(network, fin_p, st.retention)
        Za = Zp + _retain(network, fin_a - fin_p, st.extra_retention)
        lam = st.arrivals.poisson(network.arrival_rate)
        Sp_next, Sa_next = Zp + lam, Za + lam
        costs_p = _sample_costs(network, Sp_next, st.costs)
        extra = _sample_costs(network, Sa_next - Sp_next, st.extra_costs)
        D = st.demand.poisson(fluid.demand)
    return S_p, S_a


def coupled_dominance_check(
    network: Network,
    fluid: FluidSolution,
    T: int,
    n_reps: int,
    seed: int,
    T0: int | None = None,
    thin: int = 5,
    alpha: float = 0.01,
) -> DominanceReport:
    """Check that AUC keeps stochastically more carriers per lane than AUC-P.

    Reports, per lane, the smallest coupled difference ``S_AUC - S_AUC-P``
    over all periods and the largest ``F_AUC(s) - F_AUC-P(s)`` between
    post-warm-up empirical CDFs, for the coupled paths and for independent
    ordinary runs (thinned every ``thin`` periods). The DKW band is
    ``2 * sqrt(ln(2/alpha) / (2N))``.
    """
    T0 = T // 5 if T0 is None else T0
    L = network.n_lanes
    gaps = np.full(L, np.iinfo(int).max)
    cp, ca, up, ua = [], [], [], []
    for r in range(n_reps):
        S_p, S_a = coupled_paths(network, fluid, T, seed + r)
        gaps = np.minimum(gaps, (S_a - S_p).min(axis=0))
        cp.append(S_p[T0::thin])
        ca.append(S_a[T0::thin])
        # Independent runs: distinct seed blocks per mechanism.
        tr_p = run(network, Mechanism.AUC_P, fluid, T, T0, seed + 2 * r + 1_000_003)
        tr_a = run(network, Mechanism.AUC, fluid, T, T0, seed + 2 * r + 2_000_003)
        up.append(tr_p.columns["S"][T0::thin])
        ua.append(tr_a.columns["S"][T0::thin])
    cp, ca, up, ua = (np.vstack(x) for x in (cp, ca, up, ua))
    n = up.shape[0]
    return DominanceReport(
        lane_keys=tuple(network.lane_key(k) for k in range(L)),
        min_pathwise_gap=gaps,
        coupled_exceedance=np.array([_max_cdf_exceedance(ca[:, k], cp[:, k]) for k in range(L)]),
        uncoupled_exceedance=np.array([_max_cdf_exceedance(ua[:, k], up[:, k]) for k in range(L)]),
        dkw_band=2.0 * math.sqrt(math.log(2.0 / alpha) / (2.0 * n)),
        n_samples=n,
        alpha=alpha,
    )


def trace_equal(a: SimulationTrace, b: SimulationTrace) -> bool:
    return all(np.array_equal(a.columns[f], b.columns[f]) for f in TRACE_FIELDS)


__all__: Sequence[str] = [
    "Streams", "MarketState", "PeriodOutcome", "SimulationTrace", "Replications",
    "DominanceReport", "init_state", "step", "run", "run_replications",
    "coupled_paths", "coupled_dominance_check", "trace_equal", "instance_id",
]
