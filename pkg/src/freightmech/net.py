"""Lane network and carrier opportunity-cost distributions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Sequence, Union

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain of a distribution map."""


class NetworkError(ValueError):
    """Network parameters violate a model invariant."""


class CostDistribution:
    """Base class for regular opportunity-cost laws.

    Subclasses must provide a strictly increasing virtual cost
    ``c + F(c) / f(c)`` on their support.
    """

    kind: str = ""

    @property
    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def cdf(self, c):
        raise NotImplementedError

    def pdf(self, c):
        raise NotImplementedError

    def quantile(self, x):
        raise NotImplementedError

    def virtual_cost(self, c):
        raise NotImplementedError

    def inverse_virtual_cost(self, v):
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size=None):
        raise NotImplementedError

    def fluid_terms(self, y: float, v: float) -> tuple[float, ...]:
        """Value, gradient and Hessian of ``quantile(y / v) * y`` in ``(y, v)``.

        Returns ``(value, d_y, d_v, d_yy, d_yv, d_vv)``.
        """
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "CostDistribution":
        kind = data.get("kind")
        if kind == "uniform":
            extra = set(data) - {"kind", "lower", "upper"}
            if extra:
                raise NetworkError(f"unknown cost field(s): {sorted(extra)}")
            return Uniform(float(data["lower"]), float(data["upper"]))
        raise NetworkError(f"unknown cost distribution kind: {kind!r}")


@dataclass(frozen=True)
class Uniform(CostDistribution):
    """Uniform opportunity cost on ``[lower, upper]``."""

    lower: float
    upper: float
    kind: str = field(default="uniform", init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise NetworkError("uniform bounds must be finite")
        if self.lower < 0 or self.upper <= self.lower:
            raise NetworkError(
                f"need 0 <= lower < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def support(self) -> tuple[float, float]:
        return (self.lower, self.upper)

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def cdf(self, c):
        return np.clip((np.asarray(c, dtype=float) - self.lower) / self.width, 0.0, 1.0)

    def pdf(self, c):
        c = np.asarray(c, dtype=float)
        return np.where((c >= self.lower) & (c <= self.upper), 1.0 / self.width, 0.0)

    def quantile(self, x):
        xa = np.asarray(x, dtype=float)
        if np.any(~((xa >= 0.0) & (xa <= 1.0))):
            raise DomainError(f"quantile needs x in [0, 1], got {x}")
        out = self.lower + xa * self.width
        return float(out) if np.ndim(out) == 0 else out

    def virtual_cost(self, c):
        ca = np.asarray(c, dtype=float)
        if np.any(~((ca >= self.lower) & (ca <= self.upper))):
            raise DomainError(f"virtual cost needs c in [{self.lower}, {self.upper}], got {c}")
        out = 2.0 * ca - self.lower
        return float(out) if np.ndim(out) == 0 else out

    def inverse_virtual_cost(self, v):
        # Values above virtual_cost(upper) clamp to the support's upper end.
        va = np.asarray(v, dtype=float)
        if np.any(~(va >= self.lower)):
            raise DomainError(f"inverse virtual cost needs v >= {self.lower}, got {v}")
        out = np.minimum((va + self.lower) / 2.0, self.upper)
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lower, self.upper, size)

    def fluid_terms(self, y: float, v: float) -> tuple[float, ...]:
        w = self.width
        r = y / v
        return (
            self.lower * y + w * y * r,
            self.lower + 2.0 * w * r,
            -w * r * r,
            2.0 * w / v,
            -2.0 * w * r / v,
            2.0 * w * r * r / v,
        )

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "uniform", "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True)
class FixedRate:
    """Exogenous Poisson load rate; ``price`` is the frozen shipper rate r*."""

    rate: float
    price: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "fixed", "rate": self.rate, "price": self.price}


@dataclass(frozen=True)
class LinearCurve:
    """Linear demand ``d(r) = max(0, intercept - slope * r)``."""

    intercept: float
    slope: float

    def demand(self, price: float) -> float:
        return max(0.0, self.intercept - self.slope * price)

    def inverse(self, d: float) -> float:
        return (self.intercept - d) / self.slope

    def to_dict(self) -> dict[str, Any]:
        return {"kind": "linear", "intercept": self.intercept, "slope": self.slope}


DemandSpec = Union[FixedRate, LinearCurve]


def _demand_from_dict(data: dict[str, Any]) -> DemandSpec:
    kind = data.get("kind")
    if kind == "fixed":
        extra = set(data) - {"kind", "rate", "price"}
        if extra:
            raise NetworkError(f"unknown demand field(s): {sorted(extra)}")
        return FixedRate(float(data["rate"]), float(data.get("price", 0.0)))
    if kind == "linear":
        extra = set(data) - {"kind", "intercept", "slope"}
        if extra:
            raise NetworkError(f"unknown demand field(s): {sorted(extra)}")
        return LinearCurve(float(data["intercept"]), float(data["slope"]))
    raise NetworkError(f"unknown demand kind: {kind!r}")


@dataclass(frozen=True)
class Lane:
    origin: int
    destination: int
    arrival_rate: float
    stay_prob: float
    penalty: float
    cost: CostDistribution
    demand: DemandSpec
    travel_time: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "origin": self.origin,
            "destination": self.destination,
            "arrival_rate": self.arrival_rate,
            "stay_prob": self.stay_prob,
            "penalty": self.penalty,
            "travel_time": self.travel_time,
            "cost": self.cost.to_dict(),
            "demand": self.demand.to_dict(),
        }


_LANE_KEYS = {
    "origin", "destination", "arrival_rate", "stay_prob",
    "penalty", "travel_time", "cost", "demand",
}


@dataclass(frozen=True)
class Network:
    """Directed lane graph on ``n_nodes`` locations (self-loops allowed)."""

    n_nodes: int
    lanes: tuple[Lane, ...]
    node_names: tuple[str, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "lanes", tuple(self.lanes))
        if self.n_nodes < 1:
            raise NetworkError("network needs at least one node")
        if not self.lanes:
            raise NetworkError("network needs at least one lane")
        seen = set()
        for k, lane in enumerate(self.lanes):
            key = (lane.origin, lane.destination)
            if key in seen:
                raise NetworkError(f"duplicate lane {key}")
            seen.add(key)
            if not (0 <= lane.origin < self.n_nodes and 0 <= lane.destination < self.n_nodes):
                raise NetworkError(f"lane {k} endpoints outside 0..{self.n_nodes - 1}")
            if not lane.arrival_rate > 0:
                raise NetworkError(f"lane {key}: arrival rate must be > 0")
            if not 0 <= lane.stay_prob < 1:
                raise NetworkError(f"lane {key}: stay probability must lie in [0, 1)")
            if not lane.penalty >= 0:
                raise NetworkError(f"lane {key}: penalty must be >= 0")
            if int(lane.travel_time) != lane.travel_time or lane.travel_time < 1:
                raise NetworkError(f"lane {key}: travel time must be an integer >= 1")
            d = lane.demand
            if isinstance(d, FixedRate) and not d.rate >= 0:
                raise NetworkError(f"lane {key}: demand rate must be >= 0")
            if isinstance(d, LinearCurve) and not (d.intercept > 0 and d.slope > 0):
                raise NetworkError(f"lane {key}: demand curve needs intercept, slope > 0")
        out = np.zeros(self.n_nodes)
        for lane in self.lanes:
            out[lane.origin] += lane.stay_prob
        bad = np.flatnonzero(out >= 1.0)
        if bad.size:
            raise NetworkError(f"stay probabilities out of node(s) {bad.tolist()} sum to >= 1")
        if self.node_names is not None and len(self.node_names) != self.n_nodes:
            raise NetworkError("node_names length must equal n_nodes")

    @property
    def n_lanes(self) -> int:
        return len(self.lanes)

    @cached_property
    def origin(self) -> np.ndarray:
        return np.array([l.origin for l in self.lanes], dtype=int)

    @cached_property
    def destination(self) -> np.ndarray:
        return np.array([l.destination for l in self.lanes], dtype=int)

    @cached_property
    def arrival_rate(self) -> np.ndarray:
        return np.array([l.arrival_rate for l in self.lanes])

    @cached_property
    def stay_prob(self) -> np.ndarray:
        return np.array([l.stay_prob for l in self.lanes])

    @cached_property
    def penalty(self) -> np.ndarray:
        return np.array([l.penalty for l in self.lanes])

    @cached_property
    def travel_time(self) -> np.ndarray:
        return np.array([l.travel_time for l in self.lanes], dtype=int)

    @cached_property
    def retention(self) -> np.ndarray:
        """Matrix Q with ``Q[l, k] = q_l`` when lane k ends where lane l starts.

        The carrier inflow of lane l is ``lambda_l + (Q @ ybar)[l]``.
        """
        q = self.stay_prob
        return np.where(self.destination[None, :] == self.origin[:, None], q[:, None], 0.0)

    @cached_property
    def out_lanes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(self.origin == i) for i in range(self.n_nodes))

    @cached_property
    def in_lanes(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(self.destination == i) for i in range(self.n_nodes))

    @property
    def fixed_demand(self) -> bool:
        return all(isinstance(l.demand, FixedRate) for l in self.lanes)

    @property
    def linear_demand(self) -> bool:
        return all(isinstance(l.demand, LinearCurve) for l in self.lanes)

    def lane_key(self, k: int) -> str:
        lane = self.lanes[k]
        if self.node_names is None:
            return f"{lane.origin}->{lane.destination}"
        return f"{self.node_names[lane.origin]}->{self.node_names[lane.destination]}"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"n_nodes": self.n_nodes, "lanes": [l.to_dict() for l in self.lanes]}
        if self.node_names is not None:
            out["node_names"] = list(self.node_names)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Network":
        extra = set(data) - {"n_nodes", "lanes", "node_names"}
        if extra:
            raise NetworkError(f"unknown network field(s): {sorted(extra)}")
        lanes = []
        for k, raw in enumerate(data["lanes"]):
            extra = set(raw) - _LANE_KEYS
            if extra:
                raise NetworkError(f"lanes[{k}]: unknown field(s) {sorted(extra)}")
            missing = _LANE_KEYS - {"travel_time"} - set(raw)
            if missing:
                raise NetworkError(f"lanes[{k}]: missing field(s) {sorted(missing)}")
            lanes.append(Lane(
                origin=int(raw["origin"]),
                destination=int(raw["destination"]),
                arrival_rate=float(raw["arrival_rate"]),
                stay_prob=float(raw["stay_prob"]),
                penalty=float(raw["penalty"]),
                travel_time=int(raw.get("travel_time", 1)),
                cost=CostDistribution.from_dict(raw["cost"]),
                demand=_demand_from_dict(raw["demand"]),
            ))
        names = data.get("node_names")
        return cls(int(data["n_nodes"]), tuple(lanes), tuple(names) if names else None)


def quantile(dist: CostDistribution, x):
    return dist.quantile(x)


def virtual_cost(dist: CostDistribution, c):
    return dist.virtual_cost(c)


def inverse_virtual_cost(dist: CostDistribution, v):
    return dist.inverse_virtual_cost(v)


def sample_cost(dist: CostDistribution, rng: np.random.Generator, size=None):
    return dist.sample(rng, size)


def single_lane(
    *,
    arrival_rate: float,
    demand: DemandSpec,
    cost: CostDistribution,
    penalty: float,
    stay_prob: float = 0.0,
    self_loop: bool = False,
    travel_time: int = 1,
) -> Network:
    """One-lane network, either ``0->1`` or the self-loop ``0->0``."""
    lane = Lane(0, 0 if self_loop else 1, arrival_rate, stay_prob, penalty, cost, demand, travel_time)
    return Network(1 if self_loop else 2, (lane,))


def scale_instance(network: Network, theta: float) -> Network:
    """Multiply carrier arrival rates and demand rates (or curve intercepts) by ``theta``."""
    if not theta > 0:
        raise ValueError("theta must be positive")
    lanes = []
    for lane in network.lanes:
        d = lane.demand
        if isinstance(d, FixedRate):
            d = replace(d, rate=d.rate * theta)
        else:
            # Scaling the curve horizontally keeps the inverse demand at a fixed load share.
            d = replace(d, intercept=d.intercept * theta, slope=d.slope * theta)
        lanes.append(replace(lane, arrival_rate=lane.arrival_rate * theta, demand=d))
    return replace(network, lanes=tuple(lanes))


def theorem_instance(theta: float) -> Network:
    """Single lane with b = r* = 1, demand theta/2, arrivals theta, U[0,1] costs, no retention."""
    return single_lane(
        arrival_rate=float(theta),
        demand=FixedRate(theta / 2.0, price=1.0),
        cost=Uniform(0.0, 1.0),
        penalty=1.0,
    )


__all__: Sequence[str] = [
    "CostDistribution", "Uniform", "FixedRate", "LinearCurve", "Lane", "Network",
    "DomainError", "NetworkError", "quantile", "virtual_cost", "inverse_virtual_cost",
    "sample_cost", "single_lane", "scale_instance", "theorem_instance",
]
