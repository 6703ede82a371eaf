"""Build a calibrated network from lane-level freight volumes and regional rates."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from .net import FixedRate, Lane, Network, Uniform

CSV_COLUMNS = ("origin", "destination", "annual_tons", "average_miles", "origin_rate", "destination_rate")


class CalibrationError(ValueError):
    pass


class CalibrationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LaneRecord:
    origin: str
    destination: str
    annual_tons: float
    average_miles: float
    origin_rate: float
    destination_rate: float

    def __post_init__(self):
        for name in CSV_COLUMNS[2:]:
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise CalibrationError(f"{name} must be finite and positive, got {v!r}")


@dataclass(frozen=True)
class CalibOptions:
    container_volume: float = 20.0   # tons per load
    miles_per_period: float = 500.0
    rate_divisor: float = 1.1        # 2 * 0.1 + 0.9
    min_demand: float = 0.2
    penalty_multiple: float = 2.0
    stay_prob: float = 0.2
    x: float = 0.5
    service_level: float = 0.9
    lambda_floor: float = 1e-3
    cost_spread: float = 0.5         # costs ~ U[(1-s)p, (1+s)p]
    shipper_rate_multiple: float = 2.0  # frozen r* as a multiple of p

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise CalibrationError(f"{f.name} must be a finite number")
        positive = ("container_volume", "miles_per_period", "rate_divisor", "penalty_multiple",
                    "x", "service_level", "lambda_floor")
        for name in positive:
            if getattr(self, name) <= 0:
                raise CalibrationError(f"{name} must be positive")
        if not 0 <= self.stay_prob < 1:
            raise CalibrationError("stay_prob must lie in [0, 1)")
        if not 0 < self.x <= 1 or not 0 < self.service_level <= 1:
            raise CalibrationError("x and service_level must lie in (0, 1]")
        if not 0 <= self.cost_spread < 1:
            raise CalibrationError("cost_spread must lie in [0, 1)")

    @classmethod
    def from_dict(cls, data: dict) -> "CalibOptions":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(data) - known)
        if bad:
            raise CalibrationError(f"unknown calibration option(s): {bad}")
        return cls(**{k: float(v) for k, v in data.items()})


def load_lane_csv(path) -> list[LaneRecord]:
    """Parse a lane CSV; errors name the offending line."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CalibrationError(f"{path}: missing column(s) {missing}")
        records = []
        for row in reader:
            line = reader.line_num
            try:
                nums = {c: float(row[c]) for c in CSV_COLUMNS[2:]}
                rec = LaneRecord(row["origin"].strip(), row["destination"].strip(), **nums)
            except (TypeError, ValueError) as exc:
                raise CalibrationError(f"{path}, line {line}: {exc}") from None
            if not rec.origin or not rec.destination:
                raise CalibrationError(f"{path}, line {line}: empty node identifier")
            records.append(rec)
    return records


def sample_lanes_path() -> Path:
    return Path(str(resources.files("freightmech") / "data" / "sample_lanes.csv"))


def daily_demand(rec: LaneRecord, share: float, opts: CalibOptions) -> float:
    return rec.annual_tons / 365.0 / opts.container_volume * share


def average_cost(rec: LaneRecord, opts: CalibOptions) -> float:
    return (rec.origin_rate + rec.destination_rate) / 2.0 * rec.average_miles / opts.rate_divisor


def travel_periods(rec: LaneRecord, opts: CalibOptions) -> int:
    return max(1, math.ceil(rec.average_miles / opts.miles_per_period - 1e-12))


def back_solve_arrivals(origin, destination, demand, stay, opts: CalibOptions) -> np.ndarray:
    """External arrivals satisfying flow balance before any clamping."""
    ybar = opts.service_level * np.asarray(demand)
    lam_bar = ybar / opts.x
    inflow = np.zeros(int(max(origin.max(), destination.max())) + 1)
    np.add.at(inflow, destination, ybar)
    return lam_bar - stay * inflow[origin]


def calibrate(records: Iterable[LaneRecord], share: float, opts: CalibOptions | None = None) -> Network:
    opts = opts or CalibOptions()
    if not 0 < share <= 1:
        raise CalibrationError("share must lie in (0, 1]")
    records = list(records)
    kept = [r for r in records if daily_demand(r, share, opts) >= opts.min_demand]
    if not kept:
        raise CalibrationError("no lanes left after the minimum-demand filter")
    seen = set()
    for r in kept:
        if (r.origin, r.destination) in seen:
            raise CalibrationError(f"duplicate lane {r.origin}->{r.destination}")
        seen.add((r.origin, r.destination))

    names: list[str] = []
    for r in kept:
        for n in (r.origin, r.destination):
            if n not in names:
                names.append(n)
    index = {n: i for i, n in enumerate(names)}
    o = np.array([index[r.origin] for r in kept])
    dst = np.array([index[r.destination] for r in kept])
    d = np.array([daily_demand(r, share, opts) for r in kept])

    out_total = np.zeros(len(names))
    np.add.at(out_total, o, d)
    q = opts.stay_prob * d / out_total[o]
    lam = back_solve_arrivals(o, dst, d, q, opts)
    low = lam <= 0
    if low.any():
        bad = [f"{kept[k].origin}->{kept[k].destination}" for k in np.flatnonzero(low)]
        warnings.warn(f"non-positive arrival rate clamped to {opts.lambda_floor} on {bad}",
                      CalibrationWarning, stacklevel=2)
        lam = np.where(low, opts.lambda_floor, lam)

    lanes = []
    for k, r in enumerate(kept):
        p = average_cost(r, opts)
        lanes.append(Lane(
            origin=int(o[k]),
            destination=int(dst[k]),
            arrival_rate=float(lam[k]),
            stay_prob=float(q[k]),
            penalty=opts.penalty_multiple * p,
            cost=Uniform((1 - opts.cost_spread) * p, (1 + opts.cost_spread) * p),
            demand=FixedRate(float(d[k]), opts.shipper_rate_multiple * p),
            travel_time=travel_periods(r, opts),
        ))
    return Network(len(names), tuple(lanes), tuple(names))


def sample_network(share: float = 0.01, opts: CalibOptions | None = None) -> Network:
    """The bundled synthetic five-region network."""
    return calibrate(load_lane_csv(sample_lanes_path()), share, opts)
