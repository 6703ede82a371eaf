"""Evaluation quantities: long-run cost, gap to the fluid bound, SP ratio, profit."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .fluid import FluidSolution, Mode, solve_fa
from .mech import ConfigurationError, Mechanism
from .net import FixedRate, Network, theorem_instance
from .sim import Replications, run_replications


def kappa_fa(network: Network, fluid: FluidSolution) -> float:
    """Fluid cost per period: payments at p* plus penalties on unserved fluid demand."""
    return float(np.sum(fluid.p * fluid.ybar + network.penalty * (fluid.demand - fluid.ybar)))


def shipper_prices(network: Network, fluid: FluidSolution) -> np.ndarray:
    """The frozen shipper rate r* per lane."""
    if fluid.r is not None:
        return np.asarray(fluid.r, dtype=float)
    return np.array([l.demand.price if isinstance(l.demand, FixedRate) else 0.0 for l in network.lanes])


def revenue_fa(network: Network, fluid: FluidSolution) -> float:
    return float(np.sum(shipper_prices(network, fluid) * fluid.demand))


def gamma_fa(network: Network, fluid: FluidSolution) -> float:
    """Fluid profit per period at the frozen shipper rates."""
    return revenue_fa(network, fluid) - kappa_fa(network, fluid)


@dataclass(frozen=True)
class MechanismMetrics:
    mechanism: str
    n_reps: int
    kappa: float
    kappa_se: float
    cost_gap_ratio: float
    cost_gap_ratio_se: float
    cost_ratio: float
    payment_ratio: float
    payment_ratio_se: float
    penalty_ratio: float
    penalty_ratio_se: float
    sp_ratio: float
    sp_ratio_se: float
    profit: float
    profit_se: float


@dataclass
class MetricReport:
    kappa_fa: float
    gamma_fa: float
    label: dict = field(default_factory=dict)
    rows: dict[str, MechanismMetrics] = field(default_factory=dict)

    def __getitem__(self, mechanism) -> MechanismMetrics:
        return self.rows[Mechanism(mechanism).value]

    def above_fluid_bound(self, n_se: float = 3.0) -> dict[str, bool]:
        return {m: r.kappa >= self.kappa_fa - n_se * r.kappa_se for m, r in self.rows.items()}

    def table(self) -> list[dict]:
        return [{**self.label, **asdict(r), "kappa_fa": self.kappa_fa} for r in self.rows.values()]

    def to_json(self) -> str:
        return json.dumps({"kappa_fa": self.kappa_fa, "gamma_fa": self.gamma_fa, "label": self.label,
                           "rows": {m: asdict(r) for m, r in self.rows.items()}}, indent=2)


def _se(v: np.ndarray) -> float:
    return float(np.std(v, ddof=1) / math.sqrt(v.size)) if v.size > 1 else float("nan")


def report(
    replications: Mapping[str, Replications] | Iterable[Replications],
    fluid: FluidSolution,
    network: Network,
    label: dict | None = None,
) -> MetricReport:
    """Summarize replications of several mechanisms against the fluid benchmark.

    Standard errors are between-replication; each replication contributes its
    post-warm-up mean.
    """
    reps = list(replications.values()) if isinstance(replications, Mapping) else list(replications)
    if not reps:
        raise ConfigurationError("no replications to report")
    first = reps[0]
    for r in reps[1:]:
        if (r.T, r.T0, r.instance) != (first.T, first.T0, first.instance):
            raise ConfigurationError(
                f"replications disagree on (T, T0, instance): {(first.T, first.T0, first.instance)} "
                f"vs {(r.T, r.T0, r.instance)}"
            )
    kfa = kappa_fa(network, fluid)
    if not kfa > 0:
        raise ConfigurationError("fluid cost is zero; ratios are undefined")
    rev = revenue_fa(network, fluid)
    out = MetricReport(kfa, rev - kfa, dict(label or {}))
    for r in reps:
        kap = r.per_rep["kappa"]
        cost = kap / kfa
        pay = r.per_rep["payment"] / kfa
        pen = cost - pay
        sp = r.per_rep["sp_ratio"]
        profit = rev - kap
        out.rows[r.mechanism] = MechanismMetrics(
            mechanism=r.mechanism,
            n_reps=r.n_reps,
            kappa=float(kap.mean()),
            kappa_se=_se(kap),
            cost_gap_ratio=float(cost.mean() - 1.0),
            cost_gap_ratio_se=_se(cost),
            cost_ratio=float(cost.mean()),
            payment_ratio=float(pay.mean()),
            payment_ratio_se=_se(pay),
            penalty_ratio=float(pen.mean()),
            penalty_ratio_se=_se(pen),
            sp_ratio=float(np.nanmean(sp)),
            sp_ratio_se=_se(sp[np.isfinite(sp)]),
            profit=float(profit.mean()),
            profit_se=_se(profit),
        )
    return out


def write_table(reports: Sequence[MetricReport], fh) -> None:
    """One CSV row per (sweep point, mechanism)."""
    rows = [row for rep in reports for row in rep.table()]
    if not rows:
        return
    cols = list(rows[0])
    w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def table_csv(reports: Sequence[MetricReport]) -> str:
    buf = io.StringIO()
    write_table(reports, buf)
    return buf.getvalue()


# -- the square-root gap experiment -------------------------------------------

@dataclass(frozen=True)
class GapPoint:
    theta: float
    gap: float
    se: float
    n_reps: int


@dataclass(frozen=True)
class ScalingResult:
    points: tuple[GapPoint, ...]
    slope: float
    intercept: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "points": [asdict(p) for p in self.points]}


def profit_gap(theta: float, T: int, T0: int, n_reps: int, base_seed: int,
               parallel: bool | int = False) -> GapPoint:
    """Estimate ``gamma_AUC - gamma_SP`` on the single-lane scaling instance.

    Both mechanisms see the same replication seeds, so the per-replication
    differences are paired; the shipper revenue cancels.
    """
    net = theorem_instance(theta)
    fl = solve_fa(net, Mode.COST_MIN)
    sp = run_replications(net, Mechanism.SP, fl, T, T0, n_reps, base_seed, parallel, keep_traces=False)
    auc = run_replications(net, Mechanism.AUC, fl, T, T0, n_reps, base_seed, parallel, keep_traces=False)
    diff = sp.per_rep["kappa"] - auc.per_rep["kappa"]
    return GapPoint(float(theta), float(diff.mean()), _se(diff), n_reps)


def loglog_slope(points: Sequence[GapPoint]) -> tuple[float, float]:
    th = np.log([p.theta for p in points])
    g = np.log([p.gap for p in points])
    slope, intercept = np.polyfit(th, g, 1)
    return float(slope), float(intercept)


def scaling_gap(thetas: Sequence[float], T: int, T0: int, n_reps: int, base_seed: int,
                parallel: bool | int = False) -> ScalingResult:
    pts = tuple(profit_gap(th, T, T0, n_reps, base_seed, parallel) for th in thetas)
    if any(p.gap <= 0 for p in pts):
        return ScalingResult(pts, float("nan"), float("nan"))
    return ScalingResult(pts, *loglog_slope(pts))


__all__: Sequence[str] = [
    "kappa_fa", "gamma_fa", "revenue_fa", "shipper_prices", "MechanismMetrics", "MetricReport",
    "report", "write_table", "table_csv", "GapPoint", "ScalingResult", "profit_gap",
    "loglog_slope", "scaling_gap",
]
