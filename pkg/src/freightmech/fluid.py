"""Convex fluid relaxation of the marketplace and the static prices it induces.

The program is solved over the loaded-carrier flows ``ybar`` (and the demand
rates ``d`` when demand is priced) after eliminating the carrier inflows,
which are affine in ``ybar``::

    lam_bar = lam + Q @ ybar

Every remaining constraint is linear, so a log-barrier Newton method reaches
the optimum quickly; a final Newton pass on the detected active set removes
the barrier bias.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import nnls

from .net import Network, scale_instance

__all__ = [
    "Mode", "SolverOptions", "FluidSolution", "SolverError",
    "solve_fa", "kkt_residual", "derive_prices", "scale_instance",
]


class Mode(str, enum.Enum):
    PROFIT_MAX = "profit"
    COST_MIN = "cost"


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6
    max_iters: int = 100_000
    # Terminal duality-gap target of the barrier phase, relative to |objective|.
    barrier_gap: float = 1e-11


class SolverError(RuntimeError):
    def __init__(self, message: str, best: "FluidSolution | None" = None, residual: float = np.inf):
        super().__init__(message)
        self.best = best
        self.residual = residual


@dataclass
class FluidSolution:
    """Optimal fluid flows and derived prices.

    ``objective`` is the fluid profit per period; under fixed demand it uses
    the frozen shipper rates carried by each lane's ``FixedRate``.
    """

    mode: Mode
    demand: np.ndarray
    ybar: np.ndarray
    lam_bar: np.ndarray
    x: np.ndarray | None = None
    p: np.ndarray | None = None
    r: np.ndarray | None = None
    xi: np.ndarray | None = None
    objective: float = float("nan")
    kkt_residual: float = float("nan")
    iterations: int = 0
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self, network: Network) -> dict[str, Any]:
        lanes = {}
        for k in range(network.n_lanes):
            row = {
                "d": float(self.demand[k]),
                "ybar": float(self.ybar[k]),
                "lam_bar": float(self.lam_bar[k]),
            }
            if self.x is not None:
                row.update(x=float(self.x[k]), p=float(self.p[k]), xi=float(self.xi[k]))
            if self.r is not None:
                row["r"] = float(self.r[k])
            lanes[network.lane_key(k)] = row
        return {
            "mode": self.mode.value,
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
            "lanes": lanes,
        }


class _Program:
    """Objective and linear constraints of the fluid program in stacked variables."""

    def __init__(self, network: Network, mode: Mode):
        self.net = network
        self.mode = mode
        n = network.n_lanes
        self.n = n
        self.lam = network.arrival_rate
        self.b = network.penalty
        self.Q = network.retention
        self.dists = [l.cost for l in network.lanes]

        if mode is Mode.COST_MIN:
            self.d_fixed = np.array([l.demand.rate for l in network.lanes])
            # Lanes without demand carry no flow and drop out of the variables.
            self.free = np.flatnonzero(self.d_fixed > 0)
            m = self.free.size
            A_flow = (np.eye(n) - self.Q)[np.ix_(self.free, self.free)]
            self.G = np.vstack([-np.eye(m), np.eye(m), A_flow])
            self.h = np.concatenate([np.zeros(m), self.d_fixed[self.free], self.lam[self.free]])
            self.price = np.array([l.demand.price for l in network.lanes])
        else:
            self.a = np.array([l.demand.intercept for l in network.lanes])
            self.s = np.array([l.demand.slope for l in network.lanes])
            Z = np.zeros((n, n))
            I = np.eye(n)
            self.G = np.vstack([
                np.hstack([Z, -I]),
                np.hstack([-I, I]),
                np.hstack([Z, I - self.Q]),
                np.hstack([I, Z]),
            ])
            self.h = np.concatenate([np.zeros(n), np.zeros(n), self.lam, self.a])

        self.zscale = max(1.0, float(np.max(np.abs(self.h), initial=0.0)))
        uppers = [d.support[1] for d in self.dists]
        self.gscale = max(1.0, float(np.max(self.b)), float(np.max(uppers)))

    # -- variable maps ----------------------------------------------------

    def split(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.mode is Mode.COST_MIN:
            y = np.zeros(self.n)
            y[self.free] = z
            return self.d_fixed.copy(), y
        return z[: self.n].copy(), z[self.n:].copy()

    def stack(self, d: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.mode is Mode.COST_MIN:
            return np.asarray(y, dtype=float)[self.free].copy()
        return np.concatenate([d, y]).astype(float)

    def start(self) -> np.ndarray:
        if self.mode is Mode.COST_MIN:
            d = self.d_fixed
            return self.stack(d, 0.5 * np.minimum(d, self.lam))
        d = 0.5 * self.a
        return self.stack(d, 0.5 * np.minimum(d, self.lam))

    # -- objective: negative profit ---------------------------------------

    def _terms(self, y):
        v = self.lam + self.Q @ y
        T = np.array([dist.fluid_terms(yk, vk) for dist, yk, vk in zip(self.dists, y, v)])
        return v, T

    def value(self, z: np.ndarray) -> float:
        d, y = self.split(z)
        _, T = self._terms(y)
        f = T[:, 0].sum() + self.b @ (d - y)
        if self.mode is Mode.COST_MIN:
            f -= self.price @ d
        else:
            f -= np.sum(d * (self.a - d) / self.s)
        return float(f)

    def grad(self, z: np.ndarray) -> np.ndarray:
        d, y = self.split(z)
        _, T = self._terms(y)
        gy = T[:, 1] + self.Q.T @ T[:, 2] - self.b
        if self.mode is Mode.COST_MIN:
            return gy[self.free]
        gd = self.b - (self.a - 2.0 * d) / self.s
        return np.concatenate([gd, gy])

    def hess(self, z: np.ndarray) -> np.ndarray:
        d, y = self.split(z)
        _, T = self._terms(y)
        Q = self.Q
        cross = Q.T * T[:, 4][None, :]
        Hy = np.diag(T[:, 3]) + cross + cross.T + Q.T @ (T[:, 5][:, None] * Q)
        if self.mode is Mode.COST_MIN:
            return Hy[np.ix_(self.free, self.free)]
        H = np.zeros((2 * self.n, 2 * self.n))
        H[: self.n, : self.n] = np.diag(2.0 / self.s)
        H[self.n:, self.n:] = Hy
        return H

    def slack(self, z: np.ndarray) -> np.ndarray:
        return self.h - self.G @ z


def _barrier(prog: _Program, z: np.ndarray, opts: SolverOptions) -> tuple[np.ndarray, float, int]:
    m = prog.G.shape[0]
    f0 = prog.value(z)
    t = max(1.0, m / max(1.0, abs(f0)))
    iters = 0
    while True:
        for _ in range(200):
            s = prog.slack(z)
            g = t * prog.grad(z) + prog.G.T @ (1.0 / s)
            Gs = prog.G / s[:, None]
            H = t * prog.hess(z) + Gs.T @ Gs
            try:
                step = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(H, g, rcond=None)[0]
            dec = float(-g @ step)
            iters += 1
            if iters > opts.max_iters:
                err = SolverError("barrier iterations exhausted")
                err.iterate = z
                raise err
            if dec / 2.0 <= 1e-14 * max(1.0, t * abs(f0)):
                break
            phi = t * prog.value(z) - np.sum(np.log(s))
            alpha = 1.0
            while np.any(prog.slack(z + alpha * step) <= 0):
                alpha *= 0.5
            while True:
                zn = z + alpha * step
                phin = t * prog.value(zn) - np.sum(np.log(prog.slack(zn)))
                if phin <= phi - 0.25 * alpha * dec or alpha < 1e-12:
                    break
                alpha *= 0.5
            z = zn
            if alpha * np.max(np.abs(step)) <= 1e-15 * prog.zscale:
                break
        f = prog.value(z)
        if m / t <= opts.barrier_gap * max(1.0, abs(f)):
            return z, t, iters
        t *= 20.0


def _polish(prog: _Program, z0: np.ndarray, t: float) -> np.ndarray | None:
    """Newton on the active face identified by the barrier multipliers.

    Constraints whose face multiplier comes out negative are released and the
    face is re-solved.
    """
    s = prog.slack(z0)
    mu = 1.0 / (t * s)
    active = np.flatnonzero(s / prog.zscale < mu / prog.gscale)
    n = z0.size
    for _ in range(8):
        A = prog.G[active]
        hA = prog.h[active]
        k = active.size
        z = z0.copy()
        mult = np.zeros(0)
        for _ in range(30):
            g = prog.grad(z)
            H = prog.hess(z)
            K = np.block([[H, A.T], [A, np.zeros((k, k))]])
            rhs = np.concatenate([-g, hA - A @ z])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            z = z + sol[:n]
            mult = sol[n:]
            if np.max(np.abs(sol[:n]), initial=0.0) <= 1e-15 * prog.zscale:
                break
        neg = mult < -1e-13 * prog.gscale
        if not np.any(neg):
            break
        active = active[~neg]
    else:
        return None
    # Put variables held by single-variable bounds exactly on the bound.
    for i in active:
        nz = np.flatnonzero(prog.G[i])
        if nz.size == 1:
            z[nz[0]] = prog.h[i] / prog.G[i, nz[0]]
    if np.min(prog.slack(z)) < -1e-12 * prog.zscale:
        return None
    return z


def _residual(prog: _Program, z: np.ndarray, flow_error: float = 0.0) -> float:
    s = prog.slack(z)
    primal = max(float(np.max(-s, initial=0.0)), flow_error)
    g = prog.grad(z)
    active = s <= 1e-9 * np.maximum(1.0, np.abs(prog.h))
    if np.any(active):
        A = prog.G[active]
        mu, _ = nnls(A.T, -g)
        r = g + A.T @ mu
    else:
        r = g
    stat = float(np.max(np.abs(r), initial=0.0)) / prog.gscale
    return max(primal, stat) + 0.0


def _check_mode(network: Network, mode: Mode) -> None:
    if mode is Mode.COST_MIN and not network.fixed_demand:
        raise ValueError("cost-minimisation mode needs a fixed demand rate on every lane")
    if mode is Mode.PROFIT_MAX and not network.linear_demand:
        raise ValueError("profit-maximisation mode needs a linear demand curve on every lane")


def solve_fa(network: Network, mode: Mode = Mode.COST_MIN, opts: SolverOptions | None = None) -> FluidSolution:
    """Solve the fluid program and return it with prices populated.

    Raises :class:`SolverError` when the certified KKT residual stays above
    ``opts.tolerance``.
    """
    opts = opts or SolverOptions()
    mode = Mode(mode)
    _check_mode(network, mode)
    prog = _Program(network, mode)

    if prog.G.shape[1] == 0:
        z = np.zeros(0)
        iters = 0
    else:
        try:
            z, t, iters = _barrier(prog, prog.start(), opts)
        except SolverError as err:
            best = _assemble(network, prog, mode, err.iterate, opts.max_iters)
            raise SolverError(str(err), best=best, residual=best.kkt_residual) from None
        res_ip = _residual(prog, z)
        zp = _polish(prog, z, t)
        # The active-face point is exact up to rounding, which clipping removes.
        if zp is not None and _residual(prog, zp) <= max(res_ip, 1e-12):
            z = zp

    sol = _assemble(network, prog, mode, z, iters)
    if not sol.kkt_residual <= opts.tolerance:
        raise SolverError(
            f"KKT residual {sol.kkt_residual:.3e} above tolerance {opts.tolerance:.1e}",
            best=sol, residual=sol.kkt_residual,
        )
    return sol


def _assemble(network: Network, prog: _Program, mode: Mode, z: np.ndarray, iters: int) -> FluidSolution:
    d, y = prog.split(z)
    # Rounding can leave flows a hair outside their bounds.
    y = np.clip(y, 0.0, None)
    y = np.minimum(y, d)
    sol = FluidSolution(
        mode=mode,
        demand=d,
        ybar=y,
        lam_bar=prog.lam + prog.Q @ y,
        objective=-prog.value(prog.stack(d, y)),
        iterations=iters,
    )
    sol.kkt_residual = kkt_residual(network, sol)
    return derive_prices(network, sol)


def kkt_residual(network: Network, candidate: FluidSolution) -> float:
    """Max of primal infeasibility and the multiplier-corrected gradient norm.

    Multipliers for the constraints active at the candidate come from a
    non-negative least-squares fit, so an exact optimum scores zero.
    """
    prog = _Program(network, candidate.mode)
    y = np.asarray(candidate.ybar, dtype=float)
    d = np.asarray(candidate.demand, dtype=float)
    flow = float(np.max(np.abs(candidate.lam_bar - (prog.lam + prog.Q @ y))))
    if candidate.mode is Mode.COST_MIN:
        flow = max(flow, float(np.max(np.abs(d - prog.d_fixed))))
        fixed = np.setdiff1d(np.arange(network.n_lanes), prog.free)
        flow = max(flow, float(np.max(np.abs(y[fixed]), initial=0.0)))
    # Inflow bound checked against the candidate's own inflow.
    flow = max(flow, float(np.max(y - candidate.lam_bar, initial=0.0)))
    return _residual(prog, prog.stack(d, y), flow)


def derive_prices(network: Network, solution: FluidSolution) -> FluidSolution:
    """Fill in x*, p*, xi* (and r* under priced demand) from the flows."""
    lam_bar = np.asarray(solution.lam_bar, dtype=float)
    if np.any(lam_bar <= 0):
        raise ValueError("degenerate lane: zero carrier inflow")
    x = np.clip(solution.ybar / lam_bar, 0.0, 1.0)
    p = np.empty(network.n_lanes)
    xi = np.empty(network.n_lanes)
    for k, lane in enumerate(network.lanes):
        dist = lane.cost
        p[k] = dist.quantile(x[k])
        # A penalty below the lowest virtual cost never justifies paying above p*.
        if lane.penalty >= dist.virtual_cost(dist.support[0]):
            xi[k] = max(dist.inverse_virtual_cost(lane.penalty), p[k])
        else:
            xi[k] = p[k]
    solution.x, solution.p, solution.xi = x, p, xi
    if solution.mode is Mode.PROFIT_MAX:
        solution.r = np.array([
            l.demand.inverse(dk) for l, dk in zip(network.lanes, solution.demand)
        ])
    else:
        solution.r = None
    return solution

