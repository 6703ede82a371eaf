"""Carrier-side mechanisms for a two-sided freight marketplace: fluid pricing, auctions, simulation."""

from .calib import CalibOptions, LaneRecord, calibrate, load_lane_csv, sample_network
from .fluid import FluidSolution, Mode, SolverError, SolverOptions, derive_prices, kkt_residual, solve_fa
from .mech import (
    LaneAuctionInput, LaneOutcome, Mechanism, allocate, auc_allocate, hyb_allocate, sp_allocate,
    verify_ic, virtual_cost_identity,
)
from .metrics import MetricReport, gamma_fa, kappa_fa, report, scaling_gap
from .net import FixedRate, Lane, LinearCurve, Network, Uniform, scale_instance, single_lane, theorem_instance
from .sim import coupled_dominance_check, run, run_replications

__version__ = "0.1.0"
