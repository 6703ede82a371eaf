"""Command-line front end: ``freightmech <subcommand> [--config PATH] [--seed N] [--out DIR] [--parallel N]``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np

from . import calib
from .config import ConfigError, RunConfig
from .fluid import Mode, SolverError, solve_fa
from .mech import Mechanism, verify_ic
from .metrics import gamma_fa, kappa_fa, report, scaling_gap, table_csv
from .sim import coupled_dominance_check, run_replications

log = logging.getLogger("freightmech")


def _label(point: dict) -> str:
    return "_".join(f"{k}{v:g}" for k, v in point.items())


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


class _Ctx:
    def __init__(self, cfg: RunConfig, out: Path, parallel: int, base_dir: Path | None):
        self.cfg = cfg
        self.out = out
        self.parallel = parallel
        self.base_dir = base_dir

    def points(self):
        for point in self.cfg.sweep():
            net = self.cfg.network.build(point.get("share"), point["theta"], self.base_dir)
            yield point, net, solve_fa(net, Mode(self.cfg.mode))


def cmd_solve_fluid(ctx: _Ctx) -> int:
    summary = []
    for point, net, fl in ctx.points():
        doc = {**point, "kappa_fa": kappa_fa(net, fl), "gamma_fa": gamma_fa(net, fl), **fl.to_dict(net)}
        _write_json(ctx.out / f"fluid_{_label(point)}.json", doc)
        summary.append({**point, "objective": fl.objective, "kkt_residual": fl.kkt_residual,
                        "kappa_fa": doc["kappa_fa"]})
    _write_json(ctx.out / "fluid_summary.json", summary)
    for row in summary:
        print(json.dumps(row))
    return 0


def _replicate(ctx: _Ctx, net, fl, mech: str):
    c = ctx.cfg
    return run_replications(net, Mechanism(mech), fl, c.T, c.T0, c.n_reps, c.base_seed,
                            parallel=ctx.parallel if ctx.parallel > 1 else False,
                            share=c.init_share, keep_traces=c.trace_csv)


def cmd_simulate(ctx: _Ctx) -> int:
    for point, net, fl in ctx.points():
        for mech in ctx.cfg.mechanisms:
            reps = _replicate(ctx, net, fl, mech)
            tag = f"{_label(point)}_{reps.mechanism}"
            _write_json(ctx.out / f"simulate_{tag}.json", {
                **point, "mechanism": reps.mechanism, "n_reps": reps.n_reps,
                "base_seed": reps.base_seed, "T": reps.T, "T0": reps.T0,
                "mean": reps.mean, "se": reps.se,
                "per_rep": {k: v.tolist() for k, v in reps.per_rep.items()},
            })
            if reps.traces:
                reps.traces[0].to_csv(ctx.out / f"trace_{tag}.csv")
            print(json.dumps({**point, "mechanism": reps.mechanism, **reps.mean}))
    return 0


def cmd_compare(ctx: _Ctx) -> int:
    reports = []
    for point, net, fl in ctx.points():
        reps = {m: _replicate(ctx, net, fl, m) for m in ctx.cfg.mechanisms}
        reports.append(report(reps, fl, net, label=point))
    (ctx.out / "compare.csv").write_text(table_csv(reports))
    _write_json(ctx.out / "compare.json", [json.loads(r.to_json()) for r in reports])
    sys.stdout.write(table_csv(reports))
    return 0


def cmd_calibrate(ctx: _Ctx) -> int:
    for point, net, fl in ctx.points():
        _write_json(ctx.out / f"network_{_label(point)}.json", net.to_dict())
        print(f"{_label(point)}: {net.n_lanes} lanes on {net.n_nodes} nodes")
    return 0


def cmd_ic_check(ctx: _Ctx) -> int:
    rng = np.random.default_rng(ctx.cfg.base_seed)
    results = {}
    for mech in ctx.cfg.mechanisms:
        rep = verify_ic(Mechanism(mech), ctx.cfg.ic_trials, rng)
        results[mech] = dataclasses.asdict(rep)
        print(f"{mech}: max_regret={rep.max_regret:.3g} ir_violations={rep.ir_violations}")
    _write_json(ctx.out / "ic_check.json", results)
    ok = all(r["max_regret"] <= 1e-9 and r["ir_violations"] == 0 for r in results.values())
    return 0 if ok else 1


def cmd_dominance_check(ctx: _Ctx) -> int:
    out = []
    ok = True
    for point, net, fl in ctx.points():
        c = ctx.cfg
        rep = coupled_dominance_check(net, fl, c.T, c.n_reps, c.base_seed, T0=c.T0, thin=c.dominance_thin)
        out.append({**point, **rep.to_dict()})
        ok &= rep.pathwise_ok and rep.cdf_ok
        print(f"{_label(point)}: pathwise_ok={rep.pathwise_ok} cdf_ok={rep.cdf_ok} "
              f"max_exceedance={rep.uncoupled_exceedance.max():.4f} band={rep.dkw_band:.4f}")
    _write_json(ctx.out / "dominance_check.json", out)
    return 0 if ok else 1


def cmd_scaling_gap(ctx: _Ctx) -> int:
    c = ctx.cfg
    res = scaling_gap(c.scaling_thetas, c.T, c.T0, c.n_reps, c.base_seed,
                      parallel=ctx.parallel if ctx.parallel > 1 else False)
    _write_json(ctx.out / "scaling_gap.json", res.to_dict())
    lines = ["theta,gap,se,n_reps"] + [f"{p.theta:g},{p.gap!r},{p.se!r},{p.n_reps}" for p in res.points]
    (ctx.out / "scaling_gap.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"log-log slope: {res.slope:.4f}")
    return 0


COMMANDS: dict[str, Callable[[_Ctx], int]] = {
    "solve-fluid": cmd_solve_fluid,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "calibrate": cmd_calibrate,
    "ic-check": cmd_ic_check,
    "dominance-check": cmd_dominance_check,
    "scaling-gap": cmd_scaling_gap,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="freightmech", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="versioned JSON run configuration")
        p.add_argument("--seed", type=int, help="override base_seed")
        p.add_argument("--out", type=Path, help="override out_dir")
        p.add_argument("--parallel", type=int, default=1, help="worker processes for replications")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is not None:
            cfg = RunConfig.load(args.config)
            base_dir = args.config.resolve().parent
        else:
            cfg = RunConfig()
            base_dir = None
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, base_seed=args.seed)
        if args.parallel < 1:
            raise ConfigError("--parallel: must be >= 1")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config_used.json", cfg.to_dict())
    try:
        return COMMANDS[args.command](_Ctx(cfg, out, args.parallel, base_dir))
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, calib.CalibrationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
