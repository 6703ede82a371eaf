"""Cost-gap tables on the bundled network: a market-share sweep and a theta sweep.

Usage: python scripts/reproduce_tables.py [--out DIR] [--reps N] [--parallel N]
"""

import argparse
import json
from pathlib import Path

from freightmech.cli import main as cli_main


def run(out: Path, name: str, extra: dict, reps: int, parallel: int) -> None:
    cfg = {"version": 1, "mechanisms": ["SP", "AUC-P", "AUC", "HYB"], "T": 1000, "T0": 200,
           "n_reps": reps, "base_seed": 0, **extra}
    d = out / name
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg, indent=2) + "\n")
    rc = cli_main(["compare", "--config", str(d / "config.json"), "--out", str(d), "--parallel", str(parallel)])
    if rc:
        raise SystemExit(rc)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results/tables"))
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args()
    run(args.out, "shares", {"shares": [0.005, 0.01, 0.02, 0.05]}, args.reps, args.parallel)
    run(args.out, "thetas", {"thetas": [1, 4, 16, 64]}, args.reps, args.parallel)
