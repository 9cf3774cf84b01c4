"""Command-line entry point: ``volterra-lab <experiment> [options]``.

Exit codes: 0 success, 2 configuration / validation failure, 3 numerical
abort (simulation blow-up or solver cap).  ``VLAB_THREADS`` caps the worker
count (default: hardware count); results are identical at any setting.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

from . import config as cfg_mod
from .errors import DomainError, GridMismatch, SimulationBlowUp, SolverBlowUp
from .experiments import RUNNERS
from .reporting import write_manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="volterra-lab",
        description="Desk-scale experiments for lifted stochastic Volterra dynamics")
    p.add_argument("experiment", choices=sorted(RUNNERS) + ["markov-approx"],
                   help="experiment to run (markov-approx is an alias for markov)")
    p.add_argument("--config", type=Path, default=None,
                   help="TOML file with one table per experiment")
    p.add_argument("--seed", type=int, default=None,
                   help="override the configured seed")
    p.add_argument("--out", type=Path, default=Path("out"),
                   help="output directory (default: ./out)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.experiment == "markov-approx":
        args.experiment = "markov"
    try:
        cfg = cfg_mod.load(args.experiment, args.config, args.seed)
    except (DomainError, GridMismatch, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out_dir = args.out
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        summary = RUNNERS[args.experiment](cfg, out_dir)
    except (SimulationBlowUp, SolverBlowUp) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3
    except (DomainError, GridMismatch) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    wall = time.perf_counter() - start
    write_manifest(out_dir, args.experiment, cfg_mod.to_dict(cfg),
                   getattr(cfg, "seed", 0), wall)
    parts = ", ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                      for k, v in summary.items())
    print(f"{args.experiment}: {parts} ({wall:.1f}s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
