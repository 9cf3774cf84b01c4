#!/usr/bin/env python3
"""Run every experiment with default configs into out/<experiment>/."""

import sys
from pathlib import Path

from volterra_lab.cli import main
from volterra_lab.config import experiment_names


def run(out_root: Path) -> int:
    worst = 0
    for name in experiment_names():
        code = main([name, "--out", str(out_root / name)])
        worst = max(worst, code)
    return worst


if __name__ == "__main__":
    root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("out")
    sys.exit(run(root))
