"""Bias grid over the eight synthetic distributions (transformed MSE vs joint bias learning)."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "synthetic_bias_grid.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
