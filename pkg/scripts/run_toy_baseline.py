"""Transformed MSE vs joint bias learning on the bundled toy CSV."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "toy_baseline.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
