"""Sensitivity of the multiplicative scheme to the division guard epsilon."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "epsilon_sweep.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
