"""Additive / inverted-ratio / multiplicative bias-modeling schemes on fixed-x Gamma data."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "scheme_comparison.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
