"""Point-loss x slope-function instance grid on the synthetic distributions."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "gts_instances.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
