"""Parameter-sharing ablation of the ratio branch on the toy CSV."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "sharing_ablation.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
