"""Normal-theory, smearing, and isotonic corrections on a biased log-MSE model."""

from pathlib import Path
import sys

from transun.cli import main

HERE = Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(main([
        "experiment",
        "--config", str(HERE / "configs" / "posthoc_corrections.toml"),
        "--out", str(HERE / "out"),
        *sys.argv[1:],
    ]))
