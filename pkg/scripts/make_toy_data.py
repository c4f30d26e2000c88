"""Regenerate data/toy_sessions.csv (deterministic).

A small session-duration-flavored table: two categorical features with
multiplicative random effects, one continuous position feature, and a
heavily right-skewed duration target whose log1p is Gaussian given the
features, so transformed-MSE models show a clear retransformation bias on
it while staying cheap to train.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from transun.synthdata import RngStream

SEED = 20240601
N = 1000
CHANNELS = ["organic", "search", "social", "email", "ads", "referral", "push", "direct"]
N_ITEMS = 40
SIGMA = 1.0

OUT = Path(__file__).resolve().parent.parent / "data" / "toy_sessions.csv"


def main() -> None:
    rng = RngStream(SEED)
    ch_eff = (rng.child("ch").uniform(len(CHANNELS)) - 0.5) * 1.0
    it_eff = (rng.child("it").uniform(N_ITEMS) - 0.5) * 1.6
    ch = rng.child("rows_ch").integers(0, len(CHANNELS), N)
    it = rng.child("rows_it").integers(0, N_ITEMS, N)
    pos = rng.child("rows_pos").integers(1, 51, N)
    noise = rng.child("rows_noise").normal(N)
    mu = 2.0 + ch_eff[ch] + it_eff[it] - 0.25 * np.log1p(pos)
    duration = np.exp(mu + SIGMA * noise)  # strictly positive, heavily right-skewed
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with open(OUT, "w", encoding="utf-8") as fh:
        fh.write("channel,item,position,duration\n")
        for i in range(N):
            fh.write(f"{CHANNELS[ch[i]]},item_{it[i]:03d},{pos[i]},{duration[i]:.6f}\n")
    print(f"wrote {N} rows to {OUT}")


if __name__ == "__main__":
    main()
