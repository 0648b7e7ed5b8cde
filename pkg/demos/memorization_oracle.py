"""Watermark lifecycle with no training at all.

A one-image corpus has a closed-form optimal noise predictor, so the reverse
chain can be run exactly. The averaged state at t_A shows the mark; the
finals do not.

    python3 demos/memorization_oracle.py [out_dir]
"""
import sys
from pathlib import Path

import numpy as np

from diffwm import WatermarkSpec, average_snapshot, make_linear_schedule, make_pattern, sample, verify
from diffwm.data import make_synthetic_dataset
from diffwm.oracles import MemorizationDenoiser
from diffwm.plotting import emit_trajectory_plot

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

T = 100
schedule = make_linear_schedule(T)
pattern = make_pattern("square", "bottom_right", 4, (16, 16, 1))
spec = WatermarkSpec(pattern, gamma=0.8, t_A=T // 2, f1_mode="zero")
x0 = make_synthetic_dataset(1, 16, seed=0)[0]

# mark amplitude fixed at 3: roughly what batch scaling picks at desk scale
denoiser = MemorizationDenoiser(x0, 3.0 * pattern, spec, schedule)
steps = [T, 3 * T // 4, T // 2, T // 4]
batch = sample(denoiser, schedule, spec, 100, snapshot_steps=steps, rng=5)

for t in steps:
    r = verify(average_snapshot(batch.snapshots[t]), pattern)
    print(f"t={t:3d}  verdict={r.verdict!s:5}  best similarity={r.best_similarity:.3g}")
r = verify(average_snapshot(batch.finals), pattern)
print(f"finals verdict={r.verdict}  max |final - x0| = {np.abs(batch.finals - x0).max():.2e}")

png = emit_trajectory_plot(batch, steps + [0], out / "memorization_strip.png")
print("strip:", png)
