"""Train a small watermarked denoiser, then compare it with a zero-watermark twin.

Both models see the same single 16x16 image and the same two-stage pipeline;
only the mark differs. After sampling, the averaged t_A state of the
watermarked model carries the square, the twin's does not, and neither
model's finals do.

    python3 demos/desk_lifecycle.py [steps] [out_dir]

About a minute per 1000 steps per model on one CPU core.
"""
import sys
from pathlib import Path

from diffwm import average_snapshot, sample, verify
from diffwm.cli import load_dataset
from diffwm.config import RunConfig, substream
from diffwm.plotting import emit_comparison_grid, emit_trajectory_plot
from diffwm.training import train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
out = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

cfg = RunConfig.from_dict({
    "seed": 0,
    "schedule": {"T": 100},
    "watermark": {"shape": "square", "size": 4, "gamma": 0.8, "t_A_fraction": 0.5},
    "training": {"steps": steps, "batch_size": 32, "width": 16},
    "data": {"n": 1, "size": 16},
})
data = load_dataset(cfg)
schedule = cfg.build_schedule()
snap = cfg.snapshot_steps()

batches = []
for name, c in (("watermarked", cfg), ("zero watermark", cfg.zero_watermark())):
    spec = c.build_spec(data.shape[1:])
    ckpt = train(data, spec, schedule, c.train_config())
    print(f"{name}: trained {steps} steps, last-100 loss {sum(ckpt.losses[-100:]) / 100:.4f}")
    b = sample(ckpt.denoiser(), schedule, spec, 100, snapshot_steps=snap, rng=substream(c.seed, "sample"))
    batches.append(b)
    # the reference pattern is the configured mark, also for the twin
    ref = cfg.build_pattern(data.shape[1:])
    at = verify(average_snapshot(b.snapshots[spec.t_A]), ref)
    fin = verify(average_snapshot(b.finals), ref)
    print(f"  t_A={spec.t_A}: verdict {at.verdict} ({at.best_similarity:.3g})"
          f"   finals: verdict {fin.verdict} ({fin.best_similarity:.3g})")

print("trajectories:", emit_trajectory_plot(batches, snap + [0], out / "desk_trajectories.png"))
print("finals:", emit_comparison_grid([b.finals for b in batches], out / "desk_finals.png"))
