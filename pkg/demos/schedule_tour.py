"""How the mark's weight f2(t) evolves over the default schedule.

f2 climbs from 0, peaks at 1 (the normalization fixes the peak, not the end
point) and then drifts down slowly. The printout also shows how little of
x'_{t_A} survives to x'_T, which is why the terminal state is still close
to standard normal.

    python3 demos/schedule_tour.py
"""
import numpy as np

from diffwm import make_linear_schedule
from diffwm.schedule import h_coefficient

for T in (100, 1000):
    s = make_linear_schedule(T)
    peak = int(np.argmax(s.f2_table))
    print(f"T={T}: beta {s.beta[1]:.1e}..{s.beta[T]:.1e}  K={s.K:.6f}  f2 peaks at t={peak}")
    for frac in (0.1, 0.25, 0.5, 0.75, 1.0):
        t = max(1, round(frac * T))
        print(f"  t={t:4d}  f2={s.f2_table[t]:.4f}  h={h_coefficient(s, t):.2e}  alpha_bar={s.alpha_bar[t]:.2e}")
    t_A = T // 2
    print(f"  x'_T keeps sqrt(ab_T / ab_tA) = {np.sqrt(s.alpha_bar[T] / s.alpha_bar[t_A]):.4f} of x'_tA")
