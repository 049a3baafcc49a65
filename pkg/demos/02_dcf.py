"""Slot-level CSMA/CA simulation against the analytical model.

A tagged station's collision rate is compared with h(n), then a short load
schedule is observed in windows of 100 sub-frames to show how noisy a
single-window station count is.

    python demos/02_dcf.py
"""
import numpy as np

from wifiload.bianchi import ProtocolParams, collision_of_users
from wifiload.dcf import DcfSimulator, LoadSchedule, MeasurementMode, run_schedule

params = ProtocolParams()

print("tagged collision rate over 200000 sub-frames")
for n in (5, 10, 20, 30):
    sim = DcfSimulator(n, params, seed=n)
    sim.count_window(200_000)
    print(f"  n={n:2d}  simulated {sim.tagged_collision_rate:.4f}  model {collision_of_users(n, params):.4f}")

schedule = LoadSchedule([(5, 300), (15, 300), (25, 300)])
ms = run_schedule(schedule, k_all=100, seed=1, params=params, mode=MeasurementMode.CONDITIONAL)
n_hat = np.array([m.n_hat for m in ms])
truth = schedule.true_counts()
print()
print("raw per-window estimate n_hat (K_all = 100 sub-frames)")
for n in (5, 15, 25):
    sel = n_hat[truth == n]
    print(f"  n={n:2d}  mean {sel.mean():6.2f}  std {sel.std():5.2f}")
