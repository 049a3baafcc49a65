"""Extended Kalman filter with change detection on a stepped load.

The filter smooths the raw window estimates; when the CUSUM statistic
crosses its threshold the process noise is raised for one slot so the
estimate can jump to the new level.

    python demos/03_kalman.py
"""
import numpy as np

from wifiload.bianchi import ProtocolParams
from wifiload.dcf import LoadSchedule, MeasurementMode, run_schedule
from wifiload.kalman import KfConfig, kf_run

params = ProtocolParams()
schedule = LoadSchedule([(4, 1500), (10, 1500), (16, 1500)])
ms = run_schedule(schedule, k_all=100, seed=3, params=params, mode=MeasurementMode.CONDITIONAL)
trace = kf_run(ms, KfConfig(), params)

truth = schedule.true_counts()
est = np.array(trace.n_est)
raw = np.array([m.n_hat for m in ms])
changed = np.flatnonzero(trace.changed)

print("  slot   true    raw      kf")
for t in range(0, schedule.total_slots, 250):
    print(f"{t:6d}  {truth[t]:4d}  {raw[t]:6.2f}  {est[t]:6.2f}")
print()
for start in schedule.boundaries()[1:]:
    after = changed[changed >= start]
    print(f"change at slot {start}: first trigger at {after[0] if after.size else 'never'}")
for n in (4, 10, 16):
    tail = (truth == n)
    tail[np.flatnonzero(tail)[:500]] = False
    print(f"n={n:2d}: RMSE after 500 slots {np.sqrt(np.mean((est[tail] - n) ** 2)):.3f}")
