"""Online unsupervised MLP estimator.

The network sees its own previous output and the current raw estimate and
is trained one Adam step per slot on a loss that balances fidelity to the
measurement against smoothness. A CUSUM on that loss picks the regime.

    python demos/04_nn.py
"""
import numpy as np

from wifiload.bianchi import ProtocolParams
from wifiload.dcf import LoadSchedule, MeasurementMode, run_schedule
from wifiload.nn import NnConfig, Regime, nn_run

params = ProtocolParams()
schedule = LoadSchedule([(3, 1500), (8, 1500), (12, 1500)])
ms = run_schedule(schedule, k_all=100, seed=5, params=params, mode=MeasurementMode.CONDITIONAL)
cfg = NnConfig(init_seed=5)
steps = nn_run(ms, cfg)

truth = schedule.true_counts()
est = np.array([s.estimate for s in steps])
changed = np.array([s.regime is Regime.CHANGED for s in steps])

print("  slot   true      nn    loss   regime")
for t in range(0, schedule.total_slots, 250):
    s = steps[t]
    print(f"{t:6d}  {truth[t]:4d}  {est[t]:6.2f}  {s.loss:6.3f}   {s.regime.value}")
print()
print(f"slots spent in the changed regime: {changed.sum()} of {len(steps)} (warm-up {cfg.warmup})")
for n in (3, 8, 12):
    sel = truth == n
    print(f"n={n:2d}: mean {est[sel].mean():.2f}, RMSE {np.sqrt(np.mean((est[sel] - n) ** 2)):.3f}")
