"""Both estimators on the same measurement stream, plus per-step cost.

Runs the small-n preset once, prints per-segment metrics side by side and
then times one filter step against one network step at n = 25.

    python demos/05_compare_timing.py
"""
from wifiload import harness
from wifiload.dcf import LoadSchedule
from wifiload.harness import ExperimentConfig

cfg = ExperimentConfig(schedule=LoadSchedule(harness.PRESETS["small-n"]), seed=2)
trace, metrics = harness.run_experiment(cfg)

print("seg  n    rmse kf  rmse nn   conv kf  conv nn   tail trig kf/nn")
for seg in metrics:
    print(
        f"{seg.index:3d} {seg.n_true:2d}   {seg.rmse['kf']:7.3f}  {seg.rmse['nn']:7.3f}"
        f"   {str(seg.convergence_slots['kf']):>7}  {str(seg.convergence_slots['nn']):>7}"
        f"   {seg.tail_triggers['kf']}/{seg.tail_triggers['nn']}"
    )

report = harness.bench_timing(cfg, iters=2000, n=25)
print()
print(f"kf_step {report.kf_mean_us:.1f} us, nn_step {report.nn_mean_us:.1f} us, ratio {report.ratio:.2f}")
