"""Bursty channels hurt more than random loss, and spreading a block helps.

The same mean loss rate is applied as independent losses and as a
Gilbert-Elliott burst process. A longer buffering time lets the sender
spread each block over more seconds, so one burst takes fewer packets
from any single block.
"""

from rqstream import ExperimentConfig, IIDLoss, ge_matching_iid, run_experiment

ge = ge_matching_iid(0.3, mean_burst=5.0)
print("burst channel:", ge.describe())

for name, channel in (("iid", IIDLoss(0.3)), ("burst", ge)):
    for t_b in (5.0, 10.0):
        cfg = ExperimentConfig(code_rate=0.66, buffering_time=t_b, duration=600, channel=channel)
        r = run_experiment(cfg)
        lo, hi = r.success_ci
        print(f"{name:5s} t_b={t_b:4.1f}  success {r.success_rate:.3f} [{lo:.3f}, {hi:.3f}]  "
              f"PER before {r.mean_per_before:.3f} after {r.mean_per_after:.3f}")
