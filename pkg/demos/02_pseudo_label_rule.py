"""Which target samples become pseudo-labels.

A sample is accepted when the model is confident (p_m >= tau_m) and the
discriminator either takes it for a source sample with confidence >= tau_hi,
or recognises it as target but only weakly (confidence <= tau_lo).

Run with ``python demos/02_pseudo_label_rule.py``.
"""

import numpy as np

from mdan.selftrain import SelfTrainConfig, acceptance

cfg = SelfTrainConfig()
d_values = np.round(np.arange(0.05, 1.0, 0.05), 2)
pm_values = np.round(np.arange(0.5, 1.01, 0.1), 1)

print(f"tau_hi={cfg.tau_hi} tau_lo={cfg.tau_lo} tau_m={cfg.tau_m}")
print("rows: model confidence p_m; columns: discriminator output d (1 = source)")
print("p_m \\ d " + " ".join(f"{d:4.2f}" for d in d_values))
for pm in pm_values:
    marks = ["  A " if acceptance(pm, d, cfg)[0] else "  . " for d in d_values]
    print(f"  {pm:4.1f}  " + " ".join(marks))

for pm, d in [(0.95, 0.9), (0.85, 0.45), (0.9, 0.6), (0.9, 0.2), (0.5, 0.9)]:
    ok, why = acceptance(pm, d, cfg)
    print(f"p_m={pm:.2f} d={d:.2f}: {'accepted' if ok else 'rejected (' + why + ')'}")
