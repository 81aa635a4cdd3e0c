"""
Integral versus derivative concurrent learning under noise
==========================================================

A small paired Monte Carlo run. Each trial draws gains once and runs both
update laws on the same noisy measurements.
"""

from intcl.harness import LABELS, PAIR, McConfig, run_monte_carlo

# 10 trials keep this under a minute; --full on the CLI runs 200
summary = run_monte_carlo(McConfig(trials=10, seed=0))

cols = ["e1", "e2", "theta1", "theta2", "theta3", "theta4"]
print(f"{'':12s}" + "".join(f"{c:>9s}" for c in cols))
for m in PAIR:
    print(f"{LABELS[m]:12s}" + "".join(f"{v:9.4f}" for v in summary.mean_rms[m]))
print("diverged:", summary.diverged)
