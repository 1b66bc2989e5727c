"""Gaussian noise on half of the weak modality.

Corrupts 50% of the weak view with N(0, s2) noise for increasing variance
s2 and compares ReconBoost with concat training. One seed and a short
schedule, so numbers are noisier than the acceptance run.
"""
import math
from dataclasses import replace

from reconboost.datagen import canonical_dominance_spec, corrupt_gaussian, generate_synthetic, split
from reconboost.experiment import load_canonical
from reconboost.trainer import train_joint_concat, train_reconboost

cfg, settings, _ = load_canonical(env={})
cfg = replace(cfg, cycles=10)
clean = generate_synthetic(canonical_dominance_spec(1500), 0)

print(" s2    reconboost  concat")
for var in (0.0, 0.5, 1.0, 2.0):
    data = corrupt_gaussian(clean, 1, 0.5, math.sqrt(var), seed=0)
    train, test = split(data, settings.test_fraction, 0)
    rec = train_reconboost(train, cfg, test)[1].final["test_acc"]
    cat = train_joint_concat(train, cfg, test)[1].final["test_acc"]
    print(f" {var:<4}  {rec:.4f}      {cat:.4f}")
