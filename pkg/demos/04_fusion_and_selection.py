"""Decision-weight fusion, selection strategies and the lambda sweep.

NA fusion sums the learners' logits; LW fusion fits one weight per learner
on a held-out slice. Selection picks which modality each stage trains:
round robin, S1 or S2. Lambda trades agreement against reconcilement.
"""
from dataclasses import replace

from reconboost.datagen import canonical_dominance_spec, generate_synthetic, split
from reconboost.ensemble import fit_fusion_weights
from reconboost.experiment import load_canonical
from reconboost.trainer import evaluate_ensemble, train_reconboost

cfg, settings, _ = load_canonical(env={})
cfg = replace(cfg, cycles=6)
train, test = split(generate_synthetic(canonical_dominance_spec(1500), 0), settings.test_fraction, 0)

fit, held = split(train, 0.1, 0)
ens, rep = train_reconboost(fit, cfg, test)
print(f"NA fusion: {rep.final['test_acc']:.4f}")
w = fit_fusion_weights(ens, held.features, held.labels)
print(f"LW fusion: {evaluate_ensemble(ens, test)[0]:.4f}  weights {w.round(3).tolist()}")

# S1 follows the lowest-loss modality, so here it keeps picking the strong
# view; S2 keeps picking the weak one
for sel in ("round_robin", "s1", "s2"):
    _, r = train_reconboost(train, replace(cfg, selection=sel), test)
    print(f"selection {sel:<11} acc {r.final['test_acc']:.4f}  sequence {r.modality_sequence[:8]}")

for lam in (0.0, 0.25, 1 / 3, 0.5, 0.75):
    _, r = train_reconboost(train, replace(cfg, lam=lam), test)
    print(f"lambda {lam:.3f}  acc {r.final['test_acc']:.4f}")
