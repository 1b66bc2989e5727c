"""Modality competition on the canonical dominance benchmark.

Trains ReconBoost, joint concat training and the two uni-modal baselines
on the same split, then prints the competition diagnostics side by side.
Shrunk (fewer samples and cycles) so it finishes in well under a minute.
"""
from dataclasses import replace

from reconboost.datagen import canonical_dominance_spec, generate_synthetic, split
from reconboost.evalkit import ProbeConfig, build_diagnostics, probe_encoder
from reconboost.experiment import load_canonical
from reconboost.trainer import train_joint_concat, train_reconboost, train_unimodal

cfg, settings, _ = load_canonical(env={})
cfg = replace(cfg, cycles=10)
train, test = split(generate_synthetic(canonical_dominance_spec(1500), 0), settings.test_fraction, 0)

ens, rec_rep = train_reconboost(train, cfg, test)
cm, cat_rep = train_joint_concat(train, cfg, test)
unis = [train_unimodal(train, k, cfg, test) for k in range(2)]
uni_acc = [r.final["test_acc"] for _, r in unis]
print("uni-modal test accuracy:", [round(a, 4) for a in uni_acc])

probe = lambda net, k: probe_encoder(net, test.features[k], test.labels, train.num_classes, ProbeConfig(seed=0))
for name, rep, nets in (("reconboost", rec_rep, [l.net for l in ens.learners]), ("concat", cat_rep, cm.nets)):
    d = build_diagnostics(uni_acc, rep.final["test_acc_modality"], rep.final["test_acc"])
    print(f"\n{name}: overall {d.overall_accuracy:.4f}")
    print(f"  per-modality accuracy {[round(a, 4) for a in d.multi_accuracy]}")
    print(f"  MIR {d.mir_multi[0]:.3f} (uni {d.mir_uni[0]:.3f}), DMC {d.dmc[0]:.3f}")
    print(f"  weak-encoder probe {probe(nets[1], 1):.4f} vs uni-modal {probe(unis[1][0].net, 1):.4f}")

# the modality sequence alternates because selection is round robin
print("\nfirst stages:", rec_rep.modality_sequence[:8])
