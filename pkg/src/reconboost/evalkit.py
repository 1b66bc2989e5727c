"""Accuracy, linear probes on frozen encoders and modality-competition diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np

from .datagen import split_indices
from .errors import InvalidInputError
from .netcore import backward, encoder_forward, forward, init_mlp, param_digest, sgd_step
from .numkit import RandomStream, as_matrix
from .objective import ce_grad_logits, one_hot


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise InvalidInputError("predictions and labels must be non-empty and the same length")
    return float(np.mean(predictions == labels))


@dataclass
class ProbeConfig:
    test_fraction: float = 0.2
    epochs: int = 200
    lr: float = 0.1
    seed: int = 0
    standardize: bool = True


def linear_probe(features, labels, num_classes: int, cfg: Optional[ProbeConfig] = None) -> float:
    """Held-out accuracy of a fresh affine+softmax classifier on fixed features.

    Features are standardised with statistics from the probe's own training
    split. Training is full-batch SGD.
    """
    cfg = cfg or ProbeConfig()
    x = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.shape[0]:
        raise InvalidInputError("features and labels disagree on sample count")
    if x.shape[0] < 2 * num_classes:
        raise InvalidInputError(f"need at least {2 * num_classes} samples to probe, got {x.shape[0]}")
    tr, te = split_indices(labels, cfg.test_fraction, cfg.seed, stratified=True)
    if tr.size == 0 or te.size == 0:
        raise InvalidInputError("probe split left one side empty")
    xtr, xte = x[tr], x[te]
    if cfg.standardize:
        mu = xtr.mean(axis=0)
        sd = xtr.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        xtr, xte = (xtr - mu) / sd, (xte - mu) / sd
    net = init_mlp([x.shape[1], num_classes], RandomStream(cfg.seed).fork("probe"))
    y = one_hot(labels[tr], num_classes)
    for _ in range(cfg.epochs):
        z, cache = forward(net, xtr)
        sgd_step(net, backward(net, cache, ce_grad_logits(z, y)), cfg.lr)
    return accuracy(np.argmax(forward(net, xte)[0], axis=1), labels[te])


def probe_encoder(net, x, labels, num_classes, cfg: Optional[ProbeConfig] = None) -> float:
    """Probe the encoder of ``net``; raises if probing somehow touched the encoder."""
    before = param_digest(net)
    acc = linear_probe(encoder_forward(net, x), labels, num_classes, cfg)
    if param_digest(net) != before:
        raise RuntimeError("encoder parameters changed during probing")
    return acc


# -- competition diagnostics ------------------------------------------------

def mir(acc_strong: float, acc_weak: float) -> float:
    """Modality imbalance ratio. Not clamped: values below 1 mean the ranking flipped."""
    if acc_weak <= 0:
        raise InvalidInputError("weak-modality accuracy must be positive")
    if acc_strong < 0:
        raise InvalidInputError("accuracies must be non-negative")
    return acc_strong / acc_weak


def dmc(mir_multi: float, mir_uni: float, all_pairs: Optional[Sequence[float]] = None) -> float:
    """Degree of modality competition.

    With ``all_pairs`` (the per-pair DMC values of a three-modality setup)
    the geometric mean of those values is returned instead.
    """
    if all_pairs is not None:
        return dmc_geometric(all_pairs)
    if mir_multi <= 0 or mir_uni <= 0:
        raise InvalidInputError("MIR values must be positive")
    return mir_multi / mir_uni


def dmc_geometric(pair_dmcs: Sequence[float]) -> float:
    vals = np.asarray(pair_dmcs, dtype=float)
    if vals.size == 0 or np.any(vals <= 0):
        raise InvalidInputError("need positive per-pair DMC values")
    return float(np.exp(np.mean(np.log(vals))))


def mi_proxy(acc_multi: float, acc_other: float) -> float:
    """Accuracy the added modality contributes: ``Acc(all) - Acc(other alone)``."""
    for a in (acc_multi, acc_other):
        if not 0.0 <= a <= 100.0:
            raise InvalidInputError(f"accuracy {a} out of range")
    return acc_multi - acc_other


def oriented_pairs(uni_acc: Sequence[float]) -> list:
    """Unordered modality pairs, each ordered (stronger, weaker) by uni-modal accuracy."""
    out = []
    for i, j in combinations(range(len(uni_acc)), 2):
        out.append((i, j) if uni_acc[i] >= uni_acc[j] else (j, i))
    return out


@dataclass
class DiagnosticsReport:
    uni_accuracy: list
    multi_accuracy: list
    overall_accuracy: float
    probe_accuracy: list = field(default_factory=list)
    uni_probe_accuracy: list = field(default_factory=list)
    pairs: list = field(default_factory=list)
    mir_uni: list = field(default_factory=list)
    mir_multi: list = field(default_factory=list)
    dmc: list = field(default_factory=list)
    dmc_geometric: Optional[float] = None
    mi_proxy: list = field(default_factory=list)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["pairs"] = [list(p) for p in self.pairs]
        return d


def build_diagnostics(
    uni_acc: Sequence[float],
    multi_acc: Sequence[float],
    overall: float,
    probe_acc: Sequence[float] = (),
    uni_probe_acc: Sequence[float] = (),
) -> DiagnosticsReport:
    """Pairwise MIR/DMC (oriented by uni-modal strength) and, for two modalities, MI proxies."""
    pairs = oriented_pairs(uni_acc)
    rep = DiagnosticsReport(list(uni_acc), list(multi_acc), overall, list(probe_acc), list(uni_probe_acc), pairs)
    for i, j in pairs:
        mu = mir(uni_acc[i], uni_acc[j])
        mm = mir(multi_acc[i], multi_acc[j])
        rep.mir_uni.append(mu)
        rep.mir_multi.append(mm)
        rep.dmc.append(dmc(mm, mu))
    if len(uni_acc) == 3:
        rep.dmc_geometric = dmc_geometric(rep.dmc)
    if len(uni_acc) == 2:
        rep.mi_proxy = [mi_proxy(overall, uni_acc[1]), mi_proxy(overall, uni_acc[0])]
    return rep


def diagnostics_from_dict(d: dict) -> DiagnosticsReport:
    """Recompute diagnostics from the raw accuracies stored in ``d``."""
    return build_diagnostics(
        d["uni_accuracy"], d["multi_accuracy"], d["overall_accuracy"],
        d.get("probe_accuracy", []), d.get("uni_probe_accuracy", []),
    )
