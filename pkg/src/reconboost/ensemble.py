"""Additive ensemble of per-modality learners.

``ensemble_score`` is ``sum_k w_k * phi_k(m^k)``; with the default weights
of one this is the plain sum used during training. ``features`` arguments
are always a list with one matrix (or vector) per modality.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, InvalidInputError
from .netcore import MlpNet, forward, init_mlp, load_snapshot, save_snapshot
from .numkit import DTYPE, RandomStream, as_matrix
from .objective import ce_grad_logits, ce_loss, one_hot


@dataclass(eq=False)
class ModalityLearner:
    modality_id: int
    net: MlpNet
    # softmax outputs on the training set, captured at the end of this
    # learner's last boosting stage; consumed by the next stage's MCR term
    frozen_probs: Optional[np.ndarray] = None

    def logits(self, x) -> np.ndarray:
        return forward(self.net, x)[0]


@dataclass(eq=False)
class BoostEnsemble:
    learners: list
    fusion_weights: np.ndarray = None
    round: int = 0
    prev_updated: Optional[int] = None

    def __post_init__(self):
        if not self.learners:
            raise InvalidInputError("ensemble needs at least one learner")
        ids = [l.modality_id for l in self.learners]
        if len(set(ids)) != len(ids):
            raise InvalidInputError(f"duplicate modality ids {ids}")
        if self.fusion_weights is None:
            self.fusion_weights = np.ones(len(self.learners), dtype=DTYPE)
        self.fusion_weights = np.asarray(self.fusion_weights, dtype=DTYPE)
        if self.fusion_weights.shape != (len(self.learners),) or not np.all(np.isfinite(self.fusion_weights)):
            raise InvalidInputError("fusion weights must be M finite values")

    @property
    def num_modalities(self) -> int:
        return len(self.learners)

    @property
    def num_classes(self) -> int:
        return self.learners[0].net.output_dim


def init_ensemble(input_dims: Sequence[int], num_classes: int, hidden: Sequence[int], seed: int) -> BoostEnsemble:
    """One He-initialised MLP per modality, each from its own child stream."""
    root = RandomStream(seed)
    learners = [
        ModalityLearner(k, init_mlp([d, *hidden, num_classes], root.fork("init", k)))
        for k, d in enumerate(input_dims)
    ]
    return BoostEnsemble(learners)


def _check_features(ens: BoostEnsemble, features) -> list:
    if len(features) != ens.num_modalities:
        raise InvalidInputError(f"expected {ens.num_modalities} modality inputs, got {len(features)}")
    mats = [as_matrix(f, f"modality {k}") for k, f in enumerate(features)]
    if len({m.shape[0] for m in mats}) != 1:
        raise InvalidInputError("modality inputs have different sample counts")
    return mats


def _maybe_vector(out: np.ndarray, features) -> np.ndarray:
    return out[0] if np.ndim(features[0]) == 1 else out


def learner_logits(ens: BoostEnsemble, features) -> list:
    mats = _check_features(ens, features)
    return [l.logits(x) for l, x in zip(ens.learners, mats)]


def ensemble_score(ens: BoostEnsemble, features, logits: Optional[list] = None) -> np.ndarray:
    """Weighted sum of learner logits; pass precomputed ``logits`` to skip forwards."""
    phis = learner_logits(ens, features) if logits is None else logits
    out = np.zeros_like(phis[0])
    for w, phi in zip(ens.fusion_weights, phis):
        out = out + w * phi
    return _maybe_vector(out, features)


def leave_one_out_score(ens: BoostEnsemble, features, k: int, logits: Optional[list] = None) -> np.ndarray:
    """``sum_{j != k} w_j * phi_j`` by direct summation (zeros when M = 1)."""
    if not 0 <= k < ens.num_modalities:
        raise InvalidInputError(f"modality index {k} out of range")
    phis = learner_logits(ens, features) if logits is None else logits
    out = np.zeros_like(phis[0])
    for j, (w, phi) in enumerate(zip(ens.fusion_weights, phis)):
        if j != k:
            out = out + w * phi
    return _maybe_vector(out, features)


def leave_one_out_by_subtraction(ens: BoostEnsemble, features, k: int) -> np.ndarray:
    if not 0 <= k < ens.num_modalities:
        raise InvalidInputError(f"modality index {k} out of range")
    phis = learner_logits(ens, features)
    full = ensemble_score(ens, [np.atleast_2d(f) for f in features], logits=phis)
    return _maybe_vector(full - ens.fusion_weights[k] * phis[k], features)


def predict(ens: BoostEnsemble, features) -> np.ndarray:
    """Argmax of the ensemble score; ties go to the lowest class index."""
    return np.argmax(ensemble_score(ens, features), axis=-1)


def fit_fusion_weights(ens: BoostEnsemble, features, labels, steps: int = 200, lr: float = 1e-2) -> np.ndarray:
    """Full-batch gradient descent on the fusion weights only (learners stay frozen)."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidInputError("validation split is empty")
    phis = learner_logits(ens, features)
    y = one_hot(labels, ens.num_classes)
    w = ens.fusion_weights.copy()
    for _ in range(int(steps)):
        score = sum(wk * phi for wk, phi in zip(w, phis))
        g = ce_grad_logits(score, y)
        grad = np.array([np.mean(np.sum(g * phi, axis=1)) for phi in phis])
        w = w - lr * grad
    ens.fusion_weights = w
    return w


def fusion_ce(ens: BoostEnsemble, features, labels) -> float:
    return ce_loss(ensemble_score(ens, features), one_hot(labels, ens.num_classes))


def save_ensemble(ens: BoostEnsemble, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for l in ens.learners:
        save_snapshot(l.net, root / f"learner_{l.modality_id}.bin")
    manifest = {
        "M": ens.num_modalities,
        "modality_ids": [l.modality_id for l in ens.learners],
        "modality_dims": [l.net.input_dim for l in ens.learners],
        "num_classes": ens.num_classes,
        "fusion_weights": [float(w) for w in ens.fusion_weights],
        "round": int(ens.round),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_ensemble(path) -> BoostEnsemble:
    root = Path(path)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
        ids = manifest.get("modality_ids", list(range(manifest["M"])))
        learners = [ModalityLearner(k, load_snapshot(root / f"learner_{k}.bin")) for k in ids]
        dims = manifest["modality_dims"]
    except FileNotFoundError as exc:
        raise FormatError(f"missing file {exc.filename}", root) from None
    except (ValueError, KeyError) as exc:
        raise FormatError(f"invalid ensemble manifest: {exc}", root) from None
    if [l.net.input_dim for l in learners] != list(dims):
        raise FormatError("learner input dims disagree with manifest", root)
    return BoostEnsemble(learners, np.array(manifest["fusion_weights"], dtype=DTYPE), int(manifest["round"]))
