"""Loss terms and their logit gradients.

Every function accepts either a single logit vector of length ``Y`` or an
``N x Y`` batch (one sample per row). Losses return the batch mean;
``*_grad_logits`` return per-sample rows, i.e. the gradient of each
sample's own loss. :func:`reconboost.netcore.backward` does the averaging.

Notation used below: ``rho = softmax(learner logits)``,
``sigma = softmax(leave-one-out ensemble logits)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError
from .numkit import DTYPE, log_softmax, softmax


def _pair(a, b, names=("logits", "target")):
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.shape[-1:] != b.shape[-1:] or a.ndim > 2 or b.ndim > 2:
        raise InvalidInputError(f"{names[0]} shape {a.shape} incompatible with {names[1]} shape {b.shape}")
    if a.ndim == 2 and b.ndim == 2 and a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"{names[0]} has {a.shape[0]} rows, {names[1]} has {b.shape[0]}")
    return a, b


def _mean(per_sample: np.ndarray) -> float:
    return float(np.mean(per_sample))


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidInputError(f"labels must lie in [0, {num_classes})")
    out = np.zeros(labels.shape + (num_classes,), dtype=DTYPE)
    np.put_along_axis(out, labels[..., None], 1.0, axis=-1)
    return out


@dataclass
class StageLossBreakdown:
    agreement: float
    kl_reconcilement: float
    mcr: float
    total: float
    lam: float
    alpha: float

    @classmethod
    def combine(cls, agreement, kl, mcr, lam, alpha):
        return cls(agreement, kl, mcr, agreement - lam * kl + alpha * mcr, lam, alpha)

    def as_dict(self) -> dict:
        return asdict(self)


# -- cross-entropy ---------------------------------------------------------

def ce_loss(logits, target) -> float:
    """``-sum_j t_j log rho_j``; ``target`` may be one-hot or any real vector."""
    z, t = _pair(logits, target)
    return _mean(-np.sum(t * log_softmax(z), axis=-1))


def ce_grad_logits(logits, target) -> np.ndarray:
    """``(sum t) * rho - t``, which reduces to ``rho - y`` for one-hot targets."""
    z, t = _pair(logits, target)
    return np.sum(t, axis=-1, keepdims=True) * softmax(z) - t


def pseudo_label(ensemble_logits, y) -> np.ndarray:
    """Negative functional gradient of CE at the ensemble score: ``y - sigma``."""
    z, y = _pair(ensemble_logits, y, ("ensemble_logits", "y"))
    return y - softmax(z)


# -- KL reconcilement ------------------------------------------------------

def kl_per_sample(ensemble_rest_logits, learner_logits) -> np.ndarray:
    rest, z = _pair(ensemble_rest_logits, learner_logits, ("ensemble_rest_logits", "learner_logits"))
    log_sigma = log_softmax(rest)
    return np.sum(np.exp(log_sigma) * (log_sigma - log_softmax(z)), axis=-1)


def kl_reconcilement(ensemble_rest_logits, learner_logits) -> float:
    """``KL(sigma || rho)`` with sigma held constant."""
    return _mean(kl_per_sample(ensemble_rest_logits, learner_logits))


def kl_grad_logits(ensemble_rest_logits, learner_logits) -> np.ndarray:
    rest, z = _pair(ensemble_rest_logits, learner_logits, ("ensemble_rest_logits", "learner_logits"))
    return softmax(z) - softmax(rest)


# -- memory consolidation ----------------------------------------------------

def mcr_loss(learner_logits, prev_learner_probs, y=None) -> float:
    """Squared distance between the current and previous learners' CE gradients.

    With one-hot ``y`` the label cancels and this is ``||rho - rho_prev||^2``,
    so ``y`` is accepted only for signature symmetry.
    """
    z, p = _pair(learner_logits, prev_learner_probs, ("learner_logits", "prev_learner_probs"))
    if y is not None:
        _pair(z, y, ("learner_logits", "y"))
    return _mean(np.sum((softmax(z) - p) ** 2, axis=-1))


def mcr_loss_gradient_form(learner_logits, prev_learner_logits, y) -> float:
    """Same quantity evaluated literally as ``||grad_CE(phi_k) - grad_CE(phi_prev)||^2``."""
    diff = ce_grad_logits(learner_logits, y) - ce_grad_logits(prev_learner_logits, y)
    return _mean(np.sum(diff ** 2, axis=-1))


def mcr_grad_logits(learner_logits, prev_learner_probs) -> np.ndarray:
    z, p = _pair(learner_logits, prev_learner_probs, ("learner_logits", "prev_learner_probs"))
    rho = softmax(z)
    g = 2.0 * (rho - p)
    # softmax Jacobian is symmetric: J g = rho * g - rho (rho . g)
    return rho * g - rho * np.sum(rho * g, axis=-1, keepdims=True)


# -- stage objective ---------------------------------------------------------

def _check_coeffs(lam, alpha):
    if lam < 0 or alpha < 0:
        raise InvalidInputError(f"lambda and alpha must be >= 0, got {lam}, {alpha}")


def stage_loss(learner_logits, ensemble_rest_logits, prev_learner_probs, y, lam, alpha) -> StageLossBreakdown:
    """CE(phi_k, y) - lam * KL(sigma || rho) + alpha * MCR, each a batch mean."""
    _check_coeffs(lam, alpha)
    _pair(learner_logits, ensemble_rest_logits, ("learner_logits", "ensemble_rest_logits"))
    agreement = ce_loss(learner_logits, y)
    kl = kl_reconcilement(ensemble_rest_logits, learner_logits)
    mcr = 0.0 if prev_learner_probs is None else mcr_loss(learner_logits, prev_learner_probs)
    return StageLossBreakdown.combine(agreement, kl, mcr, lam, alpha)


def stage_grad_logits(learner_logits, ensemble_rest_logits, prev_learner_probs, y, lam, alpha) -> np.ndarray:
    """Per-sample logit gradient of :func:`stage_loss`.

    Without the MCR term this is ``(1 - lam) * rho + lam * sigma - y``.
    """
    _check_coeffs(lam, alpha)
    g = ce_grad_logits(learner_logits, y) - lam * kl_grad_logits(ensemble_rest_logits, learner_logits)
    if prev_learner_probs is not None and alpha != 0.0:
        g = g + alpha * mcr_grad_logits(learner_logits, prev_learner_probs)
    return g


def interpolated_target_grad(learner_logits, ensemble_rest_logits, y, lam) -> np.ndarray:
    return (1.0 - lam) * softmax(learner_logits) + lam * softmax(ensemble_rest_logits) - np.asarray(y, dtype=DTYPE)


# -- global rectification ----------------------------------------------------

def grs_loss(all_learner_logits: Sequence, y) -> tuple[float, list]:
    """CE of the summed learner logits, plus each learner's logit gradient.

    All returned gradients are the same array, ``softmax(sum phi) - y``:
    every learner sees one shared score gradient.
    """
    if len(all_learner_logits) == 0:
        raise InvalidInputError("grs_loss needs at least one learner")
    first = np.asarray(all_learner_logits[0], dtype=DTYPE)
    total = np.zeros_like(first)
    for z in all_learner_logits:
        z = np.asarray(z, dtype=DTYPE)
        if z.shape != first.shape:
            raise InvalidInputError("learner logits have inconsistent shapes")
        total = total + z
    loss = ce_loss(total, y)
    shared = ce_grad_logits(total, y)
    return loss, [shared] * len(all_learner_logits)


def total_objective(stage_breakdowns: Sequence[StageLossBreakdown], grs_values: Sequence[float]) -> float:
    """Overall cycle objective: summed stage objectives plus summed GRS losses."""
    return float(sum(b.total for b in stage_breakdowns) + sum(grs_values))
