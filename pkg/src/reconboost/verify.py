"""Numerical verification battery for the training signals.

Each check builds seeded random instances, measures a worst-case error and
compares it to a tolerance. ``run_verify`` runs them all; tolerances can be
overridden per check or globally (useful to see real error magnitudes).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import objective as obj
from .ensemble import init_ensemble, learner_logits, leave_one_out_by_subtraction, leave_one_out_score
from .netcore import GradientSet, backward, fd_gradient, forward, init_mlp
from .numkit import RandomStream, softmax

LAMBDAS = (0.0, 0.25, 1.0 / 3.0, 0.5, 1.0)

DEFAULT_TOLERANCES = {
    "lambda1_equivalence": 1e-8,
    "interpolation_identity_fd": 1e-8,
    "interpolation_identity_closed_form": 1e-10,
    "fd_ce": 1e-6,
    "fd_kl": 1e-6,
    "fd_mcr": 1e-6,
    "fd_stage": 1e-6,
    "fd_grs": 1e-6,
    "mcr_identity": 1e-12,
    "grs_shared_gradient": 1e-12,
    "leave_one_out_two_path": 1e-12,
    "kl_zero_at_equality": 1e-12,
    "kl_nonnegative": 1e-12,
}


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    instances: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name:<36s} max_err={self.error:.3e}  tol={self.tolerance:.1e}  n={self.instances}"


def rel_err(a, b) -> float:
    """Max elementwise ``|a - b| / max(1, |b|)``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b)))) if a.size else 0.0


def grad_rel_err(g1: GradientSet, g2: GradientSet) -> float:
    return rel_err(g1.flat(), g2.flat())


def fd_vector(f: Callable[[np.ndarray], float], x, eps: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a vector (or matrix)."""
    x = np.array(x, dtype=float)
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        fp = f(x)
        flat[j] = orig - eps
        fm = f(x)
        flat[j] = orig
        gflat[j] = (fp - fm) / (2 * eps)
    return g


# -- random instances ---------------------------------------------------------

@dataclass
class Instance:
    ens: object
    features: list
    labels: np.ndarray
    y: np.ndarray
    prev_probs: np.ndarray


def random_instance(seed: int, num_modalities: int = 2, num_classes: int = 4, batch: int = 6) -> Instance:
    rs = RandomStream(seed)
    dims = [int(d) for d in rs.integers(2, 6, size=num_modalities)]
    ens = init_ensemble(dims, num_classes, (5, 4), seed)
    # non-zero biases so the check does not sit at a symmetric point
    for l in ens.learners:
        for b in l.net.biases:
            b += rs.fork("bias", l.modality_id, b.size).normal(b.size, 0.0, 0.3)
    feats = [rs.fork("x", k).normal((batch, d)) for k, d in enumerate(dims)]
    labels = rs.fork("y").integers(0, num_classes, size=batch)
    prev = softmax(rs.fork("prev").normal((batch, num_classes), 0.0, 1.5))
    return Instance(ens, feats, labels, obj.one_hot(labels, num_classes), prev)


def _param_grad(net, x, grad_fn) -> GradientSet:
    z, cache = forward(net, x)
    return backward(net, cache, grad_fn(z))


def _fd_check(inst: Instance, k: int, loss_of_logits, grad_of_logits) -> float:
    net = inst.ens.learners[k].net
    x = inst.features[k]
    analytic = _param_grad(net, x, grad_of_logits)
    numeric = fd_gradient(lambda n: loss_of_logits(forward(n, x)[0]), net, 1e-5)
    return grad_rel_err(analytic, numeric)


# -- individual checks ----------------------------------------------------------

def check_lambda1_equivalence(n: int = 20) -> float:
    """Stage-loss parameter gradient at lambda=1, alpha=0 vs CE against the pseudo-label."""
    worst = 0.0
    for s in range(n):
        inst = random_instance(1000 + s, num_modalities=2 + s % 2)
        for k in range(inst.ens.num_modalities):
            net = inst.ens.learners[k].net
            rest = leave_one_out_score(inst.ens, inst.features, k)
            g_stage = _param_grad(net, inst.features[k],
                                  lambda z: obj.stage_grad_logits(z, rest, None, inst.y, 1.0, 0.0))
            target = obj.pseudo_label(rest, inst.y)
            g_boost = _param_grad(net, inst.features[k], lambda z: obj.ce_grad_logits(z, target))
            worst = max(worst, grad_rel_err(g_stage, g_boost))
    return worst


def check_interpolation_fd(n: int = 20) -> float:
    """Finite differences of the stage loss (alpha=0) vs ``(1-lam) rho + lam sigma - y``."""
    worst = 0.0
    for s in range(n):
        rs = RandomStream(2000 + s)
        ycls = int(rs.integers(0, 5))
        z = rs.normal(5, 0.0, 2.0)
        rest = rs.normal(5, 0.0, 2.0)
        y = obj.one_hot(ycls, 5)
        for lam in LAMBDAS:
            fd = fd_vector(lambda v: obj.stage_loss(v, rest, None, y, lam, 0.0).total, z)
            worst = max(worst, rel_err(obj.interpolated_target_grad(z, rest, y, lam), fd))
    return worst


def check_interpolation_closed_form(n: int = 20) -> float:
    """The implemented stage gradient equals the closed form for every lambda."""
    worst = 0.0
    for s in range(n):
        inst = random_instance(3000 + s)
        phis = learner_logits(inst.ens, inst.features)
        rest = leave_one_out_score(inst.ens, inst.features, 0, logits=phis)
        for lam in LAMBDAS:
            g = obj.stage_grad_logits(phis[0], rest, None, inst.y, lam, 0.0)
            worst = max(worst, rel_err(g, obj.interpolated_target_grad(phis[0], rest, inst.y, lam)))
    return worst


def check_fd_ce(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(4000 + s)
        # soft targets exercise the general (sum t) rho - t form
        t = inst.y if s % 2 == 0 else RandomStream(s).normal(inst.y.shape)
        worst = max(worst, _fd_check(inst, 0, lambda z: obj.ce_loss(z, t), lambda z: obj.ce_grad_logits(z, t)))
    return worst


def check_fd_kl(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(5000 + s)
        rest = leave_one_out_score(inst.ens, inst.features, 0)
        worst = max(worst, _fd_check(inst, 0, lambda z: obj.kl_reconcilement(rest, z),
                                     lambda z: obj.kl_grad_logits(rest, z)))
    return worst


def check_fd_mcr(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(6000 + s)
        p = inst.prev_probs
        worst = max(worst, _fd_check(inst, 1, lambda z: obj.mcr_loss(z, p), lambda z: obj.mcr_grad_logits(z, p)))
    return worst


def check_fd_stage(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(7000 + s)
        lam, alpha = LAMBDAS[s % len(LAMBDAS)], (0.0, 0.1, 0.7)[s % 3]
        rest = leave_one_out_score(inst.ens, inst.features, 0)
        p = inst.prev_probs
        worst = max(worst, _fd_check(
            inst, 0,
            lambda z: obj.stage_loss(z, rest, p, inst.y, lam, alpha).total,
            lambda z: obj.stage_grad_logits(z, rest, p, inst.y, lam, alpha),
        ))
    return worst


def check_fd_grs(n: int = 20) -> float:
    """GRS parameter gradients of every learner, each against finite differences."""
    worst = 0.0
    for s in range(n):
        inst = random_instance(8000 + s, num_modalities=2 + s % 2)
        phis = learner_logits(inst.ens, inst.features)
        _, grads = obj.grs_loss(phis, inst.y)
        for k, l in enumerate(inst.ens.learners):
            others = sum(p for j, p in enumerate(phis) if j != k)
            x = inst.features[k]
            z, cache = forward(l.net, x)
            analytic = backward(l.net, cache, grads[k])
            numeric = fd_gradient(lambda nn: obj.ce_loss(forward(nn, x)[0] + others, inst.y), l.net)
            worst = max(worst, grad_rel_err(analytic, numeric))
    return worst


def check_mcr_identity(n: int = 20) -> float:
    """Gradient-difference form equals ``||rho - rho_prev||^2`` for any label."""
    worst = 0.0
    for s in range(n):
        rs = RandomStream(9000 + s)
        z, zp = rs.normal((6, 5), 0.0, 2.0), rs.normal((6, 5), 0.0, 2.0)
        base = obj.mcr_loss(z, softmax(zp))
        for c in range(5):
            y = obj.one_hot(np.full(6, c), 5)
            worst = max(worst, abs(obj.mcr_loss_gradient_form(z, zp, y) - base))
    return worst


def check_grs_shared_gradient(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(10000 + s, num_modalities=2 + s % 3)
        phis = learner_logits(inst.ens, inst.features)
        _, grads = obj.grs_loss(phis, inst.y)
        expected = softmax(sum(phis)) - inst.y
        worst = max(worst, max(float(np.max(np.abs(g - expected))) for g in grads))
    return worst


def check_leave_one_out(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        inst = random_instance(11000 + s, num_modalities=1 + s % 4)
        inst.ens.fusion_weights = RandomStream(s).normal(inst.ens.num_modalities, 1.0, 0.5)
        for k in range(inst.ens.num_modalities):
            direct = leave_one_out_score(inst.ens, inst.features, k)
            sub = leave_one_out_by_subtraction(inst.ens, inst.features, k)
            worst = max(worst, float(np.max(np.abs(direct - sub))))
    return worst


def check_kl_zero(n: int = 20) -> float:
    worst = 0.0
    for s in range(n):
        rs = RandomStream(12000 + s)
        z = rs.normal(6, 0.0, 3.0)
        worst = max(worst, abs(obj.kl_reconcilement(z, z + rs.normal(1, 0.0, 10.0)[0])))
    return worst


def check_kl_nonnegative(n: int = 200) -> float:
    """Largest negative excursion of KL over random pairs (0 when always >= 0)."""
    worst = 0.0
    for s in range(n):
        rs = RandomStream(13000 + s)
        a, b = rs.normal((4, 6), 0.0, 4.0), rs.normal((4, 6), 0.0, 4.0)
        worst = max(worst, float(np.max(-obj.kl_per_sample(a, b))))
    return max(worst, 0.0)


CHECKS = {
    "lambda1_equivalence": check_lambda1_equivalence,
    "interpolation_identity_fd": check_interpolation_fd,
    "interpolation_identity_closed_form": check_interpolation_closed_form,
    "fd_ce": check_fd_ce,
    "fd_kl": check_fd_kl,
    "fd_mcr": check_fd_mcr,
    "fd_stage": check_fd_stage,
    "fd_grs": check_fd_grs,
    "mcr_identity": check_mcr_identity,
    "grs_shared_gradient": check_grs_shared_gradient,
    "leave_one_out_two_path": check_leave_one_out,
    "kl_zero_at_equality": check_kl_zero,
    "kl_nonnegative": check_kl_nonnegative,
}


def run_verify(overrides: Optional[dict] = None, tolerance: Optional[float] = None, only=None) -> list:
    """Run every check (or those named in ``only``) and return their results."""
    tols = dict(DEFAULT_TOLERANCES)
    if tolerance is not None:
        tols = {k: float(tolerance) for k in tols}
    for k, v in (overrides or {}).items():
        if k not in tols:
            raise KeyError(f"unknown check {k!r}")
        tols[k] = float(v)
    results = []
    for name, fn in CHECKS.items():
        if only and name not in only:
            continue
        results.append(CheckResult(name, fn(), tols[name], 200 if name == "kl_nonnegative" else 20))
    return results
