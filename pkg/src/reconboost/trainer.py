"""Alternating-boosting training loop, global rectification and the baselines.

Epochs are shuffled minibatch passes. The shuffle for epoch ``e`` of a run
depends only on ``(seed, e)``, where ``e`` counts every epoch the run has
taken so far (boost and rectification alike), so two methods that take the
same number of epochs see the same batch order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import objective as obj
from .datagen import MultiModalDataset
from .ensemble import BoostEnsemble, ModalityLearner, init_ensemble, leave_one_out_score, learner_logits
from .errors import InvalidInputError, NumericalFailureError
from .netcore import MlpNet, backward, encoder_forward, forward, init_mlp, sgd_step
from .numkit import RandomStream, softmax

SELECTIONS = ("round_robin", "s1", "s2")


@dataclass
class TrainConfig:
    lam: float = 1.0 / 3.0
    alpha: float = 0.1
    stage_lr: float = 1e-2
    grs_lr: float = 1e-2
    t1: int = 4
    t2: int = 4
    cycles: int = 30
    batch_size: int = 64
    seed: int = 0
    selection: str = "round_robin"
    clip_norm: Optional[float] = None
    early_stop_patience: Optional[int] = None
    hidden: tuple = (64, 64)
    # epochs for the uni-modal and concat baselines; None matches the
    # ReconBoost data budget of cycles * M * (t1 + t2)
    baseline_epochs: Optional[int] = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        self.selection = self.selection.lower().replace("-", "_")
        self.validate()

    def validate(self) -> None:
        if self.stage_lr <= 0 or self.grs_lr <= 0:
            raise InvalidInputError("stage_lr and grs_lr must be positive")
        if self.t1 < 0 or self.t2 < 0:
            raise InvalidInputError("t1 and t2 must be >= 0")
        if self.cycles < 1 or self.batch_size < 1:
            raise InvalidInputError("cycles and batch_size must be >= 1")
        if self.lam < 0 or self.alpha < 0:
            raise InvalidInputError("lam and alpha must be >= 0")
        if self.selection not in SELECTIONS:
            raise InvalidInputError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise InvalidInputError("clip_norm must be positive")
        if self.early_stop_patience is not None and self.early_stop_patience < 1:
            raise InvalidInputError("early_stop_patience must be >= 1")

    def epochs_for_baseline(self, num_modalities: int) -> int:
        if self.baseline_epochs is not None:
            return int(self.baseline_epochs)
        return self.cycles * num_modalities * (self.t1 + self.t2)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


@dataclass
class StageRecord:
    kind: str  # "boost", "grs", "unimodal" or "concat"
    cycle: int
    round: int
    modality: int  # -1 when every learner is updated
    batch_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    epoch_train_acc: list = field(default_factory=list)
    epoch_test_acc: list = field(default_factory=list)
    train_acc: Optional[float] = None
    test_acc: Optional[float] = None
    train_acc_modality: list = field(default_factory=list)
    test_acc_modality: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)  # per epoch, one value per modality

    def as_dict(self) -> dict:
        d = asdict(self)
        d.pop("batch_losses")
        d["num_batches"] = len(self.batch_losses)
        return d


@dataclass
class TrainingReport:
    method: str
    records: list = field(default_factory=list)
    modality_sequence: list = field(default_factory=list)
    stopped_early: bool = False
    final: dict = field(default_factory=dict)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list:
    perm = RandomStream(seed).fork("shuffle", epoch).permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def _mean_breakdown(items: Sequence[obj.StageLossBreakdown]) -> obj.StageLossBreakdown:
    if not items:
        return None
    return obj.StageLossBreakdown(
        float(np.mean([b.agreement for b in items])),
        float(np.mean([b.kl_reconcilement for b in items])),
        float(np.mean([b.mcr for b in items])),
        float(np.mean([b.total for b in items])),
        items[0].lam,
        items[0].alpha,
    )


def _guard(value, where: dict) -> None:
    """Raise NumericalFailureError if ``value`` (a loss or a logit array) is not all finite."""
    if not np.all(np.isfinite(value)):
        raise NumericalFailureError(f"non-finite values in {where.get('stage', 'training')}", where)


def _accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(scores, axis=1) == labels))


def evaluate_ensemble(ens: BoostEnsemble, data: MultiModalDataset) -> tuple[float, list]:
    """Overall accuracy of the summed score plus each learner's own accuracy."""
    phis = learner_logits(ens, data.features)
    total = sum(w * p for w, p in zip(ens.fusion_weights, phis))
    return _accuracy(total, data.labels), [_accuracy(p, data.labels) for p in phis]


def _finish(record: StageRecord, ens: BoostEnsemble, train, test) -> StageRecord:
    record.train_acc, record.train_acc_modality = evaluate_ensemble(ens, train)
    if test is not None:
        record.test_acc, record.test_acc_modality = evaluate_ensemble(ens, test)
    return record


def _epoch_eval(record: StageRecord, ens, train, test) -> None:
    record.epoch_train_acc.append(evaluate_ensemble(ens, train)[0])
    if test is not None:
        record.epoch_test_acc.append(evaluate_ensemble(ens, test)[0])


def run_boost_stage(
    ens: BoostEnsemble,
    k: int,
    train: MultiModalDataset,
    cfg: TrainConfig,
    *,
    epoch_start: int = 0,
    test: Optional[MultiModalDataset] = None,
    cycle: int = 0,
    use_mcr: bool = True,
) -> StageRecord:
    """Train learner ``k`` for ``cfg.t1`` epochs with every other learner frozen."""
    if not 0 <= k < ens.num_modalities:
        raise InvalidInputError(f"modality index {k} out of range")
    record = StageRecord("boost", cycle, ens.round, k)
    if cfg.t1 == 0:
        return _finish(record, ens, train, test)
    learner = ens.learners[k]
    net = learner.net
    x = train.features[k]
    y = obj.one_hot(train.labels, ens.num_classes)
    # the rest of the ensemble is frozen for the whole stage
    rest = leave_one_out_score(ens, train.features, k)
    prev_probs = None
    if use_mcr and ens.prev_updated is not None:
        prev_probs = ens.learners[ens.prev_updated].frozen_probs
    for e in range(cfg.t1):
        epoch_items = []
        for b, idx in enumerate(epoch_batches(train.num_samples, cfg.batch_size, cfg.seed, epoch_start + e)):
            where = {"stage": "boost", "cycle": cycle, "round": ens.round, "modality": k, "epoch": e, "batch": b}
            z, cache = forward(net, x[idx])
            _guard(z, where)
            p = None if prev_probs is None else prev_probs[idx]
            br = obj.stage_loss(z, rest[idx], p, y[idx], cfg.lam, cfg.alpha)
            _guard(br.total, where)
            g = obj.stage_grad_logits(z, rest[idx], p, y[idx], cfg.lam, cfg.alpha)
            sgd_step(net, backward(net, cache, g), cfg.stage_lr, cfg.clip_norm)
            epoch_items.append(br)
        record.batch_losses.extend(epoch_items)
        record.epoch_losses.append(_mean_breakdown(epoch_items))
        _epoch_eval(record, ens, train, test)
    learner.frozen_probs = softmax(forward(net, x)[0])
    ens.prev_updated = k
    return _finish(record, ens, train, test)


def joint_step(nets: Sequence[MlpNet], grads: Sequence, lr: float, clip_norm: Optional[float]) -> None:
    """One SGD step on several nets treated as a single parameter vector.

    Clipping uses the global norm over all of them, so the relative step
    sizes of the branches are the unclipped ones.
    """
    scale = 1.0
    if clip_norm is not None:
        total = math.sqrt(sum(g.norm() ** 2 for g in grads))
        if total > clip_norm:
            scale = clip_norm / total
    for n, g in zip(nets, grads):
        sgd_step(n, g, lr * scale)


def run_grs_stage(
    ens: BoostEnsemble,
    train: MultiModalDataset,
    cfg: TrainConfig,
    *,
    epoch_start: int = 0,
    test: Optional[MultiModalDataset] = None,
    cycle: int = 0,
) -> StageRecord:
    """``cfg.t2`` epochs of joint SGD on the CE of the summed learner logits."""
    record = StageRecord("grs", cycle, ens.round, -1)
    if cfg.t2 == 0:
        return _finish(record, ens, train, test)
    y = obj.one_hot(train.labels, ens.num_classes)
    for e in range(cfg.t2):
        epoch_items = []
        for b, idx in enumerate(epoch_batches(train.num_samples, cfg.batch_size, cfg.seed, epoch_start + e)):
            where = {"stage": "grs", "cycle": cycle, "round": ens.round, "epoch": e, "batch": b}
            outs = [forward(l.net, f[idx]) for l, f in zip(ens.learners, train.features)]
            _guard([z for z, _ in outs], where)
            loss, grads = obj.grs_loss([z for z, _ in outs], y[idx])
            _guard(loss, where)
            nets = [l.net for l in ens.learners]
            joint_step(nets, [backward(n, c, g) for n, (_, c), g in zip(nets, outs, grads)], cfg.grs_lr, cfg.clip_norm)
            epoch_items.append(obj.StageLossBreakdown.combine(loss, 0.0, 0.0, 0.0, 0.0))
        record.batch_losses.extend(epoch_items)
        record.epoch_losses.append(_mean_breakdown(epoch_items))
        _epoch_eval(record, ens, train, test)
    return _finish(record, ens, train, test)


def select_next_modality(strategy: str, losses: Sequence[float], round_index: int) -> int:
    """Round robin, S1 (lowest current loss) or S2 (highest); ties go to the lowest index."""
    losses = np.asarray(losses, dtype=float)
    if losses.size == 0:
        raise InvalidInputError("loss vector is empty")
    strategy = strategy.lower().replace("-", "_")
    if strategy == "round_robin":
        return int(round_index % losses.size)
    if strategy == "s1":
        return int(np.argmin(losses))
    if strategy == "s2":
        return int(np.argmax(losses))
    raise InvalidInputError(f"unknown selection strategy {strategy!r}")


def modality_losses(ens: BoostEnsemble, data: MultiModalDataset) -> list:
    y = obj.one_hot(data.labels, ens.num_classes)
    return [obj.ce_loss(z, y) for z in learner_logits(ens, data.features)]


def train_reconboost(
    train: MultiModalDataset,
    cfg: TrainConfig,
    test: Optional[MultiModalDataset] = None,
    ens: Optional[BoostEnsemble] = None,
) -> tuple[BoostEnsemble, TrainingReport]:
    """Run ``cycles * M`` rounds of (boost one modality, then rectify all).

    Early stopping, when enabled, watches accuracy on ``test``.
    """
    if train.num_samples == 0:
        raise InvalidInputError("training set is empty")
    m = train.num_modalities
    if ens is None:
        ens = init_ensemble(train.dims, train.num_classes, cfg.hidden, cfg.seed)
    report = TrainingReport("reconboost")
    epoch = 0
    best, since_best = -1.0, 0
    for cycle in range(cfg.cycles):
        for r in range(m):
            s = cycle * m + r
            ens.round = s
            losses = modality_losses(ens, train) if cfg.selection != "round_robin" else [0.0] * m
            k = select_next_modality(cfg.selection, losses, s)
            report.modality_sequence.append(k)
            report.records.append(run_boost_stage(ens, k, train, cfg, epoch_start=epoch, test=test, cycle=cycle))
            epoch += cfg.t1
            report.records.append(run_grs_stage(ens, train, cfg, epoch_start=epoch, test=test, cycle=cycle))
            epoch += cfg.t2
            if cfg.early_stop_patience is not None and test is not None:
                acc = report.records[-1].test_acc
                if acc > best:
                    best, since_best = acc, 0
                else:
                    since_best += 1
                    if since_best >= cfg.early_stop_patience:
                        report.stopped_early = True
                        break
        if report.stopped_early:
            break
    ens.round = len(report.modality_sequence)
    report.final = final_metrics_ensemble(ens, train, test)
    return ens, report


def final_metrics_ensemble(ens: BoostEnsemble, train, test) -> dict:
    out = {}
    out["train_acc"], out["train_acc_modality"] = evaluate_ensemble(ens, train)
    if test is not None:
        out["test_acc"], out["test_acc_modality"] = evaluate_ensemble(ens, test)
    return out


# -- baselines -------------------------------------------------------------

def train_unimodal(
    train: MultiModalDataset,
    k: int,
    cfg: TrainConfig,
    test: Optional[MultiModalDataset] = None,
    epochs: Optional[int] = None,
) -> tuple[ModalityLearner, TrainingReport]:
    """Plain minibatch SGD on CE using modality ``k`` alone."""
    if not 0 <= k < train.num_modalities:
        raise InvalidInputError(f"modality index {k} out of range")
    epochs = cfg.epochs_for_baseline(train.num_modalities) if epochs is None else epochs
    net = init_mlp([train.dims[k], *cfg.hidden, train.num_classes], RandomStream(cfg.seed).fork("init", k))
    learner = ModalityLearner(k, net)
    view = BoostEnsemble([learner])
    tr, te = train.select_modalities([k]), None if test is None else test.select_modalities([k])
    y = obj.one_hot(train.labels, train.num_classes)
    x = train.features[k]
    record = StageRecord("unimodal", 0, 0, k)
    for e in range(epochs):
        items = []
        for b, idx in enumerate(epoch_batches(train.num_samples, cfg.batch_size, cfg.seed, e)):
            where = {"stage": "unimodal", "modality": k, "epoch": e, "batch": b}
            z, cache = forward(net, x[idx])
            _guard(z, where)
            loss = obj.ce_loss(z, y[idx])
            _guard(loss, where)
            sgd_step(net, backward(net, cache, obj.ce_grad_logits(z, y[idx])), cfg.stage_lr, cfg.clip_norm)
            items.append(obj.StageLossBreakdown.combine(loss, 0.0, 0.0, 0.0, 0.0))
        record.batch_losses.extend(items)
        record.epoch_losses.append(_mean_breakdown(items))
        _epoch_eval(record, view, tr, te)
    _finish(record, view, tr, te)
    report = TrainingReport(f"unimodal:{k}", [record], [k])
    report.final = final_metrics_ensemble(view, tr, te)
    return learner, report


@dataclass(eq=False)
class ConcatFusionModel:
    """Per-modality encoders feeding one linear head over their concatenation.

    The head is stored split into per-modality blocks as the last layer of
    each modality's net; only the first block keeps a bias, so the sum of
    the per-net outputs equals ``W [F_1 : ... : F_M] + b``.
    """

    nets: list

    @property
    def num_modalities(self) -> int:
        return len(self.nets)

    def logits(self, features) -> np.ndarray:
        return sum(forward(n, f)[0] for n, f in zip(self.nets, features))

    def modality_logits(self, features) -> list:
        """Each modality's head block applied to its own encoder output."""
        return [encoder_forward(n, f) @ n.weights[-1] for n, f in zip(self.nets, features)]

    def encoder_features(self, k: int, x) -> np.ndarray:
        return encoder_forward(self.nets[k], x)


def init_concat(input_dims: Sequence[int], num_classes: int, hidden: Sequence[int], seed: int) -> ConcatFusionModel:
    root = RandomStream(seed)
    nets = [init_mlp([d, *hidden, num_classes], root.fork("init", k)) for k, d in enumerate(input_dims)]
    # rescale each head block from He(fan_in = h_k) to He(fan_in = sum h_k)
    fan_total = sum(n.feature_dim for n in nets)
    for n in nets:
        n.weights[-1] *= math.sqrt(n.feature_dim / fan_total)
    return ConcatFusionModel(nets)


def evaluate_concat(model: ConcatFusionModel, data: MultiModalDataset) -> tuple[float, list]:
    overall = _accuracy(model.logits(data.features), data.labels)
    return overall, [_accuracy(z, data.labels) for z in model.modality_logits(data.features)]


def train_joint_concat(
    train: MultiModalDataset,
    cfg: TrainConfig,
    test: Optional[MultiModalDataset] = None,
    epochs: Optional[int] = None,
) -> tuple[ConcatFusionModel, TrainingReport]:
    """Joint SGD on CE of the concat-fusion predictor.

    Records, per epoch, the mean parameter-gradient norm of every modality
    branch; all branches are driven by the same score gradient.
    """
    if train.num_samples == 0:
        raise InvalidInputError("training set is empty")
    epochs = cfg.epochs_for_baseline(train.num_modalities) if epochs is None else epochs
    model = init_concat(train.dims, train.num_classes, cfg.hidden, cfg.seed)
    y = obj.one_hot(train.labels, train.num_classes)
    record = StageRecord("concat", 0, 0, -1)
    for e in range(epochs):
        items, norms = [], []
        for b, idx in enumerate(epoch_batches(train.num_samples, cfg.batch_size, cfg.seed, e)):
            where = {"stage": "concat", "epoch": e, "batch": b}
            outs = [forward(n, f[idx]) for n, f in zip(model.nets, train.features)]
            _guard([z for z, _ in outs], where)
            loss, shared = obj.grs_loss([z for z, _ in outs], y[idx])
            _guard(loss, where)
            grads = [backward(n, cache, g) for n, (_, cache), g in zip(model.nets, outs, shared)]
            for gs in grads[1:]:
                gs.biases[-1][:] = 0.0
            norms.append([gs.norm() for gs in grads])
            joint_step(model.nets, grads, cfg.stage_lr, cfg.clip_norm)
            items.append(obj.StageLossBreakdown.combine(loss, 0.0, 0.0, 0.0, 0.0))
        record.batch_losses.extend(items)
        record.epoch_losses.append(_mean_breakdown(items))
        record.grad_norms.append([float(v) for v in np.mean(norms, axis=0)])
        record.epoch_train_acc.append(evaluate_concat(model, train)[0])
        if test is not None:
            record.epoch_test_acc.append(evaluate_concat(model, test)[0])
    record.train_acc, record.train_acc_modality = evaluate_concat(model, train)
    if test is not None:
        record.test_acc, record.test_acc_modality = evaluate_concat(model, test)
    report = TrainingReport("concat", [record], list(range(train.num_modalities)))
    report.final = {"train_acc": record.train_acc, "train_acc_modality": record.train_acc_modality}
    if test is not None:
        report.final.update(test_acc=record.test_acc, test_acc_modality=record.test_acc_modality)
    return model, report
