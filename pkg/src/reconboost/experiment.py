"""Config-file driven experiment runs.

A config is flat ``key = value`` text; ``#`` starts a comment. Recognised
keys are listed in ``TRAIN_KEYS`` and ``RUN_KEYS``; anything else is an
error. ``RECONBOOST_SEED`` in the environment overrides ``seed``.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .datagen import canonical_dominance_spec, corrupt_gaussian, generate_synthetic, load_feature_table, split
from .ensemble import BoostEnsemble, ModalityLearner, fit_fusion_weights, save_ensemble
from .errors import InvalidInputError
from .evalkit import ProbeConfig, build_diagnostics, probe_encoder
from .trainer import TrainConfig, evaluate_ensemble, train_joint_concat, train_reconboost, train_unimodal

TRAIN_KEYS = {
    "lambda": ("lam", float),
    "alpha": ("alpha", float),
    "stage_lr": ("stage_lr", float),
    "grs_lr": ("grs_lr", float),
    "t1": ("t1", int),
    "t2": ("t2", int),
    "cycles": ("cycles", int),
    "batch_size": ("batch_size", int),
    "seed": ("seed", int),
    "selection": ("selection", str),
    "clip_norm": ("clip_norm", float),
    "early_stop_patience": ("early_stop_patience", int),
    "hidden": ("hidden", lambda s: tuple(int(v) for v in s.replace(",", " ").split())),
    "baseline_epochs": ("baseline_epochs", int),
}


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


RUN_KEYS = {
    "method": str,
    "data": str,  # dataset directory or "canonical"
    "num_samples": int,
    "data_seed": int,
    "test_fraction": float,
    "output_dir": str,
    "diagnostics": _bool,
    "probe": _bool,
    "fusion": str,  # "na" or "lw"
    "lw_fraction": float,
    "lw_steps": int,
    "lw_lr": float,
    "standardize": _bool,
    "corrupt_modality": int,
    "corrupt_fraction": float,
    "corrupt_variance": float,  # sigma^2 of the added noise
    "corrupt_seed": int,
}


class ConfigError(InvalidInputError):
    pass


@dataclass
class RunSettings:
    method: str = "reconboost"
    data: str = "canonical"
    num_samples: int = 3000
    data_seed: int = 0
    test_fraction: float = 0.4
    output_dir: str = "runs/default"
    diagnostics: bool = True
    probe: bool = True
    fusion: str = "na"
    lw_fraction: float = 0.1
    lw_steps: int = 200
    lw_lr: float = 1e-2
    standardize: bool = False
    corrupt_modality: Optional[int] = None
    corrupt_fraction: float = 0.5
    corrupt_variance: float = 0.0
    corrupt_seed: int = 0


def parse_config_text(text: str, env=None) -> tuple[TrainConfig, RunSettings, dict]:
    env = os.environ if env is None else env
    train_kw, run_kw, raw = {}, {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.lower()
        if key not in TRAIN_KEYS and key not in RUN_KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            if key in TRAIN_KEYS:
                name, conv = TRAIN_KEYS[key]
                train_kw[name] = None if value.lower() in ("none", "") else conv(value)
            else:
                run_kw[key] = RUN_KEYS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        raw[key] = value
    if env.get("RECONBOOST_SEED"):
        try:
            train_kw["seed"] = int(env["RECONBOOST_SEED"])
        except ValueError:
            raise ConfigError(f"RECONBOOST_SEED is not an integer: {env['RECONBOOST_SEED']!r}") from None
        raw["seed"] = env["RECONBOOST_SEED"]
    try:
        cfg = TrainConfig(**train_kw)
    except InvalidInputError as exc:
        raise ConfigError(str(exc)) from None
    settings = RunSettings(**run_kw)
    if not (settings.method in ("reconboost", "concat") or settings.method.startswith("unimodal:")):
        raise ConfigError(f"unknown method {settings.method!r}")
    if settings.fusion not in ("na", "lw"):
        raise ConfigError(f"fusion must be 'na' or 'lw', got {settings.fusion!r}")
    return cfg, settings, raw


def load_config(path) -> tuple[TrainConfig, RunSettings, dict]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text)


def canonical_config_text() -> str:
    """The shipped, versioned config for the canonical dominance benchmark."""
    return resources.files("reconboost").joinpath("configs/canonical.cfg").read_text()


def load_canonical(env=None) -> tuple[TrainConfig, RunSettings, dict]:
    return parse_config_text(canonical_config_text(), env)


def load_data(settings: RunSettings):
    if settings.data == "canonical":
        data = generate_synthetic(canonical_dominance_spec(settings.num_samples), settings.data_seed)
    else:
        data = load_feature_table(settings.data, standardize=settings.standardize)
    if settings.corrupt_modality is not None and settings.corrupt_variance > 0:
        data = corrupt_gaussian(data, settings.corrupt_modality, settings.corrupt_fraction,
                                math.sqrt(settings.corrupt_variance), settings.corrupt_seed)
    return split(data, settings.test_fraction, settings.data_seed)


HISTORY_COLUMNS = ["cycle", "round", "stage_kind", "modality", "agreement", "kl", "mcr", "total", "train_acc", "test_acc"]


def _g(x) -> str:
    return "" if x is None else format(float(x), ".17g")


def history_rows(records) -> list:
    rows = []
    for r in records:
        for e, br in enumerate(r.epoch_losses):
            test = r.epoch_test_acc[e] if e < len(r.epoch_test_acc) else None
            rows.append([r.cycle, r.round, r.kind, r.modality, _g(br.agreement), _g(br.kl_reconcilement),
                         _g(br.mcr), _g(br.total), _g(r.epoch_train_acc[e]), _g(test)])
    return rows


def history_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    w.writerows(history_rows(records))
    return buf.getvalue()


def _build_id() -> str:
    return f"reconboost-{__version__}"


def execute(cfg: TrainConfig, settings: RunSettings, raw: Optional[dict] = None) -> dict:
    """Train the configured method and return the report dict plus artefacts."""
    timings = {}
    t0 = time.perf_counter()
    train, test = load_data(settings)
    timings["data"] = time.perf_counter() - t0
    m, ncls = train.num_modalities, train.num_classes
    probe_cfg = ProbeConfig(seed=cfg.seed)

    t0 = time.perf_counter()
    encoders = []
    if settings.method == "reconboost":
        fit_val = None
        if settings.fusion == "lw":
            # learnable weights are fit on a slice held out from training
            train, fit_val = split(train, settings.lw_fraction, cfg.seed)
        ens, rep = train_reconboost(train, cfg, test)
        if fit_val is not None:
            fit_fusion_weights(ens, fit_val.features, fit_val.labels, settings.lw_steps, settings.lw_lr)
            rep.final["test_acc"], rep.final["test_acc_modality"] = evaluate_ensemble(ens, test)
        model = ens
        encoders = [l.net for l in ens.learners]
    elif settings.method == "concat":
        cm, rep = train_joint_concat(train, cfg, test)
        model = BoostEnsemble([ModalityLearner(k, n) for k, n in enumerate(cm.nets)])
        encoders = list(cm.nets)
    else:
        try:
            k = int(settings.method.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"bad modality in method {settings.method!r}") from None
        learner, rep = train_unimodal(train, k, cfg, test)
        model = BoostEnsemble([learner])
    timings["train"] = time.perf_counter() - t0

    diagnostics = None
    if settings.diagnostics and not settings.method.startswith("unimodal") and m >= 2:
        t0 = time.perf_counter()
        unis = [train_unimodal(train, k, cfg, test) for k in range(m)]
        uni_acc = [u[1].final["test_acc"] for u in unis]
        probes, uni_probes = [], []
        if settings.probe:
            probes = [probe_encoder(encoders[k], test.features[k], test.labels, ncls, probe_cfg) for k in range(m)]
            uni_probes = [probe_encoder(unis[k][0].net, test.features[k], test.labels, ncls, probe_cfg) for k in range(m)]
        diagnostics = build_diagnostics(uni_acc, rep.final["test_acc_modality"], rep.final["test_acc"],
                                        probes, uni_probes).as_dict()
        timings["diagnostics"] = time.perf_counter() - t0

    report = {
        "schema_version": 1,
        "build": _build_id(),
        "method": settings.method,
        "config": {"train": cfg.as_dict(), "run": asdict(settings), "raw": dict(raw or {})},
        "dataset": {"num_train": train.num_samples, "num_test": test.num_samples, "num_classes": ncls,
                    "modalities": list(train.names), "dims": list(train.dims)},
        "modality_sequence": list(rep.modality_sequence),
        "stopped_early": rep.stopped_early,
        "stages": [r.as_dict() for r in rep.records],
        "final": rep.final,
        "diagnostics": diagnostics,
        "timings": timings,
    }
    return {"report": report, "records": rep.records, "model": model}


def write_outputs(result: dict, output_dir) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "history.csv").write_text(history_csv(result["records"]))
    (out / "report.json").write_text(json.dumps(result["report"], indent=2, default=_json_default) + "\n")
    save_ensemble(result["model"], out / "model")
    return out


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if hasattr(o, "as_dict"):
        return o.as_dict()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")
