"""Experiment report validation and plot-ready CSV emission.

Plot data is tidy: every CSV has the columns ``curve, x, y, seed``. When
the inputs cover more than one seed, each ``(curve, x)`` also gets a
``mean`` and a ``std`` row (sample standard deviation).
"""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from importlib import resources
from pathlib import Path
from typing import Sequence

import jsonschema
import numpy as np

from .errors import FormatError, InvalidInputError
from .evalkit import diagnostics_from_dict

PLOT_COLUMNS = ["curve", "x", "y", "seed"]


def report_schema() -> dict:
    return json.loads(resources.files("reconboost").joinpath("schemas/report.schema.json").read_text())


def validate_report(report: dict) -> None:
    """Raise FormatError unless ``report`` matches the shipped schema and its diagnostics recompute exactly."""
    try:
        jsonschema.validate(report, report_schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise FormatError(f"report invalid at {where}: {exc.message}") from None
    diag = report.get("diagnostics")
    if diag is not None:
        again = json.loads(json.dumps(diagnostics_from_dict(diag).as_dict()))
        if again != diag:
            raise FormatError("stored diagnostics disagree with values recomputed from the raw accuracies")


def load_report(path) -> dict:
    try:
        report = json.loads(Path(path).read_text())
    except OSError as exc:
        raise FormatError(f"cannot read report: {exc.strerror}", path) from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"not JSON: {exc.msg}", path) from None
    try:
        validate_report(report)
    except FormatError as exc:
        raise FormatError(str(exc), path) from None
    return report


def stage_epoch_series(report: dict) -> dict:
    """Per stage-epoch series keyed by curve name; x counts stage-epochs from 1."""
    out = defaultdict(list)
    x = 0
    for st in report["stages"]:
        for e, br in enumerate(st["epoch_losses"]):
            x += 1
            out["loss_total"].append((x, br["total"]))
            out["train_acc"].append((x, st["epoch_train_acc"][e]))
            if e < len(st.get("epoch_test_acc", [])):
                out["test_acc"].append((x, st["epoch_test_acc"][e]))
    return out


def diagnostic_bars(report: dict) -> list:
    d = report.get("diagnostics")
    if not d:
        return []
    rows = []
    for key in ("uni_accuracy", "multi_accuracy", "probe_accuracy", "uni_probe_accuracy"):
        rows += [(key, f"m{k}", v) for k, v in enumerate(d.get(key, []))]
    rows.append(("overall_accuracy", "all", d["overall_accuracy"]))
    for key in ("mir_uni", "mir_multi", "dmc"):
        rows += [(key, f"m{i}>m{j}", v) for (i, j), v in zip(d["pairs"], d[key])]
    if d.get("dmc_geometric") is not None:
        rows.append(("dmc_geometric", "all", d["dmc_geometric"]))
    rows += [(f"mi_proxy", f"m{k}", v) for k, v in enumerate(d.get("mi_proxy", []))]
    return rows


def _aggregate(rows: list) -> list:
    """Append mean/std rows per (curve, x) when several seeds are present."""
    if len({r[3] for r in rows}) < 2:
        return rows
    groups = defaultdict(list)
    order = []
    for curve, x, y, _ in rows:
        if (curve, x) not in groups:
            order.append((curve, x))
        groups[(curve, x)].append(y)
    extra = []
    for key in order:
        ys = np.asarray(groups[key], dtype=float)
        std = float(np.std(ys, ddof=1)) if ys.size > 1 else 0.0
        extra.append((*key, float(np.mean(ys)), "mean"))
        extra.append((*key, std, "std"))
    return rows + extra


def _write(path: Path, rows: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_COLUMNS)
        for curve, x, y, seed in rows:
            w.writerow([curve, x, format(float(y), ".17g"), seed])


def emit_plot_data(report_paths: Sequence, out_dir) -> dict:
    """Write loss_curves.csv, accuracy_curves.csv and diagnostic_bars.csv; returns their paths."""
    if not report_paths:
        raise InvalidInputError("no reports given")
    reports = [load_report(p) for p in report_paths]
    loss, acc, bars = [], [], []
    for rep in reports:
        seed = rep["config"]["train"]["seed"]
        method = rep["method"]
        series = stage_epoch_series(rep)
        loss += [(f"{method}:loss_total", x, y, seed) for x, y in series["loss_total"]]
        for name in ("train_acc", "test_acc"):
            acc += [(f"{method}:{name}", x, y, seed) for x, y in series[name]]
        bars += [(f"{method}:{k}", x, y, seed) for k, x, y in diagnostic_bars(rep)]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, rows in (("loss_curves", loss), ("accuracy_curves", acc), ("diagnostic_bars", bars)):
        paths[name] = out / f"{name}.csv"
        _write(paths[name], _aggregate(rows))
    return paths
