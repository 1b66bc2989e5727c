"""Multi-modal datasets: synthetic generation, CSV feature tables, corruption, splits."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, InvalidInputError, ParseError
from .numkit import DTYPE, RandomStream


@dataclass(eq=False)
class MultiModalDataset:
    features: list  # one N x d_k float64 matrix per modality
    labels: np.ndarray
    num_classes: int
    names: list = field(default_factory=list)

    def __post_init__(self):
        self.features = [np.ascontiguousarray(f, dtype=DTYPE) for f in self.features]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.names:
            self.names = [f"m{k}" for k in range(len(self.features))]
        if len(self.features) == 0:
            raise InvalidInputError("dataset needs at least one modality")
        if len(self.names) != len(self.features):
            raise InvalidInputError("one name per modality required")
        n = self.labels.shape[0]
        for name, f in zip(self.names, self.features):
            if f.ndim != 2 or f.shape[0] != n or f.shape[1] == 0:
                raise InvalidInputError(f"modality {name!r} has shape {f.shape}, expected ({n}, d>0)")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise InvalidInputError(f"labels must lie in [0, {self.num_classes})")

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    @property
    def dims(self) -> list:
        return [f.shape[1] for f in self.features]

    def subset(self, idx) -> "MultiModalDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return MultiModalDataset([f[idx] for f in self.features], self.labels[idx], self.num_classes, list(self.names))

    def select_modalities(self, ks: Sequence[int]) -> "MultiModalDataset":
        return MultiModalDataset(
            [self.features[k] for k in ks], self.labels, self.num_classes, [self.names[k] for k in ks]
        )

    def copy(self) -> "MultiModalDataset":
        return MultiModalDataset([f.copy() for f in self.features], self.labels.copy(), self.num_classes, list(self.names))


@dataclass
class ModalitySpec:
    dim: int
    margin: float  # pairwise distance between distinct class means
    noise: float  # per-coordinate standard deviation
    confusable_pairs: list = field(default_factory=list)
    name: str = ""


@dataclass
class SyntheticSpec:
    num_classes: int
    num_samples: int
    modalities: list

    def validate(self) -> None:
        if self.num_classes < 2 or self.num_samples < 1 or not self.modalities:
            raise InvalidInputError("need >= 2 classes, >= 1 sample and >= 1 modality")
        for m in self.modalities:
            if m.dim < self.num_classes - 1:
                raise InvalidInputError(f"modality dim {m.dim} too small to hold {self.num_classes} equidistant means")
            if m.margin < 0 or m.noise <= 0:
                raise InvalidInputError("margin must be >= 0 and noise > 0")
            for pair in m.confusable_pairs:
                a, b = pair
                if a == b or not (0 <= a < self.num_classes and 0 <= b < self.num_classes):
                    raise InvalidInputError(f"bad confusable pair {pair}")


def canonical_dominance_spec(num_samples: int = 3000) -> SyntheticSpec:
    """Two modalities with one dominant and one weak-but-complementary view.

    The strong view separates the three class pairs (0,1), (2,3), (4,5) by a
    wide margin but cannot tell the members of a pair apart; only the weak
    view can.
    """
    return SyntheticSpec(
        num_classes=6,
        num_samples=num_samples,
        modalities=[
            ModalitySpec(16, 4.0, 1.0, [(0, 1), (2, 3), (4, 5)], name="strong"),
            ModalitySpec(16, 1.2, 1.0, [], name="weak"),
        ],
    )


def class_means(spec: ModalitySpec, num_classes: int, stream: RandomStream) -> np.ndarray:
    """Regular simplex of class means at pairwise distance ``margin``, randomly rotated."""
    centered = np.eye(num_classes) - 1.0 / num_classes
    # orthonormal basis of the (num_classes-1)-dim span of the centred simplex
    _, _, vt = np.linalg.svd(centered)
    coords = centered @ vt[: num_classes - 1].T
    rot = stream.orthonormal(spec.dim, num_classes - 1)
    means = (spec.margin / math.sqrt(2.0)) * coords @ rot.T
    for a, b in spec.confusable_pairs:
        means[max(a, b)] = means[min(a, b)]
    return means


def generate_synthetic(spec: SyntheticSpec, seed: int) -> MultiModalDataset:
    spec.validate()
    root = RandomStream(seed)
    labels = root.fork("labels").integers(0, spec.num_classes, size=spec.num_samples)
    feats, names = [], []
    for k, m in enumerate(spec.modalities):
        means = class_means(m, spec.num_classes, root.fork("means", k))
        noise = root.fork("noise", k).normal((spec.num_samples, m.dim), 0.0, m.noise)
        feats.append(means[labels] + noise)
        names.append(m.name or f"m{k}")
    return MultiModalDataset(feats, labels, spec.num_classes, names)


# -- feature tables ---------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def save_feature_table(dataset: MultiModalDataset, path) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    manifest = {
        "num_classes": int(dataset.num_classes),
        "num_samples": dataset.num_samples,
        "modalities": [{"name": n, "dim": int(d)} for n, d in zip(dataset.names, dataset.dims)],
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    with open(root / "labels.csv", "w", newline="") as fh:
        fh.writelines(f"{int(y)}\n" for y in dataset.labels)
    for name, f in zip(dataset.names, dataset.features):
        with open(root / f"{name}.csv", "w", newline="") as fh:
            fh.writelines(",".join(_fmt(v) for v in row) + "\n" for row in f)


def _read_rows(path: Path) -> list:
    if not path.exists():
        raise FormatError("file not found", path)
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if row]


def load_feature_table(path, standardize: bool = False) -> MultiModalDataset:
    root = Path(path)
    mpath = root / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
        num_classes = int(manifest["num_classes"])
        n = int(manifest["num_samples"])
        mods = [(str(m["name"]), int(m["dim"])) for m in manifest["modalities"]]
    except FileNotFoundError:
        raise FormatError("file not found", mpath) from None
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"invalid manifest: {exc}", mpath) from None

    lpath = root / "labels.csv"
    rows = _read_rows(lpath)
    if len(rows) != n:
        raise FormatError(f"{len(rows)} label rows, manifest says {n}", lpath)
    labels = np.empty(n, dtype=np.int64)
    for i, row in enumerate(rows):
        if len(row) != 1:
            raise ParseError("expected one integer per line", lpath, row=i + 1)
        try:
            labels[i] = int(row[0])
        except ValueError:
            raise ParseError(f"non-integer label {row[0]!r}", lpath, row=i + 1, col=1) from None
        if not 0 <= labels[i] < num_classes:
            raise FormatError(f"label {labels[i]} at row {i + 1} out of range [0, {num_classes})", lpath)

    feats = []
    for name, dim in mods:
        fpath = root / f"{name}.csv"
        rows = _read_rows(fpath)
        if len(rows) != n:
            raise FormatError(f"{len(rows)} rows, manifest says {n}", fpath)
        mat = np.empty((n, dim), dtype=DTYPE)
        for i, row in enumerate(rows):
            if len(row) != dim:
                raise FormatError(f"row {i + 1} has {len(row)} columns, manifest says {dim}", fpath)
            for j, cell in enumerate(row):
                try:
                    mat[i, j] = float(cell)
                except ValueError:
                    raise ParseError(f"non-numeric cell {cell!r}", fpath, row=i + 1, col=j + 1) from None
        if standardize:
            sd = mat.std(axis=0)
            mat = (mat - mat.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
        feats.append(mat)
    return MultiModalDataset(feats, labels, num_classes, [m[0] for m in mods])


# -- corruption and splits -------------------------------------------------

def corrupt_gaussian(dataset: MultiModalDataset, k: int, fraction: float, sigma: float, seed: int) -> MultiModalDataset:
    """Add ``N(0, sigma^2)`` noise to modality ``k`` of ``floor(fraction * N)`` random rows."""
    if not 0 <= k < dataset.num_modalities:
        raise InvalidInputError(f"modality index {k} out of range")
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"fraction must be in [0, 1], got {fraction}")
    if sigma < 0:
        raise InvalidInputError(f"sigma must be >= 0, got {sigma}")
    out = dataset.copy()
    n_rows = int(math.floor(fraction * dataset.num_samples))
    if n_rows == 0 or sigma == 0:
        return out
    stream = RandomStream(seed)
    rows = np.sort(stream.fork("rows").permutation(dataset.num_samples)[:n_rows])
    noise = stream.fork("noise").normal((n_rows, dataset.dims[k]), 0.0, sigma)
    out.features[k][rows] += noise
    return out


def split_indices(labels, test_fraction: float, seed: int, stratified: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_fraction < 1.0:
        raise InvalidInputError(f"test fraction must be in (0, 1), got {test_fraction}")
    labels = np.asarray(labels)
    n = labels.shape[0]
    n_test = int(math.floor(test_fraction * n))
    stream = RandomStream(seed)
    if not stratified:
        perm = stream.fork("split").permutation(n)
        test = perm[:n_test]
    else:
        classes = np.unique(labels)
        members = {c: np.flatnonzero(labels == c) for c in classes}
        quota = {c: n_test * len(members[c]) / n for c in classes}
        take = {c: int(math.floor(quota[c])) for c in classes}
        # hand out the remaining slots by largest fractional part
        short = n_test - sum(take.values())
        for c in sorted(classes, key=lambda c: (-(quota[c] - take[c]), c))[:short]:
            take[c] += 1
        parts = []
        for c in classes:
            perm = stream.fork("split", int(c)).permutation(len(members[c]))
            parts.append(members[c][perm[: take[c]]])
        test = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    test = np.sort(test)
    mask = np.ones(n, dtype=bool)
    mask[test] = False
    return np.flatnonzero(mask), test


def split(dataset: MultiModalDataset, test_fraction: float, seed: int, stratified: bool = True):
    train_idx, test_idx = split_indices(dataset.labels, test_fraction, seed, stratified)
    return dataset.subset(train_idx), dataset.subset(test_idx)
