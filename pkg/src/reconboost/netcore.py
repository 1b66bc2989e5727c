"""Feed-forward modality learners with hand-written reverse mode and plain SGD.

A net maps ``x @ W + b`` layer by layer, ReLU on every hidden layer and
identity on the last one. The last affine layer is the *head*; everything
before it is the *encoder*.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FormatError, InvalidInputError, InvalidStateError, NumericalFailureError
from .numkit import DTYPE, RandomStream, as_matrix

_version_counter = itertools.count()


@dataclass(eq=False)
class MlpNet:
    layer_dims: tuple
    weights: list
    biases: list
    seed: Optional[int] = None
    # bumped on every in-place update so stale forward caches can be detected
    version: int = field(default_factory=lambda: next(_version_counter))

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    @property
    def feature_dim(self) -> int:
        """Width of the encoder output (input dim for a single-layer net)."""
        return self.layer_dims[-2]

    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list:
        """Parameter buffers in layer order: W1, b1, W2, b2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def touch(self) -> None:
        self.version = next(_version_counter)

    def copy(self) -> "MlpNet":
        return MlpNet(
            tuple(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.seed,
        )


@dataclass
class GradientSet:
    weights: list
    biases: list

    def buffers(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.buffers()])

    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.buffers())))

    def scaled(self, c: float) -> "GradientSet":
        return GradientSet([c * w for w in self.weights], [c * b for b in self.biases])

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


@dataclass
class ForwardCache:
    net_id: int
    net_version: int
    inputs: list  # input to every affine layer
    preacts: list  # pre-activation of every hidden layer


def init_mlp(layer_dims: Sequence[int], stream: RandomStream) -> MlpNet:
    """He-normal weights ``N(0, 2/fan_in)``, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2:
        raise InvalidInputError(f"layer_dims needs at least 2 entries, got {dims}")
    if any(d <= 0 for d in dims):
        raise InvalidInputError(f"layer dims must be positive, got {dims}")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = stream.normal(fan_in * fan_out, 0.0, np.sqrt(2.0 / fan_in)).reshape(fan_in, fan_out)
        weights.append(w)
        biases.append(np.zeros(fan_out, dtype=DTYPE))
    return MlpNet(dims, weights, biases, stream.seed)


def _check_input(net: MlpNet, batch) -> np.ndarray:
    x = as_matrix(batch, "batch")
    if x.shape[1] != net.input_dim:
        raise InvalidInputError(f"batch has {x.shape[1]} columns, net expects {net.input_dim}")
    return x


def forward(net: MlpNet, batch) -> tuple[np.ndarray, ForwardCache]:
    x = _check_input(net, batch)
    inputs, preacts = [], []
    h = x
    last = net.num_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        if i < last:
            preacts.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, ForwardCache(id(net), net.version, inputs, preacts)


def encoder_forward(net: MlpNet, batch) -> np.ndarray:
    """Features fed to the head (the raw input for a single-layer net)."""
    h = _check_input(net, batch)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        h = np.maximum(h @ w + b, 0.0)
    return h


def head_affine(net: MlpNet, features) -> np.ndarray:
    return as_matrix(features, "features") @ net.weights[-1] + net.biases[-1]


def backward(net: MlpNet, cache: ForwardCache, dlogits) -> GradientSet:
    """Pull per-sample logit gradients back to parameters, averaged over the batch.

    ``dlogits[i]`` is the gradient of sample ``i``'s loss with respect to its
    logits; the result is the gradient of the batch-mean loss.
    """
    if cache.net_id != id(net) or cache.net_version != net.version:
        raise InvalidStateError("forward cache does not belong to the current state of this net")
    d = as_matrix(dlogits, "dlogits")
    n = cache.inputs[0].shape[0]
    if d.shape != (n, net.output_dim):
        raise InvalidInputError(f"dlogits shape {d.shape} != {(n, net.output_dim)}")
    d = d / n
    gw = [None] * net.num_layers
    gb = [None] * net.num_layers
    for i in range(net.num_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ d
        gb[i] = d.sum(axis=0)
        if i > 0:
            d = (d @ net.weights[i].T) * (cache.preacts[i - 1] > 0.0)
    return GradientSet(gw, gb)


def zeros_like(net: MlpNet) -> GradientSet:
    return GradientSet([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])


def sgd_step(net: MlpNet, grads: GradientSet, lr: float, clip_norm: Optional[float] = None) -> MlpNet:
    """In-place ``theta -= lr * g``; ``g`` is rescaled to ``clip_norm`` if its norm exceeds it."""
    if lr < 0:
        raise InvalidInputError(f"learning rate must be >= 0, got {lr}")
    if len(grads.weights) != net.num_layers or any(
        g.shape != p.shape for g, p in zip(grads.buffers(), net.params())
    ):
        raise InvalidInputError("gradient shapes do not match the net")
    scale = lr
    if clip_norm is not None:
        norm = grads.norm()
        if norm > clip_norm:
            scale = lr * (clip_norm / norm)
    if scale == 0.0:
        return net
    for p, g in zip(net.params(), grads.buffers()):
        p -= scale * g
    net.touch()
    return net


def fd_gradient(loss_fn: Callable[[MlpNet], float], net: MlpNet, eps: float = 1e-5) -> GradientSet:
    """Central finite differences of ``loss_fn(net)`` over every parameter.

    Parameters are perturbed in place and restored bit-exactly afterwards.
    """
    if eps <= 0:
        raise InvalidInputError("eps must be positive")
    out = []
    for p in net.params():
        g = np.empty_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            net.touch()
            f_plus = loss_fn(net)
            flat[j] = orig - eps
            net.touch()
            f_minus = loss_fn(net)
            flat[j] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                net.touch()
                raise NumericalFailureError("non-finite loss during finite differencing", {"index": j})
            gflat[j] = (f_plus - f_minus) / (2.0 * eps)
        out.append(g)
    net.touch()
    return GradientSet(out[0::2], out[1::2])


def flatten_params(net: MlpNet) -> np.ndarray:
    return np.concatenate([p.ravel() for p in net.params()])


def unflatten_params(layer_dims: Sequence[int], flat: np.ndarray, seed=None) -> MlpNet:
    dims = tuple(int(d) for d in layer_dims)
    expected = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    flat = np.asarray(flat, dtype=DTYPE)
    if flat.size != expected:
        raise InvalidInputError(f"expected {expected} parameters for dims {dims}, got {flat.size}")
    weights, biases, pos = [], [], 0
    for a, b in zip(dims[:-1], dims[1:]):
        weights.append(flat[pos:pos + a * b].reshape(a, b).copy())
        pos += a * b
        biases.append(flat[pos:pos + b].copy())
        pos += b
    return MlpNet(dims, weights, biases, seed)


def param_digest(net: MlpNet) -> str:
    return hashlib.sha256(flatten_params(net).astype("<f8").tobytes()).hexdigest()


# Snapshot layout: one JSON header line, then the flat parameters as
# little-endian float64 (W1 row-major, b1, W2, b2, ...).

def save_snapshot(net: MlpNet, path) -> None:
    header = json.dumps({"layer_dims": list(net.layer_dims), "seed": net.seed}, sort_keys=True)
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(flatten_params(net).astype("<f8").tobytes())


def load_snapshot(path) -> MlpNet:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise FormatError("missing JSON header line", path)
    try:
        header = json.loads(raw[:nl])
        dims = header["layer_dims"]
    except (ValueError, KeyError) as exc:
        raise FormatError(f"bad snapshot header: {exc}", path) from None
    body = raw[nl + 1:]
    if len(body) % 8:
        raise FormatError("parameter block is not a whole number of float64 values", path)
    try:
        return unflatten_params(dims, np.frombuffer(body, dtype="<f8"), header.get("seed"))
    except InvalidInputError as exc:
        raise FormatError(str(exc), path) from None
