"""Numerical kernel: stable softmax / log-sum-exp and seeded random streams.

Matrices are plain ``float64`` numpy arrays, one sample per row.

Random streams wrap numpy's PCG64 bit generator. PCG64 output is stable
across numpy releases; the Gaussian sampler (ziggurat on top of PCG64) is
what ``numpy.random.Generator.standard_normal`` has used since numpy 1.17.
Child streams are derived by hashing the parent seed together with a key
through ``SeedSequence``, so forking never consumes draws from the parent.
"""
from __future__ import annotations

import zlib
from typing import Hashable

import numpy as np

from .errors import InvalidInputError

DTYPE = np.float64


def as_matrix(a, name="matrix") -> np.ndarray:
    m = np.asarray(a, dtype=DTYPE)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise InvalidInputError(f"{name} must be 1-D or 2-D, got shape {m.shape}")
    return m


def _check_finite(a: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")


def log_sum_exp(values, axis=-1):
    """``ln sum(exp(v))`` along ``axis`` with max-shift."""
    v = np.asarray(values, dtype=DTYPE)
    if v.size == 0 or v.shape[axis] == 0:
        raise InvalidInputError("log_sum_exp of an empty vector")
    _check_finite(v, "values")
    m = np.max(v, axis=axis, keepdims=True)
    out = np.log(np.sum(np.exp(v - m), axis=axis, keepdims=True)) + m
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


def log_softmax(logits, axis=-1) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0:
        raise InvalidInputError("log_softmax of an empty vector")
    _check_finite(z, "logits")
    shifted = z - np.max(z, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def softmax(logits, axis=-1) -> np.ndarray:
    """Row-wise softmax (works on a single vector or an N x Y matrix)."""
    z = np.asarray(logits, dtype=DTYPE)
    if z.size == 0:
        raise InvalidInputError("softmax of an empty vector")
    _check_finite(z, "logits")
    e = np.exp(z - np.max(z, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def _key_words(key: Hashable) -> list[int]:
    if isinstance(key, (int, np.integer)) and key >= 0:
        return [int(key) & 0xFFFFFFFF, int(key) >> 32]
    return [zlib.crc32(repr(key).encode())]


class RandomStream:
    """Single-owner seeded generator.

    Two streams built from the same seed produce bitwise-equal draws.
    Use :meth:`fork` to hand independent sub-streams to parallel or
    per-component work instead of sharing one stream.
    """

    def __init__(self, seed: int, _entropy=None):
        if not 0 <= int(seed) < 2**64:
            raise InvalidInputError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._entropy = list(_entropy) if _entropy is not None else [self.seed & 0xFFFFFFFF, self.seed >> 32]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self._entropy)))

    def fork(self, *key: Hashable) -> "RandomStream":
        words = list(self._entropy)
        for part in key:
            words.extend(_key_words(part))
        return RandomStream(self.seed, _entropy=words)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state

    def normal(self, size, mean=0.0, std=1.0) -> np.ndarray:
        if std < 0:
            raise InvalidInputError(f"std must be >= 0, got {std}")
        z = self._gen.standard_normal(size)
        return mean + std * z

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low, high, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def orthonormal(self, rows: int, cols: int) -> np.ndarray:
        """Random ``rows x cols`` matrix with orthonormal columns (rows >= cols)."""
        if cols > rows:
            raise InvalidInputError(f"cannot fit {cols} orthonormal columns in {rows} dims")
        q, r = np.linalg.qr(self._gen.standard_normal((rows, cols)))
        # sign fix makes the draw Haar-distributed and deterministic
        return q * np.sign(np.diag(r))


def draw_gaussian(stream: RandomStream, n: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    return stream.normal(int(n), mean, std)
