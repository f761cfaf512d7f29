"""Right-sketching transforms used by approximate leverage computation.

A sketch shrinks the column dimension of a key matrix, K -> K @ Phi with
Phi of shape (d, k), while approximately preserving row geometry. Two kinds
are provided: dense Gaussian (entries N(0, 1/k)) and the subsampled
randomized Hadamard transform, applied via the fast Walsh-Hadamard
transform without materializing the Hadamard matrix.

All draws come from a counter-based generator (Philox), so equal
(input, spec) pairs give bitwise-equal outputs regardless of thread
scheduling.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as kern
from .errors import ParameterError

SKETCH_KINDS = ("gaussian", "srht", "none")


@dataclass(frozen=True)
class SketchSpec:
    """Description of one right-sketching transform."""

    kind: str
    target_dim: int
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SKETCH_KINDS:
            raise ParameterError(f"unknown sketch kind {self.kind!r}")
        if self.target_dim < 1:
            raise ParameterError(f"target_dim must be >= 1, got {self.target_dim}")
        if self.seed < 0:
            raise ParameterError("sketch seed must be a non-negative integer")

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "k": self.target_dim, "seed": self.seed}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SketchSpec":
        return cls(kind=doc["kind"], target_dim=doc["k"], seed=doc["seed"])


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def next_pow2(d: int) -> int:
    """Smallest power of two >= d."""
    return 1 << max(0, (d - 1).bit_length())


def gaussian_sketch(d: int, spec: SketchSpec) -> np.ndarray:
    """Seeded (d, k) matrix of i.i.d. Normal(0, 1/k) entries."""
    if spec.kind != "gaussian":
        raise ParameterError(f"expected a gaussian spec, got kind={spec.kind!r}")
    if d < 1:
        raise ParameterError(f"d must be >= 1, got {d}")
    k = spec.target_dim
    if k > d:
        raise ParameterError(f"gaussian sketch needs k <= d, got k={k} d={d}")
    return _rng(spec.seed).standard_normal((d, k)) / math.sqrt(k)


def srht_components(d: int, spec: SketchSpec):
    """The seeded Rademacher signs (length d_pad) and selected columns of an SRHT.

    Exposed so the fast path can be checked against an explicitly
    materialized transform.
    """
    if spec.kind != "srht":
        raise ParameterError(f"expected an srht spec, got kind={spec.kind!r}")
    d_pad = next_pow2(d)
    if spec.target_dim > d_pad:
        raise ParameterError(f"srht needs k <= d_pad, got k={spec.target_dim} d_pad={d_pad}")
    rng = _rng(spec.seed)
    signs = rng.integers(0, 2, size=d_pad).astype(np.float64) * 2.0 - 1.0
    cols = np.sort(rng.permutation(d_pad)[: spec.target_dim])
    return signs, cols


def srht_apply(K: np.ndarray, spec: SketchSpec) -> np.ndarray:
    """Apply the SRHT right sketch: K @ (D H R^T) * sqrt(d_pad / k).

    K is zero-padded to d_pad (next power of two) columns; the Hadamard
    factor is applied with the fast transform in O(N d_pad log d_pad).
    """
    K = np.asarray(K)
    if K.ndim != 2:
        raise ParameterError("K must be 2-D")
    n, d = K.shape
    signs, cols = srht_components(d, spec)
    d_pad = signs.shape[0]
    X = np.zeros((n, d_pad), dtype=np.float64)
    X[:, :d] = K
    X *= signs
    kern.fwht_rows(X)
    return X[:, cols] * math.sqrt(d_pad / spec.target_dim)


def apply_sketch(K: np.ndarray, spec: SketchSpec) -> np.ndarray:
    """Dispatch on spec.kind; kind "none" returns K unchanged."""
    if spec.kind == "none":
        return np.asarray(K)
    if spec.kind == "gaussian":
        K = np.asarray(K)
        if K.ndim != 2:
            raise ParameterError("K must be 2-D")
        phi = gaussian_sketch(K.shape[1], spec)
        return K @ phi
    return srht_apply(K, spec)
