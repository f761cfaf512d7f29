"""Task-driven attention importance scores.

The query-agnostic score of a token is how much attention it receives from
every position when the causal mask is dropped: the column sums of
softmax(scale * Q K^T). Materializing the full N x N attention matrix is
prohibitive, so the context is split into blocks of ``chunk_size`` and each
block's square attention is scored independently (the final block may be
shorter). Two query-aware baselines are provided for comparison: column
sums of the causally masked softmax over all queries, and over only the
last ``baseline_window`` queries.

Mean pooling (centered moving average, edge-truncated) and value-norm
scaling are separate steps so callers control the post-processing order;
the bundled eviction pipeline pools first, then scales.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels as kern
from .errors import ParameterError
from .kvstore import ScoreVector

_ROW_BLOCK = 2048


@dataclass(frozen=True)
class AttnScoreConfig:
    """Knobs for the attention-score family.

    ``scale=None`` means the conventional 1/sqrt(d); pass 1.0 for the
    unscaled form. ``snap_keep_window=True`` makes the eviction pipeline
    force-retain the final ``baseline_window`` tokens under the snapkv
    policy, mirroring that method's always-kept observation window.
    """

    chunk_size: int = 256
    pool_window: int = 7
    scale: Optional[float] = None
    value_norm: bool = True
    baseline_window: int = 32
    snap_keep_window: bool = True

    def __post_init__(self):
        if self.chunk_size < 1:
            raise ParameterError(f"chunk_size must be >= 1, got {self.chunk_size}")
        if self.pool_window < 1 or self.pool_window % 2 == 0:
            raise ParameterError(f"pool_window must be odd and >= 1, got {self.pool_window}")
        if self.baseline_window < 1:
            raise ParameterError(f"baseline_window must be >= 1, got {self.baseline_window}")

    def to_json_dict(self) -> dict:
        return {
            "chunk_size": self.chunk_size,
            "pool_window": self.pool_window,
            "scale": self.scale,
            "value_norm": self.value_norm,
            "baseline_window": self.baseline_window,
            "snap_keep_window": self.snap_keep_window,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "AttnScoreConfig":
        return cls(**doc)


def _check_pair(Q, K):
    Q = np.ascontiguousarray(Q, dtype=np.float64)
    K = np.ascontiguousarray(K, dtype=np.float64)
    if Q.ndim != 2 or K.ndim != 2 or Q.shape != K.shape:
        raise ParameterError(f"Q and K must share one (N, d) shape, got {Q.shape} and {K.shape}")
    return Q, K


def _scale(cfg: AttnScoreConfig, d: int) -> float:
    return 1.0 / math.sqrt(d) if cfg.scale is None else float(cfg.scale)


def noncausal_scores(Q: np.ndarray, K: np.ndarray, cfg: AttnScoreConfig = AttnScoreConfig()) -> ScoreVector:
    """Chunked non-causal attention received per token.

    Concatenates, over blocks of cfg.chunk_size, the column sums of the
    row-softmaxed block attention. Each softmax row sums to one, so every
    block's scores total its length.
    """
    Q, K = _check_pair(Q, K)
    n = Q.shape[0]
    scale = _scale(cfg, Q.shape[1])
    out = np.zeros(n)
    for s in range(0, n, cfg.chunk_size):
        e = min(s + cfg.chunk_size, n)
        logits = scale * (Q[s:e] @ K[s:e].T)
        kern.softmax_colsum(logits, out[s:e])
    return ScoreVector(out, kind="attention")


def h2o_scores(Q: np.ndarray, K: np.ndarray, cfg: AttnScoreConfig = AttnScoreConfig()) -> ScoreVector:
    """Causal attention accumulated over all queries (query rows blocked to bound memory)."""
    Q, K = _check_pair(Q, K)
    n = Q.shape[0]
    scale = _scale(cfg, Q.shape[1])
    out = np.zeros(n)
    for s in range(0, n, _ROW_BLOCK):
        e = min(s + _ROW_BLOCK, n)
        logits = scale * (Q[s:e] @ K.T)
        kern.causal_softmax_colsum(logits, s, out)
    return ScoreVector(out, kind="baseline")


def snapkv_scores(Q: np.ndarray, K: np.ndarray, cfg: AttnScoreConfig = AttnScoreConfig()) -> ScoreVector:
    """Causal attention accumulated over only the last cfg.baseline_window queries."""
    Q, K = _check_pair(Q, K)
    n = Q.shape[0]
    w = cfg.baseline_window
    if w > n:
        raise ParameterError(f"baseline_window {w} exceeds sequence length {n}")
    scale = _scale(cfg, Q.shape[1])
    out = np.zeros(n)
    start = n - w
    for s in range(start, n, _ROW_BLOCK):
        e = min(s + _ROW_BLOCK, n)
        logits = scale * (Q[s:e] @ K.T)
        kern.causal_softmax_colsum(logits, s, out)
    return ScoreVector(out, kind="baseline")


def mean_pool(scores: ScoreVector, window: int) -> ScoreVector:
    """Centered moving average with edge truncation; length preserved."""
    if window < 1 or window % 2 == 0:
        raise ParameterError(f"pooling window must be odd and >= 1, got {window}")
    if window == 1:
        return scores
    v = scores.scores
    n = v.shape[0]
    half = window // 2
    csum = np.concatenate(([0.0], np.cumsum(v)))
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    return ScoreVector((csum[hi] - csum[lo]) / (hi - lo), kind=scores.kind)


def value_norm_scale(scores: ScoreVector, V: np.ndarray) -> ScoreVector:
    """Scale each token's score by the Euclidean norm of its value row."""
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 2 or V.shape[0] != len(scores):
        raise ParameterError(f"values shape {V.shape} does not match {len(scores)} scores")
    norms = np.sqrt(np.einsum("ij,ij->i", V, V))
    return ScoreVector(scores.scores * norms, kind=scores.kind)
