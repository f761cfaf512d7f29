"""Score blending, per-head top-k selection, and bundle compression.

The final ranking signal standardizes the attention and outlier score
vectors and sums them with weight ``lam`` on the outlier side:

    s = zscore(a) + lam * zscore(o)

where zscore uses the population standard deviation with a +1e-8 guard, so
constant vectors contribute ~0 instead of NaN. Selection keeps the
max(1, ceil(r*N)) highest-scoring tokens per head, ties broken toward the
smaller index. Scoring and selection run independently for every
(layer, head); a per-layer retention list lets callers express externally
computed budget schedules.
"""

from dataclasses import dataclass, replace
from typing import Optional, Union

import numpy as np

from .attnscore import AttnScoreConfig, h2o_scores, mean_pool, noncausal_scores, snapkv_scores, value_norm_scale
from .errors import DataError, ParameterError
from .kvstore import KVBundle, RetentionPlan, ScoreVector, retained_count
from .leverage import BasisMethod, approx_leverage
from .sketch import SketchSpec, next_pow2

POLICY_KINDS = ("compactor", "snapkv", "h2o", "random", "leverage_only")
_ZSCORE_EPS = 1e-8


def child_seed(root: int, *key: int) -> int:
    """Deterministic per-(layer, head) seed derived from a root seed."""
    return int(np.random.SeedSequence([root, *key]).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class EvictionPolicy:
    """Everything needed to reproduce one compression run."""

    kind: str
    retention: Union[float, tuple]
    lam: float = 0.3
    sketch: SketchSpec = SketchSpec(kind="gaussian", target_dim=64, seed=0)
    attn: AttnScoreConfig = AttnScoreConfig()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ParameterError(f"unknown policy kind {self.kind!r}")
        rs = self.retention
        if isinstance(rs, (tuple, list)):
            rs = tuple(float(r) for r in rs)
            object.__setattr__(self, "retention", rs)
        else:
            object.__setattr__(self, "retention", float(rs))
            rs = (float(rs),)
        for r in rs:
            if not 0.0 < r <= 1.0:
                raise ParameterError(f"retention {r} outside (0, 1]")
        if not np.isfinite(self.lam):
            raise ParameterError("lambda must be finite")
        if self.lam < 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if self.seed < 0:
            raise ParameterError("policy seed must be a non-negative integer")

    def to_json_dict(self) -> dict:
        r = self.retention
        return {
            "kind": self.kind,
            "lambda": self.lam,
            "retention": list(r) if isinstance(r, tuple) else r,
            "sketch": self.sketch.to_json_dict(),
            "attn": self.attn.to_json_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EvictionPolicy":
        r = doc["retention"]
        return cls(
            kind=doc["kind"],
            retention=tuple(r) if isinstance(r, list) else r,
            lam=doc["lambda"],
            sketch=SketchSpec.from_json_dict(doc["sketch"]),
            attn=AttnScoreConfig.from_json_dict(doc["attn"]),
            seed=doc["seed"],
        )


def _zscore(v: np.ndarray) -> np.ndarray:
    return (v - v.mean()) / (v.std() + _ZSCORE_EPS)


def blend_scores(a: ScoreVector, o: ScoreVector, lam: float) -> ScoreVector:
    """s = zscore(a) + lam * zscore(o), population std with epsilon guard."""
    if len(a) != len(o):
        raise ParameterError(f"score lengths differ: {len(a)} vs {len(o)}")
    if not np.isfinite(lam):
        raise ParameterError("lambda must be finite")
    return ScoreVector(_zscore(a.scores) + lam * _zscore(o.scores), kind="blended")


def select_topk(s, r: float) -> np.ndarray:
    """Sorted indices of the max(1, ceil(r*N)) largest scores.

    Ties break toward the smaller index (stable sort on descending score).
    """
    v = np.asarray(getattr(s, "scores", s), dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ParameterError("scores must be a non-empty 1-D vector")
    k = retained_count(r, v.shape[0])
    top = np.argsort(-v, kind="stable")[:k]
    return np.sort(top)


def random_eviction(n: int, r: float, seed: int) -> np.ndarray:
    """Seeded uniform sample without replacement of max(1, ceil(r*n)) indices, sorted."""
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    k = retained_count(r, n)
    rng = np.random.Generator(np.random.Philox(seed))
    return np.sort(rng.choice(n, size=k, replace=False))


def _topk_with_window(s: ScoreVector, r: float, window: int) -> np.ndarray:
    """Top-k that always includes the final `window` tokens (snapkv behavior)."""
    n = len(s)
    k = retained_count(r, n)
    w = min(window, k)
    forced = np.arange(n - w, n)
    if k == w:
        return forced
    top = np.argsort(-s.scores[: n - w], kind="stable")[: k - w]
    return np.sort(np.concatenate([top, forced]))


def _effective_sketch(spec: SketchSpec, d: int, layer: int, head: int) -> SketchSpec:
    """Per-head sketch: seed derived from the root, k capped at the column budget."""
    cap = d if spec.kind == "gaussian" else next_pow2(d)
    k = min(spec.target_dim, cap) if spec.kind != "none" else spec.target_dim
    return SketchSpec(kind=spec.kind, target_dim=k, seed=child_seed(spec.seed, layer, head))


def head_scores(
    policy: EvictionPolicy,
    keys_prerope: Optional[np.ndarray],
    keys: np.ndarray,
    values: np.ndarray,
    queries: Optional[np.ndarray],
    layer: int = 0,
    head: int = 0,
    method: BasisMethod = BasisMethod(),
) -> ScoreVector:
    """Final score vector for one head under `policy`.

    Attention scores are computed on the position-embedded keys, outlier
    scores on the pre-embedding keys. The random policy defines no scores.
    """
    kind = policy.kind
    cfg = policy.attn
    if kind == "random":
        raise ParameterError("the random policy has no score vector")

    o = None
    if kind in ("compactor", "leverage_only"):
        if keys_prerope is None:
            raise DataError(f"{kind} policy needs pre-rope keys")
        spec = _effective_sketch(policy.sketch, keys_prerope.shape[1], layer, head)
        o = approx_leverage(keys_prerope, spec, method).scores
        if kind == "leverage_only":
            return o

    if queries is None:
        raise DataError(f"{kind} policy needs queries")
    if kind == "h2o":
        a = h2o_scores(queries, keys, cfg)
    elif kind == "snapkv":
        # the observation window cannot exceed the context
        w = min(cfg.baseline_window, keys.shape[0])
        a = mean_pool(snapkv_scores(queries, keys, replace(cfg, baseline_window=w)), cfg.pool_window)
    else:
        a = mean_pool(noncausal_scores(queries, keys, cfg), cfg.pool_window)
    if cfg.value_norm:
        a = value_norm_scale(a, values)

    if kind == "compactor":
        return blend_scores(a, o, policy.lam)
    return a


def compress_bundle(bundle: KVBundle, policy: EvictionPolicy, method: BasisMethod = BasisMethod()) -> RetentionPlan:
    """Score and select every (layer, head) independently; assemble the plan.

    A pure function of (bundle, policy, method) including all seeds.
    """
    n_layers, n_heads = bundle.n_layers, bundle.n_kv_heads
    rs = policy.retention
    if isinstance(rs, tuple):
        if len(rs) != n_layers:
            raise ParameterError(f"per-layer retention list has {len(rs)} entries for {n_layers} layers")
    else:
        rs = (rs,) * n_layers

    if policy.kind in ("compactor", "snapkv", "h2o") and not bundle.has_queries:
        raise DataError(f"{policy.kind} policy needs queries in the bundle")
    if policy.kind in ("compactor", "leverage_only") and not bundle.has_prerope:
        raise DataError(f"{policy.kind} policy needs pre-rope keys in the bundle")

    layers = []
    for l in range(n_layers):
        heads = []
        for h in range(n_heads):
            ht = bundle.head(l, h)
            n = ht.keys.shape[0]
            if policy.kind == "random":
                idx = random_eviction(n, rs[l], child_seed(policy.seed, l, h))
            else:
                s = head_scores(policy, ht.keys_prerope, ht.keys, ht.values, ht.queries, l, h, method)
                if policy.kind == "snapkv" and policy.attn.snap_keep_window:
                    idx = _topk_with_window(s, rs[l], min(policy.attn.baseline_window, n))
                else:
                    idx = select_topk(s, rs[l])
            heads.append(tuple(int(i) for i in idx))
        layers.append(tuple(heads))

    sketch_meta = _effective_sketch(policy.sketch, bundle.head_dim, 0, 0)
    return RetentionPlan(
        retained=tuple(layers),
        retention_target=policy.retention,
        policy_name=policy.kind,
        seed=policy.seed,
        metadata={
            "policy": policy.to_json_dict(),
            "effective_sketch_k": sketch_meta.target_dim,
            "basis": {"kind": method.kind, "sigma_clamp": method.sigma_clamp},
            "n_layers": n_layers,
            "n_kv_heads": n_heads,
            "head_dim": bundle.head_dim,
            "seq_lens": bundle.seq_lens.tolist(),
        },
    )


def with_retention(policy: EvictionPolicy, retention) -> EvictionPolicy:
    """Copy of `policy` with a different retention target."""
    return replace(policy, retention=retention)
