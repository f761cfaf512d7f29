"""Exact and approximate statistical leverage scores of key matrices.

The leverage score of row i is the squared norm of the i-th row of an
orthonormal column basis U of the matrix; scores lie in [0, 1] and sum to
the rank. Rather than an SVD of the full N x d matrix, U is recovered from
the d x d Gram matrix (svd of K^T K gives V and the squared spectrum, then
U = K V Sigma^-1), which turns the computation into one small SVD plus two
GEMMs. Approximate scores right-sketch K first and run the same recovery on
the N x k sketch.

Three basis subroutines are provided: the Gram-SVD route above (default),
reduced QR, and Gram eigendecomposition. All three share one robustness
policy: singular values are clamped at a relative floor so rank-deficient
inputs degrade gracefully instead of failing.

Scores are computed on pre-position-embedding keys when driven from a
bundle; position embedding rotates keys and distorts the spectrum the
scores are meant to summarize.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParameterError
from .kvstore import ScoreVector
from .sketch import SketchSpec, apply_sketch

BASIS_KINDS = ("svd_gram", "qr", "eig_gram")


@dataclass(frozen=True)
class BasisMethod:
    """Subroutine choice for recovering the orthonormal row basis."""

    kind: str = "svd_gram"
    sigma_clamp: float = 1e-6

    def __post_init__(self):
        if self.kind not in BASIS_KINDS:
            raise ParameterError(f"unknown basis method {self.kind!r}")
        if not 0.0 < self.sigma_clamp < 1.0:
            raise ParameterError(f"sigma_clamp must be in (0, 1), got {self.sigma_clamp}")


@dataclass(frozen=True)
class LeverageResult:
    """Outlier scores plus the provenance needed to reproduce them."""

    scores: ScoreVector
    effective_rank: int
    method: BasisMethod
    sketch: SketchSpec


def _basis_and_rank(khat: np.ndarray, method: BasisMethod):
    """Orthonormal-column basis of khat and the count of non-clamped directions."""
    khat = np.ascontiguousarray(khat, dtype=np.float64)
    n, k = khat.shape

    if method.kind == "qr":
        q, r = np.linalg.qr(khat, mode="reduced")
        diag = np.abs(np.diag(r))
        dmax = diag.max(initial=0.0)
        if dmax == 0.0:
            return np.zeros((n, k)), 0
        rank = int((diag > method.sigma_clamp * dmax).sum())
        return q, rank

    gram = khat.T @ khat
    if method.kind == "svd_gram":
        v, sq, _ = np.linalg.svd(gram)
    else:
        sq, v = np.linalg.eigh(gram)
        sq = sq[::-1]
        v = v[:, ::-1]
    sigma = np.sqrt(np.clip(sq, 0.0, None))
    smax = sigma[0]
    if smax == 0.0:
        return np.zeros((n, k)), 0
    floor = method.sigma_clamp * smax
    rank = int((sigma > floor).sum())
    u = khat @ (v / np.maximum(sigma, floor))
    return u, rank


def row_basis(khat: np.ndarray, method: BasisMethod = BasisMethod()) -> np.ndarray:
    """Orthonormal-column basis U of khat via the chosen subroutine.

    Clamping absorbs rank deficiency: clamped directions come back with
    near-zero (gram routes) or unnormalized (qr) columns rather than
    raising.
    """
    khat = np.asarray(khat)
    if khat.ndim != 2:
        raise ParameterError("khat must be 2-D")
    if not np.isfinite(khat).all():
        raise DataError("khat contains non-finite values")
    return _basis_and_rank(khat, method)[0]


def approx_leverage(
    K: np.ndarray, sketch: SketchSpec, method: BasisMethod = BasisMethod()
) -> LeverageResult:
    """Leverage scores of the rows of K, computed on the sketched matrix.

    With sketch kind "none" this is the exact computation. A square
    invertible sketch (k = d) preserves the column space, hence the exact
    scores; smaller k trades accuracy for speed, degrading with the
    condition number of K.
    """
    K = np.asarray(K)
    if K.ndim != 2:
        raise ParameterError("K must be 2-D")
    if not np.isfinite(K).all():
        raise DataError("K contains non-finite values")
    khat = apply_sketch(K, sketch)
    u, rank = _basis_and_rank(khat, method)
    ell = np.einsum("ij,ij->i", u, u)
    return LeverageResult(
        scores=ScoreVector(ell, kind="outlier"),
        effective_rank=rank,
        method=method,
        sketch=sketch,
    )


def exact_leverage(K: np.ndarray, method: BasisMethod = BasisMethod()) -> LeverageResult:
    """Exact leverage scores via the Gram identity (no sketching)."""
    K = np.asarray(K)
    if K.ndim != 2:
        raise ParameterError("K must be 2-D")
    none = SketchSpec(kind="none", target_dim=K.shape[1] if K.shape[1] >= 1 else 1)
    return approx_leverage(K, none, method)
