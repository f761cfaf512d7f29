"""Pure-numpy kernel implementations (fallback backend).

Signatures and in-place semantics match the compiled backend exactly; both
operate on C-contiguous float64 arrays.
"""

import numpy as np


def fwht_rows(x):
    """Unnormalized Walsh-Hadamard transform of every row, in place.

    ``x`` must be 2-D C-contiguous float64 with a power-of-two column count.
    """
    rows, n = x.shape
    if n & (n - 1):
        raise ValueError(f"column count must be a power of two, got {n}")
    h = 1
    while h < n:
        y = x.reshape(rows, n // (2 * h), 2, h)
        u = y[:, :, 0, :].copy()
        y[:, :, 0, :] += y[:, :, 1, :]
        y[:, :, 1, :] *= -1.0
        y[:, :, 1, :] += u
        h *= 2


def softmax_colsum(logits, out):
    """Accumulate the column sums of the row-softmax of ``logits`` into ``out``."""
    p = logits - logits.max(axis=1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=1, keepdims=True)
    out += p.sum(axis=0)


def causal_softmax_colsum(logits, start, out):
    """Masked variant of softmax_colsum: row i only sees columns <= start + i."""
    m, n = logits.shape
    visible = np.arange(n)[None, :] <= (start + np.arange(m))[:, None]
    p = np.where(visible, logits, -np.inf)
    p -= p.max(axis=1, keepdims=True)
    np.exp(p, out=p)
    p /= p.sum(axis=1, keepdims=True)
    out += p.sum(axis=0)
