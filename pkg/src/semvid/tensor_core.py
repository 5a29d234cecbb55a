"""Dense-tensor primitives shared by the budget, selector and metric code.

Inputs are stored as float32; every reduction (dot products, means, norms)
is accumulated in float64 so that rankings and tie-breaks are stable.
"""

from __future__ import annotations

import numpy as np

from .errors import ValidationError

__all__ = [
    "check_finite",
    "as_patches",
    "as_query",
    "normalize_rows_l2",
    "pool_global",
    "query_similarity",
    "topk",
]


def check_finite(x: np.ndarray, name: str = "input") -> None:
    """Raise ValidationError naming the first non-finite element of ``x``."""
    bad = ~np.isfinite(x)
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValidationError(f"{name} has non-finite value {x[idx]!r} at index {idx}")


def as_patches(v) -> np.ndarray:
    """Validate a patch tensor of shape (T, P, D) and return it as float32."""
    arr = np.asarray(v, dtype=np.float32)
    if arr.ndim != 3:
        raise ValidationError(f"patch tensor must be 3-D (T, P, D), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValidationError(f"patch tensor has an empty axis: shape {arr.shape}")
    check_finite(arr, "patch tensor")
    return arr


def as_query(q, dim: int | None = None) -> np.ndarray:
    """Validate query tokens of shape (N, D) and return them as float32."""
    arr = np.asarray(q, dtype=np.float32)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"query must be 2-D (N, D) with N, D >= 1, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValidationError(f"query width {arr.shape[1]} does not match patch width {dim}")
    check_finite(arr, "query")
    return arr


def normalize_rows_l2(x) -> np.ndarray:
    """Scale every row along the last axis to unit L2 norm.

    All-zero rows are returned unchanged so padded patches stay inert. Works on
    any array with ndim >= 1; output is float64.
    """
    arr = np.asarray(x, dtype=np.float64)
    check_finite(arr)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return arr / safe


def pool_global(v) -> np.ndarray:
    """Mean-pool a (T, P, D) patch tensor over patches, giving (T, D)."""
    arr = as_patches(v)
    return arr.astype(np.float64).mean(axis=1)


def query_similarity(x, q, mode: str = "mean") -> np.ndarray:
    """Cosine relevance of each row of ``x`` to the query tokens.

    ``x`` has shape (..., D) and ``q`` shape (N, D); both are expected to be
    row-normalized already. ``mode="mean"`` averages the N dot products,
    ``mode="max"`` keeps the largest. Output shape is ``x.shape[:-1]``.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 2:
        raise ValidationError(f"query must be 2-D, got shape {q.shape}")
    if x.shape[-1] != q.shape[1]:
        raise ValidationError(f"width mismatch: x has D={x.shape[-1]}, query has D={q.shape[1]}")
    sims = x @ q.T
    if mode == "mean":
        out = sims.mean(axis=-1)
    elif mode == "max":
        out = sims.max(axis=-1)
    else:
        raise ValidationError(f"unknown similarity mode {mode!r}")
    # rounding can push |cos| a hair past 1
    return np.clip(out, -1.0, 1.0)


def topk(scores, k: int) -> list[int]:
    """Indices of the ``k`` largest scores, descending; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    if k < 0 or k > s.size:
        raise ValidationError(f"k={k} outside [0, {s.size}]")
    if k == 0:
        return []
    # stable sort on the negated scores keeps ascending index among equals
    order = np.argsort(-s, kind="stable")
    return [int(i) for i in order[:k]]
