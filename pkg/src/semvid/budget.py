"""Frame-level budget allocation.

Turns a global retention ratio into integer per-frame token quotas, weighting
frames by query relevance and by how much the frame differs from its
predecessor, then splits each quota into object / motion / context slots.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .errors import BudgetInfeasibleError, ValidationError
from .tensor_core import normalize_rows_l2, query_similarity

__all__ = [
    "HyperParams",
    "BudgetVector",
    "RoleQuota",
    "total_budget",
    "frame_relevance",
    "frame_variation",
    "mix_weights",
    "largest_remainder",
    "allocate_budgets",
    "partition_roles",
]

# r*T*P is computed in floating point; without the slack 0.29*100 floors to 28
_FLOOR_EPS = 1e-9


@dataclass(frozen=True)
class HyperParams:
    alpha: float = 0.6
    lambda_mmr: float = 0.8
    beta: float = 0.5
    k_ctx: int = 3
    retention_ratio: float = 0.125

    def __post_init__(self):
        for name in ("alpha", "lambda_mmr", "beta"):
            value = getattr(self, name)
            if not (0.0 <= value <= 1.0):
                raise ValidationError(f"{name}={value} must lie in [0, 1]")
        if isinstance(self.k_ctx, bool) or int(self.k_ctx) != self.k_ctx or self.k_ctx < 0:
            raise ValidationError(f"k_ctx={self.k_ctx} must be a nonnegative integer")
        object.__setattr__(self, "k_ctx", int(self.k_ctx))
        if not (0.0 < self.retention_ratio <= 1.0):
            raise ValidationError(f"retention_ratio={self.retention_ratio} must lie in (0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "HyperParams":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown hyperparameter keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "HyperParams":
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ValidationError("hyperparameter config must be a JSON object")
        return cls.from_dict(data)


@dataclass(frozen=True)
class BudgetVector:
    k: np.ndarray
    K: int

    def __post_init__(self):
        k = np.asarray(self.k, dtype=np.int64)
        object.__setattr__(self, "k", k)
        if int(k.sum()) != self.K:
            raise ValidationError(f"per-frame budgets sum to {int(k.sum())}, expected {self.K}")
        if (k < 0).any():
            raise ValidationError("per-frame budgets must be nonnegative")

    @property
    def T(self) -> int:
        return int(self.k.size)


@dataclass(frozen=True)
class RoleQuota:
    n_obj: np.ndarray
    n_mot: np.ndarray
    n_ctx: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.n_obj + self.n_mot + self.n_ctx


def total_budget(r: float, T: int, P: int) -> int:
    """K = floor(r * T * P)."""
    return int(math.floor(r * T * P + _FLOOR_EPS))


def frame_relevance(v_glb, q) -> np.ndarray:
    """Mean cosine between each frame-global feature and the query tokens."""
    g = normalize_rows_l2(v_glb)
    qh = normalize_rows_l2(q)
    return query_similarity(g, qh, mode="mean")


def frame_variation(v_glb) -> np.ndarray:
    """L2 distance between consecutive normalized frame features.

    The first frame copies the second frame's score; a single frame scores 0.
    """
    g = normalize_rows_l2(v_glb)
    T = g.shape[0]
    if T == 1:
        return np.zeros(1)
    d = np.linalg.norm(g[1:] - g[:-1], axis=1)
    return np.concatenate([d[:1], d])


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0.0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def mix_weights(s_el, s_ec, alpha: float) -> np.ndarray:
    """Convex mix of the min-max-normalized relevance and variation streams.

    Falls back to uniform weights when the mix is identically zero.
    """
    s_el = np.asarray(s_el, dtype=np.float64)
    s_ec = np.asarray(s_ec, dtype=np.float64)
    if s_el.shape != s_ec.shape or s_el.ndim != 1:
        raise ValidationError(f"score streams must be equal-length vectors, got {s_el.shape} and {s_ec.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha={alpha} must lie in [0, 1]")
    w = alpha * _minmax(s_el) + (1.0 - alpha) * _minmax(s_ec)
    if not (w > 0).any():
        return np.full_like(w, 1.0 / w.size)
    return w


def largest_remainder(targets, total: int) -> np.ndarray:
    """Round nonnegative real targets to integers summing to ``total``.

    Each entry is floored, then the leftover units go to the largest
    fractional parts, ties to the lower index.
    """
    t = np.asarray(targets, dtype=np.float64)
    base = np.floor(t).astype(np.int64)
    extra = total - int(base.sum())
    if extra < 0 or extra > t.size:
        raise ValidationError(f"cannot round targets summing to {t.sum():.6f} onto total {total}")
    if extra:
        frac = t - base
        order = np.argsort(-frac, kind="stable")
        base[order[:extra]] += 1
    return base


def allocate_budgets(w, r: float, T: int, P: int, k_ctx: int) -> BudgetVector:
    """Integer per-frame quotas proportional to ``w`` above a floor of ``k_ctx``.

    Frames whose share would exceed ``P`` are pinned at ``P`` and the surplus
    is spread over the remaining frames, repeating until nothing overflows.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (T,):
        raise ValidationError(f"weight vector has shape {w.shape}, expected ({T},)")
    if (w < 0).any() or not np.isfinite(w).all():
        raise ValidationError("weights must be finite and nonnegative")
    if not (0.0 < r <= 1.0):
        raise ValidationError(f"retention ratio {r} must lie in (0, 1]")
    if k_ctx > P:
        raise BudgetInfeasibleError(f"k_ctx={k_ctx} exceeds patches per frame P={P}")
    K = total_budget(r, T, P)
    if K < T * k_ctx:
        min_r = T * k_ctx / (T * P)
        raise BudgetInfeasibleError(
            f"budget K={K} is below the per-frame floor T*k_ctx={T * k_ctx}; "
            f"use a retention ratio of at least {min_r:.6g}",
            min_ratio=min_r,
        )
    if w.sum() <= 0:
        w = np.ones(T)

    k = np.zeros(T, dtype=np.int64)
    pinned = np.zeros(T, dtype=bool)
    while True:
        active = ~pinned
        n_active = int(active.sum())
        remaining = K - int(k[pinned].sum())
        wa = w[active]
        share = wa / wa.sum() if wa.sum() > 0 else np.full(n_active, 1.0 / n_active)
        targets = (remaining - n_active * k_ctx) * share + k_ctx
        over = targets > P
        if not over.any():
            k[active] = largest_remainder(targets, remaining)
            break
        idx = np.flatnonzero(active)[over]
        k[idx] = P
        pinned[idx] = True
        if pinned.all():
            break
    return BudgetVector(k=k, K=K)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def partition_roles(budget: BudgetVector, alpha: float, k_ctx: int) -> RoleQuota:
    """Split each frame's quota into object, motion and context slots."""
    k = budget.k
    n_ctx = np.minimum(k_ctx, k)
    room = k - n_ctx
    n_obj = np.array([_round_half_up(alpha * kt) for kt in k], dtype=np.int64)
    n_obj = np.clip(n_obj, 0, room)
    n_mot = k - n_obj - n_ctx
    return RoleQuota(n_obj=n_obj, n_mot=n_mot, n_ctx=n_ctx.astype(np.int64))
