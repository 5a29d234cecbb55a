"""Role-aware token selection inside each frame.

Object tokens come from greedy maximal-marginal-relevance over query
relevance, motion tokens from query-weighted temporal change, and context
tokens from one frame prototype plus the highest-norm patches. Later roles
never reuse an index taken by an earlier one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .budget import BudgetVector, HyperParams, RoleQuota
from .errors import ValidationError
from .tensor_core import as_patches, as_query, normalize_rows_l2, query_similarity, topk

__all__ = [
    "ROLES",
    "FrameSelection",
    "Selection",
    "patch_relevance",
    "mmr_select_objects",
    "motion_magnitude",
    "select_motion_tokens",
    "select_context_tokens",
    "assemble_selection",
]

ROLES = ("object", "motion", "context")


@dataclass
class FrameSelection:
    object: list[int] = field(default_factory=list)
    motion: list[int] = field(default_factory=list)
    context: list[int] = field(default_factory=list)

    def indices(self) -> list[int]:
        return self.object + self.motion + self.context

    def __len__(self) -> int:
        return len(self.object) + len(self.motion) + len(self.context)


@dataclass
class Selection:
    """Retained tokens per frame, each tagged with the role that claimed it.

    Role lists hold patch indices in selection order. ``params`` records the
    effective configuration (hyperparameters, strategy, seed) that produced it.
    """

    frames: list[FrameSelection]
    P: int
    budget: list[int]
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        for t, fs in enumerate(self.frames):
            idx = fs.indices()
            if len(set(idx)) != len(idx):
                raise ValidationError(f"frame {t} selects a patch index twice")
            if any(i < 0 or i >= self.P for i in idx):
                raise ValidationError(f"frame {t} has a patch index outside [0, {self.P})")
            if len(idx) != self.budget[t]:
                raise ValidationError(f"frame {t} keeps {len(idx)} tokens but its budget is {self.budget[t]}")

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def K(self) -> int:
        return int(sum(self.budget))

    def role_counts(self) -> dict[str, np.ndarray]:
        return {r: np.array([len(getattr(fs, r)) for fs in self.frames], dtype=np.int64) for r in ROLES}

    def mask(self) -> np.ndarray:
        m = np.zeros((self.T, self.P), dtype=bool)
        for t, fs in enumerate(self.frames):
            m[t, fs.indices()] = True
        return m

    def flat_indices(self) -> np.ndarray:
        """Sorted flat token indices ``t * P + p`` of every kept token."""
        return np.flatnonzero(self.mask().ravel())

    def to_dict(self) -> dict:
        frames = []
        for t, fs in enumerate(self.frames):
            entry = {"frame": t}
            for r in ROLES:
                entry[r] = sorted(getattr(fs, r))
            entry["order"] = {r: list(getattr(fs, r)) for r in ROLES}
            frames.append(entry)
        return {
            "T": self.T,
            "P": self.P,
            "K": self.K,
            "frames": frames,
            "budget": [int(b) for b in self.budget],
            "params": self.params,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "Selection":
        try:
            P = int(data["P"])
            raw_frames = data["frames"]
            frames = []
            for entry in sorted(raw_frames, key=lambda e: e["frame"]):
                order = entry.get("order") or {}
                frames.append(
                    FrameSelection(**{r: [int(i) for i in order.get(r, entry.get(r, []))] for r in ROLES})
                )
            budget = data.get("budget") or [len(fs) for fs in frames]
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed selection document: {exc}") from exc
        if "T" in data and int(data["T"]) != len(frames):
            raise ValidationError(f"selection declares T={data['T']} but lists {len(frames)} frames")
        return cls(frames=frames, P=P, budget=[int(b) for b in budget], params=data.get("params", {}))

    @classmethod
    def from_json(cls, text: str) -> "Selection":
        return cls.from_dict(json.loads(text))


def patch_relevance(v, q) -> np.ndarray:
    """(T, P) map of mean cosine between every patch and the query tokens."""
    v = as_patches(v)
    q = as_query(q)
    if q.shape[1] != v.shape[2]:
        raise ValidationError(f"query width {q.shape[1]} does not match patch width {v.shape[2]}")
    return query_similarity(normalize_rows_l2(v), normalize_rows_l2(q), mode="mean")


def _excluded_sets(excluded, T: int) -> list[set[int]]:
    if excluded is None:
        return [set() for _ in range(T)]
    if len(excluded) != T:
        raise ValidationError(f"exclusion list covers {len(excluded)} frames, expected {T}")
    return [set(int(i) for i in e) for e in excluded]


def _quota_array(quota, T: int, name: str) -> np.ndarray:
    arr = np.asarray(quota, dtype=np.int64).ravel()
    if arr.size != T:
        raise ValidationError(f"{name} quota covers {arr.size} frames, expected {T}")
    if (arr < 0).any():
        raise ValidationError(f"{name} quota must be nonnegative")
    return arr


def _check_feasible(quota: np.ndarray, P: int, excluded: list[set[int]], name: str) -> None:
    for t, n in enumerate(quota):
        free = P - len(excluded[t])
        if n > free:
            raise ValidationError(f"frame {t}: {name} quota {n} exceeds the {free} available patches")


def mmr_select_objects(
    v_hat,
    s_evi,
    n_obj,
    lambda_mmr: float,
    excluded: Sequence | None = None,
) -> list[list[int]]:
    """Greedy MMR pick of object tokens per frame.

    Each step takes ``argmax_p lambda * s_evi[p] - (1 - lambda) * m[p]`` where
    ``m[p]`` is the running max similarity between patch ``p`` and the picks so
    far. ``m`` starts at zero and is refreshed with one matrix-vector product
    per pick, so a frame costs O(n_obj * P * D) rather than rescanning the
    selected set each step.
    """
    v_hat = np.asarray(v_hat, dtype=np.float64)
    s_evi = np.asarray(s_evi, dtype=np.float64)
    T, P, _ = v_hat.shape
    if s_evi.shape != (T, P):
        raise ValidationError(f"relevance map shape {s_evi.shape} does not match ({T}, {P})")
    if not (0.0 <= lambda_mmr <= 1.0):
        raise ValidationError(f"lambda_mmr={lambda_mmr} must lie in [0, 1]")
    n_obj = _quota_array(n_obj, T, "object")
    excl = _excluded_sets(excluded, T)
    _check_feasible(n_obj, P, excl, "object")

    picks: list[list[int]] = []
    for t in range(T):
        chosen: list[int] = []
        if n_obj[t]:
            feats = v_hat[t]
            relevance = lambda_mmr * s_evi[t]
            m = np.zeros(P)
            open_ = np.ones(P, dtype=bool)
            open_[list(excl[t])] = False
            for _ in range(n_obj[t]):
                score = relevance - (1.0 - lambda_mmr) * m
                score[~open_] = -np.inf
                best = int(np.argmax(score))
                chosen.append(best)
                open_[best] = False
                np.maximum(m, feats @ feats[best], out=m)
        picks.append(chosen)
    return picks


def motion_magnitude(v_hat) -> np.ndarray:
    """Per-patch temporal change of normalized features, shape (T, P).

    Endpoints use the one-sided difference; interior frames average the
    backward and forward differences. A single frame gives zeros.
    """
    v_hat = np.asarray(v_hat, dtype=np.float64)
    T, P = v_hat.shape[:2]
    if T == 1:
        return np.zeros((1, P))
    step = np.linalg.norm(v_hat[1:] - v_hat[:-1], axis=-1)  # (T-1, P)
    out = np.empty((T, P))
    out[0] = step[0]
    out[-1] = step[-1]
    if T > 2:
        out[1:-1] = 0.5 * (step[:-1] + step[1:])
    return out


def _minmax_rows(x: np.ndarray) -> np.ndarray:
    lo = x.min(axis=-1, keepdims=True)
    span = x.max(axis=-1, keepdims=True) - lo
    return np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)


def motion_scores(v_hat, q_hat, m_mot, beta: float) -> np.ndarray:
    """Fused motion score: per-frame min-max of motion and max-query cosine, mixed by ``beta``."""
    rel = query_similarity(v_hat, q_hat, mode="max")
    return (1.0 - beta) * _minmax_rows(np.asarray(m_mot, dtype=np.float64)) + beta * _minmax_rows(rel)


def _topk_open(scores: np.ndarray, n: int, closed: set[int]) -> list[int]:
    s = np.array(scores, dtype=np.float64)
    if closed:
        s[list(closed)] = -np.inf
    return topk(s, n)


def select_motion_tokens(v_hat, q_hat, m_mot, n_mot, beta: float, excluded: Sequence | None = None) -> list[list[int]]:
    """Top motion-score patches per frame among those not already excluded."""
    v_hat = np.asarray(v_hat, dtype=np.float64)
    T, P, _ = v_hat.shape
    if not (0.0 <= beta <= 1.0):
        raise ValidationError(f"beta={beta} must lie in [0, 1]")
    n_mot = _quota_array(n_mot, T, "motion")
    excl = _excluded_sets(excluded, T)
    _check_feasible(n_mot, P, excl, "motion")
    scores = motion_scores(v_hat, q_hat, m_mot, beta)
    return [_topk_open(scores[t], int(n_mot[t]), excl[t]) for t in range(T)]


def select_context_tokens(v, v_hat, v_glb_hat, n_ctx, excluded: Sequence | None = None) -> list[list[int]]:
    """Prototype patch (closest to the frame mean) followed by the highest-norm patches."""
    v = np.asarray(v, dtype=np.float64)
    v_hat = np.asarray(v_hat, dtype=np.float64)
    v_glb_hat = np.asarray(v_glb_hat, dtype=np.float64)
    T, P, _ = v_hat.shape
    n_ctx = _quota_array(n_ctx, T, "context")
    excl = _excluded_sets(excluded, T)
    _check_feasible(n_ctx, P, excl, "context")
    saliency = np.linalg.norm(v, axis=-1)
    proto_score = np.einsum("tpd,td->tp", v_hat, v_glb_hat)
    picks = []
    for t in range(T):
        if n_ctx[t] == 0:
            picks.append([])
            continue
        proto = _topk_open(proto_score[t], 1, excl[t])[0]
        rest = _topk_open(saliency[t], int(n_ctx[t]) - 1, excl[t] | {proto})
        picks.append([proto] + rest)
    return picks


def assemble_selection(v, q, budget: BudgetVector, quota: RoleQuota, hp: HyperParams) -> Selection:
    """Run object, motion and context selection in that order and merge them."""
    v = as_patches(v)
    q = as_query(q, dim=v.shape[2])
    T, P, _ = v.shape
    if budget.T != T:
        raise ValidationError(f"budget covers {budget.T} frames, patches have {T}")
    if (budget.k > P).any():
        raise ValidationError(f"a per-frame budget exceeds P={P}")
    if not np.array_equal(quota.total, budget.k):
        raise ValidationError("role quotas do not add up to the per-frame budgets")

    v_hat = normalize_rows_l2(v)
    q_hat = normalize_rows_l2(q)
    s_evi = query_similarity(v_hat, q_hat, mode="mean")
    glb_hat = normalize_rows_l2(v.astype(np.float64).mean(axis=1))

    objects = mmr_select_objects(v_hat, s_evi, quota.n_obj, hp.lambda_mmr)
    taken = [set(o) for o in objects]

    # quotas sum to k[t] <= P, so the later roles always find enough free patches
    motions = select_motion_tokens(v_hat, q_hat, motion_magnitude(v_hat), quota.n_mot, hp.beta, excluded=taken)
    for s, mo in zip(taken, motions):
        s.update(mo)
    contexts = select_context_tokens(v, v_hat, glb_hat, quota.n_ctx, excluded=taken)

    frames = [FrameSelection(object=o, motion=mo, context=c) for o, mo, c in zip(objects, motions, contexts)]
    return Selection(frames=frames, P=P, budget=[int(x) for x in budget.k], params={"strategy": "semvid", **hp.to_dict()})

