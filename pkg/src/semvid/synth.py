"""Seeded synthetic videos with planted query evidence.

A scenario is a patch tensor whose background comes from per-scene bases
(switching at the boundary frames) plus per-frame jitter, with query-aligned
evidence patches planted in the evidence frames. Attention layers come from
random projections of the normalized patches, and the query injection is a
tempered softmax of each token's best query cosine. Nothing here models real
VLM statistics; the construction only has to make the planted evidence
recoverable and the metric code exercisable.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .errors import ValidationError
from .graph import AttentionStack
from .selector import Selection
from .tensor_core import as_patches, as_query, normalize_rows_l2, query_similarity

__all__ = ["ScenarioSpec", "Scenario", "generate_scenario", "synth_attention", "evidence_recall"]

# sub-stream offsets; new consumers get new offsets so old draws never move
_PATCH_STREAM = 0
_QUERY_STREAM = 1
_ATTN_STREAM = 2
_EVIDENCE_STREAM = 3

_QUERY_SPREAD = 0.2
_BACKGROUND_RELEVANCE = 0.05
_NORM_SPREAD = 0.25
_SINK_SCALE = 4.0


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    T: int = 16
    P: int = 36
    D: int = 32
    N: int = 4
    L: int = 4
    n_evidence: int = 3
    evidence_frames: tuple[int, ...] = (6, 7, 8, 9)
    boundary_frames: tuple[int, ...] = (5, 11)
    jitter: float = 0.25
    align: float = 0.8
    temp: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "evidence_frames", tuple(int(t) for t in self.evidence_frames))
        object.__setattr__(self, "boundary_frames", tuple(int(t) for t in self.boundary_frames))
        for name in ("T", "P", "D", "N", "L", "n_evidence"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name}={getattr(self, name)} must be >= 1")
        if self.n_evidence > self.P:
            raise ValidationError(f"n_evidence={self.n_evidence} exceeds P={self.P}")
        if any(t < 0 or t >= self.T for t in self.evidence_frames):
            raise ValidationError(f"evidence frames {self.evidence_frames} fall outside [0, {self.T})")
        if any(t < 1 or t >= self.T for t in self.boundary_frames):
            raise ValidationError(f"boundary frames {self.boundary_frames} fall outside [1, {self.T})")
        if self.jitter < 0:
            raise ValidationError(f"jitter={self.jitter} must be >= 0")
        if not (0.0 < self.align <= 1.0):
            raise ValidationError(f"align={self.align} must lie in (0, 1]")
        if self.temp <= 0:
            raise ValidationError(f"temp={self.temp} must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["evidence_frames"] = list(self.evidence_frames)
        d["boundary_frames"] = list(self.boundary_frames)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "ScenarioSpec":
        return cls.from_dict(json.loads(text))

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return ScenarioSpec.from_dict({**self.to_dict(), "seed": seed})


@dataclass
class Scenario:
    patches: np.ndarray
    query: np.ndarray
    attention: AttentionStack
    evidence_mask: np.ndarray
    boundaries: tuple[int, ...]
    spec: ScenarioSpec = field(repr=False)


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def _unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def _orthonormal_span(q: np.ndarray) -> np.ndarray:
    # rows of the returned matrix span the query tokens
    u, s, vt = np.linalg.svd(q, full_matrices=False)
    return vt[s > 1e-10 * s.max()]


def generate_scenario(spec: ScenarioSpec) -> Scenario:
    """Build a scenario deterministically from ``spec``."""
    T, P, D, N = spec.T, spec.P, spec.D, spec.N

    rq = _rng(spec.seed, _QUERY_STREAM)
    center = _unit(rq.standard_normal(D))
    query = _unit(center + _QUERY_SPREAD * rq.standard_normal((N, D)) / np.sqrt(D))
    span = _orthonormal_span(query)

    def off_query(x):
        return x - (x @ span.T) @ span

    rp = _rng(spec.seed, _PATCH_STREAM)
    cuts = sorted(set(spec.boundary_frames))
    scene_of = np.searchsorted(cuts, np.arange(T), side="right")
    n_scenes = len(cuts) + 1

    # per-scene background: query-orthogonal directions plus a small query lean
    bases = []
    for _ in range(n_scenes):
        direction = _unit(off_query(rp.standard_normal((P, D))))
        lean = rp.uniform(-_BACKGROUND_RELEVANCE, _BACKGROUND_RELEVANCE, size=(P, 1))
        base = np.sqrt(1.0 - lean**2) * direction + lean * center
        scale = np.exp(_NORM_SPREAD * rp.standard_normal(P))
        sinks = rp.choice(P, size=max(1, P // 16), replace=False)
        scale[sinks] *= _SINK_SCALE
        bases.append((base, scale))

    noise = rp.standard_normal((T, P, D)) / np.sqrt(D)
    patches = np.empty((T, P, D))
    for t in range(T):
        base, scale = bases[scene_of[t]]
        patches[t] = scale[:, None] * _unit(base + spec.jitter * noise[t])

    re = _rng(spec.seed, _EVIDENCE_STREAM)
    evidence_mask = np.zeros((T, P), dtype=bool)
    ev_frames = sorted(set(spec.evidence_frames))
    if ev_frames:
        # the evidence object keeps its patch positions for the whole moment
        slots = re.choice(P, size=spec.n_evidence, replace=False)
        token_of = re.integers(0, N, size=spec.n_evidence)
        for t in ev_frames:
            ev_noise = re.standard_normal((spec.n_evidence, D)) / np.sqrt(D)
            ev = spec.align * query[token_of] + (1.0 - spec.align) * ev_noise
            patches[t, slots] = _unit(ev)
            evidence_mask[t, slots] = True

    patches = patches.astype(np.float32)
    query = query.astype(np.float32)
    attention = synth_attention(patches, query, spec.L, spec.temp, spec.seed)
    return Scenario(
        patches=patches,
        query=query,
        attention=attention,
        evidence_mask=evidence_mask,
        boundaries=tuple(cuts),
        spec=spec,
    )


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def synth_attention(patches, query, L: int, temp: float, seed: int) -> AttentionStack:
    """Softmax self-attention from seeded random projections, plus a query injection.

    Layer ``l`` uses ``W_l`` with i.i.d. standard normal entries; logits are
    ``(X W_l)(X W_l)^T / sqrt(D)`` over the normalized patches ``X``.
    """
    v = as_patches(patches)
    q = as_query(query, dim=v.shape[2])
    if L < 1:
        raise ValidationError(f"L={L} must be >= 1")
    if temp <= 0:
        raise ValidationError(f"temp={temp} must be > 0")
    T, P, D = v.shape
    x = normalize_rows_l2(v.reshape(T * P, D))
    ra = _rng(seed, _ATTN_STREAM)
    layers = np.empty((L, T * P, T * P))
    for l in range(L):
        h = x @ ra.standard_normal((D, D))
        layers[l] = _softmax(h @ h.T / np.sqrt(D), axis=1)
    relevance = query_similarity(x, normalize_rows_l2(q), mode="max")
    injection = _softmax(relevance / temp)
    return AttentionStack.full(layers, injection, T, P)


def evidence_recall(sel: Selection, sc: Scenario) -> float:
    """Fraction of planted evidence patches kept by ``sel`` (any role)."""
    mask = sc.evidence_mask
    if sel.T != mask.shape[0] or sel.P != mask.shape[1]:
        raise ValidationError(f"selection grid ({sel.T}, {sel.P}) does not match scenario {mask.shape}")
    total = int(mask.sum())
    if total == 0:
        return 1.0
    return float((sel.mask() & mask).sum() / total)
