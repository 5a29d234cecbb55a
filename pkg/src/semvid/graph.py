"""Attention-graph diagnostics for a pruning decision.

Per-layer attention matrices are treated as Markov transition matrices over
visual tokens. Evidence injected by the query is pushed backwards through the
layers to obtain a landing distribution; Evidence Retention compares the
landing distribution before and after pruning, and Connectivity Strength sums
the transition mass that flows between adjacent frames.

Tokens are addressed by flat index ``t * P + p``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .selector import Selection

log = logging.getLogger(__name__)

__all__ = [
    "AttentionStack",
    "MetricReport",
    "row_normalize_attention",
    "propagate_evidence",
    "restrict_graph",
    "evidence_retention",
    "cross_frame_mass",
    "connectivity_strength",
    "evaluate_selection",
]

ROW_TOL = 1e-5
DIST_TOL = 1e-6
LOG_FLOOR = 1e-12


@dataclass
class AttentionStack:
    """L transition matrices over a token set plus the query injection.

    ``frame_of[i]`` gives the frame of local token ``i``. On a full graph it is
    ``arange(T * P) // P``; a restricted graph keeps the frames of the kept
    tokens. ``substochastic`` relaxes the row-sum check to ``<= 1`` for
    graphs whose rows were cut but not renormalized.
    """

    layers: np.ndarray
    injection: np.ndarray
    T: int
    frame_of: np.ndarray
    substochastic: bool = False
    fallbacks: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.layers = np.asarray(self.layers, dtype=np.float64)
        self.injection = np.asarray(self.injection, dtype=np.float64)
        self.frame_of = np.asarray(self.frame_of, dtype=np.int64)
        if self.layers.ndim != 3 or self.layers.shape[1] != self.layers.shape[2]:
            raise ValidationError(f"attention layers must have shape (L, n, n), got {self.layers.shape}")
        L, n, _ = self.layers.shape
        if L < 1 or n < 1:
            raise ValidationError("attention stack needs at least one layer and one token")
        if self.injection.shape != (n,):
            raise ValidationError(f"injection has shape {self.injection.shape}, expected ({n},)")
        if self.frame_of.shape != (n,):
            raise ValidationError(f"frame map has shape {self.frame_of.shape}, expected ({n},)")
        if not np.isfinite(self.layers).all() or (self.layers < 0).any():
            raise ValidationError("attention weights must be finite and nonnegative")
        sums = self.layers.sum(axis=2)
        if self.substochastic:
            if (sums > 1.0 + ROW_TOL).any():
                raise ValidationError("a sub-stochastic layer has a row summing above 1")
        elif np.abs(sums - 1.0).max() > ROW_TOL:
            l, i = np.unravel_index(np.abs(sums - 1.0).argmax(), sums.shape)
            raise ValidationError(f"layer {l} row {i} sums to {sums[l, i]:.8f}, not 1")
        _check_distribution(self.injection, "injection")

    @classmethod
    def full(cls, layers, injection, T: int, P: int) -> "AttentionStack":
        layers = np.asarray(layers, dtype=np.float64)
        if layers.ndim == 2:
            layers = layers[None]
        if layers.shape[-1] != T * P:
            raise ValidationError(f"attention over {layers.shape[-1]} tokens does not match T*P={T * P}")
        return cls(layers=layers, injection=injection, T=T, frame_of=np.arange(T * P) // P)

    @property
    def L(self) -> int:
        return self.layers.shape[0]

    @property
    def n(self) -> int:
        return self.layers.shape[1]


@dataclass
class MetricReport:
    er_raw: float
    er_rel: float
    rho: float
    cs: float
    per_boundary: np.ndarray
    mode: str
    fallbacks: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "er_raw": self.er_raw,
            "er_rel": self.er_rel,
            "retained_mass": self.rho,
            "cs": self.cs,
            "per_boundary": np.asarray(self.per_boundary, dtype=np.float64).tolist(),
            "fallbacks": list(self.fallbacks),
        }


def _check_distribution(p: np.ndarray, name: str) -> None:
    if not np.isfinite(p).all() or (p < 0).any():
        raise ValidationError(f"{name} must be finite and nonnegative")
    if abs(p.sum() - 1.0) > DIST_TOL:
        raise ValidationError(f"{name} sums to {p.sum():.9f}, not 1")


def _normalize_rows(m: np.ndarray) -> tuple[np.ndarray, int]:
    sums = m.sum(axis=-1, keepdims=True)
    zero = sums[..., 0] <= 0
    out = np.where(sums > 0, m / np.where(sums > 0, sums, 1.0), 1.0 / m.shape[-1])
    return out, int(zero.sum())


def row_normalize_attention(raw_weights) -> np.ndarray:
    """Turn nonnegative attention weights into row-stochastic matrices.

    Accepts a single (n, n) matrix or an (L, n, n) stack. All-zero rows
    become uniform.
    """
    w = np.asarray(raw_weights, dtype=np.float64)
    if not np.isfinite(w).all():
        raise ValidationError("attention weights must be finite")
    if (w < 0).any():
        idx = tuple(int(i) for i in np.argwhere(w < 0)[0])
        raise ValidationError(f"negative attention weight {w[idx]} at index {idx}")
    out, n_zero = _normalize_rows(w)
    if n_zero:
        log.info("row_normalize_attention: %d all-zero rows replaced by uniform", n_zero)
    return out


def propagate_evidence(stack: AttentionStack, return_all: bool = False):
    """Push the injection backwards through the layers to the landing distribution.

    Starting from the injection at the top layer, each step applies
    ``pi <- P_l^T pi`` for l = L, ..., 2. With ``return_all`` the list of
    intermediate distributions (top layer first) is returned as well.
    """
    pi = stack.injection.copy()
    trail = [pi]
    for layer in stack.layers[:0:-1]:
        pi = layer.T @ pi
        trail.append(pi)
    if return_all:
        return pi, trail
    return pi


def restrict_graph(stack: AttentionStack, kept, mode: str = "reweighted") -> AttentionStack:
    """Sub-graph on the kept tokens.

    ``kept`` is a Selection or an iterable of flat token indices. In
    ``reweighted`` mode rows are renormalized (uniform if a row loses all its
    mass); ``restricted`` leaves the partial row sums as they are. The
    injection is always renormalized over the kept tokens.
    """
    if mode not in ("reweighted", "restricted"):
        raise ValidationError(f"unknown restriction mode {mode!r}")
    idx = kept.flat_indices() if isinstance(kept, Selection) else np.unique(np.asarray(list(kept), dtype=np.int64))
    if idx.size == 0:
        raise ValidationError("cannot restrict the attention graph to an empty token set")
    if idx[0] < 0 or idx[-1] >= stack.n:
        raise ValidationError(f"kept token index outside [0, {stack.n})")

    fallbacks = []
    sub = stack.layers[:, idx][:, :, idx]
    if mode == "reweighted":
        sub, n_zero = _normalize_rows(sub)
        if n_zero:
            fallbacks.append(f"{n_zero} rows with no kept mass set uniform")
    inj = stack.injection[idx]
    if inj.sum() > 0:
        inj = inj / inj.sum()
    else:
        inj = np.full(idx.size, 1.0 / idx.size)
        fallbacks.append("injection has no mass on kept tokens; set uniform")
    for msg in fallbacks:
        log.info("restrict_graph: %s", msg)
    return AttentionStack(
        layers=sub,
        injection=inj,
        T=stack.T,
        frame_of=stack.frame_of[idx],
        substochastic=(mode == "restricted"),
        fallbacks=fallbacks,
    )


def _neg_cross_entropy(p: np.ndarray, q: np.ndarray) -> float:
    support = p > 0
    return float(np.sum(p[support] * np.log(np.maximum(q[support], LOG_FLOOR))))


def evidence_retention(pi_full, pi_pruned, kept) -> tuple[float, float, float]:
    """Return ``(er_raw, er_rel, rho)`` for a pruned landing distribution.

    ``pi_pruned`` is indexed like the sorted ``kept`` flat indices. Mass the
    full distribution places on dropped tokens is spread evenly over them
    before the cross-entropy is taken.
    """
    pi_full = np.asarray(pi_full, dtype=np.float64)
    pi_pruned = np.asarray(pi_pruned, dtype=np.float64)
    idx = kept.flat_indices() if isinstance(kept, Selection) else np.unique(np.asarray(list(kept), dtype=np.int64))
    _check_distribution(pi_full, "full landing distribution")
    _check_distribution(pi_pruned, "pruned landing distribution")
    if pi_pruned.shape != idx.shape:
        raise ValidationError(f"pruned distribution has {pi_pruned.size} entries for {idx.size} kept tokens")
    n = pi_full.size
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise ValidationError(f"kept token index outside [0, {n})")

    rho = min(1.0, float(pi_full[idx].sum()))
    dropped = n - idx.size
    pi_bar = np.full(n, (1.0 - rho) / dropped if dropped else 0.0)
    pi_bar[idx] = rho * pi_pruned
    er_raw = float(np.exp(_neg_cross_entropy(pi_full, pi_bar)))
    if dropped == 0:
        return er_raw, 1.0, rho
    er_full = float(np.exp(_neg_cross_entropy(pi_full, pi_full)))
    return er_raw, er_raw / er_full, rho


def cross_frame_mass(stack: AttentionStack) -> np.ndarray:
    """Per-layer transition mass from each frame to the next, shape (L, T-1)."""
    T = stack.T
    if T < 2:
        return np.zeros((stack.L, 0))
    onehot = np.zeros((stack.n, T))
    onehot[np.arange(stack.n), stack.frame_of] = 1.0
    # block[l, a, b] = total mass from frame a to frame b
    block = onehot.T @ stack.layers @ onehot
    return block[:, np.arange(T - 1), np.arange(1, T)]


def connectivity_strength(gamma) -> float:
    """Layer-averaged sum of adjacent-frame transition mass."""
    g = np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2:
        raise ValidationError(f"boundary mass must be 2-D (L, T-1), got shape {g.shape}")
    if g.shape[0] == 0:
        return 0.0
    return float(g.sum() / g.shape[0])


def evaluate_selection(stack: AttentionStack, selection, mode: str = "reweighted", pi_full=None) -> MetricReport:
    """ER and CS of a selection against a full attention stack.

    The pruned landing distribution always comes from the reweighted
    sub-graph; ``mode`` only picks which sub-graph the CS sums over.
    """
    if pi_full is None:
        pi_full = propagate_evidence(stack)
    reweighted = restrict_graph(stack, selection, mode="reweighted")
    pi_pruned = propagate_evidence(reweighted)
    idx = selection.flat_indices() if isinstance(selection, Selection) else selection
    er_raw, er_rel, rho = evidence_retention(pi_full, pi_pruned, idx)
    graph = reweighted if mode == "reweighted" else restrict_graph(stack, selection, mode="restricted")
    gamma = cross_frame_mass(graph)
    return MetricReport(
        er_raw=er_raw,
        er_rel=er_rel,
        rho=rho,
        cs=connectivity_strength(gamma),
        per_boundary=gamma,
        mode=mode,
        fallbacks=list(reweighted.fallbacks),
    )
