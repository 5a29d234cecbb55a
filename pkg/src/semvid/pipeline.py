"""End-to-end pruning runs, baselines, benchmarking and temporal IoU helpers."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .budget import (
    BudgetVector,
    HyperParams,
    allocate_budgets,
    frame_relevance,
    frame_variation,
    largest_remainder,
    mix_weights,
    partition_roles,
    total_budget,
)
from .errors import ValidationError
from .graph import evaluate_selection, propagate_evidence
from .selector import FrameSelection, Selection, assemble_selection, patch_relevance
from .synth import ScenarioSpec, evidence_recall, generate_scenario
from .tensor_core import as_patches, as_query, topk

log = logging.getLogger(__name__)

__all__ = [
    "STRATEGIES",
    "Strategy",
    "parse_strategy",
    "budget_for",
    "run_semvid",
    "run_baseline",
    "run_strategy",
    "BENCH_COLUMNS",
    "run_bench",
    "interval_iou",
    "mean_iou",
    "recall_at",
    "grounding_summary",
]

STRATEGIES = ("semvid", "uniform", "random", "relevance_topk", "saliency_topk")
_ALIASES = {"relevance": "relevance_topk", "saliency": "saliency_topk", "fixed": "uniform"}


@dataclass(frozen=True)
class Strategy:
    name: str
    seed: int | None = None

    def __post_init__(self):
        if self.name not in STRATEGIES:
            raise ValidationError(f"unknown strategy {self.name!r}; choose from {', '.join(STRATEGIES)}")
        if self.name == "random" and self.seed is None:
            raise ValidationError("the random strategy needs an explicit seed")

    def __str__(self) -> str:
        return self.name if self.seed is None else f"{self.name}:{self.seed}"


def parse_strategy(text: str, seed: int | None = None) -> Strategy:
    """Parse ``name`` or ``name:seed``; CLI aliases (relevance, saliency) are accepted."""
    name, _, s = text.strip().partition(":")
    name = _ALIASES.get(name, name)
    if s:
        seed = int(s)
    if name == "random" and seed is None:
        seed = 0
    return Strategy(name, seed if name == "random" else None)


def budget_for(v, q, hp: HyperParams) -> BudgetVector:
    """Per-frame quotas for ``v`` from query relevance and frame-to-frame change."""
    v = as_patches(v)
    q = as_query(q, dim=v.shape[2])
    T, P, _ = v.shape
    if hp.retention_ratio >= 1.0:
        return BudgetVector(k=np.full(T, P), K=T * P)
    glb = v.astype(np.float64).mean(axis=1)
    w = mix_weights(frame_relevance(glb, q), frame_variation(glb), hp.alpha)
    return allocate_budgets(w, hp.retention_ratio, T, P, hp.k_ctx)


def run_semvid(v, q, hp: HyperParams | None = None) -> Selection:
    hp = hp or HyperParams()
    budget = budget_for(v, q, hp)
    quota = partition_roles(budget, hp.alpha, hp.k_ctx)
    return assemble_selection(v, q, budget, quota, hp)


def _from_flat(flat: Iterable[int], T: int, P: int, params: dict) -> Selection:
    per_frame: list[list[int]] = [[] for _ in range(T)]
    for i in flat:
        per_frame[int(i) // P].append(int(i) % P)
    frames = [FrameSelection(object=idx) for idx in per_frame]
    return Selection(frames=frames, P=P, budget=[len(f) for f in per_frame], params=params)


def run_baseline(v, q, strategy: Strategy | str, r: float) -> Selection:
    """Simple reference selectors; every kept token is labelled ``object``.

    ``uniform`` spreads K evenly over frames at a fixed patch stride,
    ``random`` samples K tokens without replacement, ``relevance_topk`` and
    ``saliency_topk`` take the global top-K by query cosine and by raw patch
    norm respectively.
    """
    if isinstance(strategy, str):
        strategy = parse_strategy(strategy)
    v = as_patches(v)
    q = as_query(q, dim=v.shape[2])
    if not (0.0 < r <= 1.0):
        raise ValidationError(f"retention ratio {r} must lie in (0, 1]")
    T, P, _ = v.shape
    K = total_budget(r, T, P)
    params = {"strategy": strategy.name, "retention_ratio": r}
    if strategy.seed is not None:
        params["seed"] = strategy.seed

    name = strategy.name
    if name == "uniform":
        k = largest_remainder(np.full(T, K / T), K)
        frames = [FrameSelection(object=[(i * P) // int(kt) for i in range(int(kt))]) for kt in k]
        return Selection(frames=frames, P=P, budget=[int(x) for x in k], params=params)
    if name == "random":
        rng = np.random.default_rng(strategy.seed)
        flat = rng.choice(T * P, size=K, replace=False)
        return _from_flat(flat, T, P, params)
    if name == "relevance_topk":
        return _from_flat(topk(patch_relevance(v, q).ravel(), K), T, P, params)
    if name == "saliency_topk":
        norms = np.linalg.norm(v.astype(np.float64), axis=-1).ravel()
        return _from_flat(topk(norms, K), T, P, params)
    raise ValidationError(f"{name!r} is not a baseline strategy")


def run_strategy(v, q, strategy: Strategy | str, hp: HyperParams) -> Selection:
    if isinstance(strategy, str):
        strategy = parse_strategy(strategy)
    if strategy.name == "semvid":
        return run_semvid(v, q, hp)
    return run_baseline(v, q, strategy, hp.retention_ratio)


BENCH_COLUMNS = ("strategy", "seed", "ratio", "K", "er_raw", "er_rel", "cs", "recall", "prune_ms")


def run_bench(
    specs: Sequence[ScenarioSpec],
    strategies: Sequence[Strategy | str],
    ratios: Sequence[float],
    hp: HyperParams | None = None,
    mode: str = "reweighted",
    timing: bool = True,
) -> list[dict]:
    """One row per (scenario, strategy, ratio), sorted by (strategy, seed, ratio).

    A failing row keeps its key fields, gets NaN metrics and an ``error``
    message, and the run moves on. With ``timing=False`` the ``prune_ms``
    field is None so that the output depends only on the inputs.
    """
    if not specs or not strategies or not ratios:
        raise ValidationError("run_bench needs at least one scenario, strategy and ratio")
    hp = hp or HyperParams()
    strategies = [parse_strategy(s) if isinstance(s, str) else s for s in strategies]
    rows = []
    for spec in specs:
        sc = generate_scenario(spec)
        pi_full = propagate_evidence(sc.attention)
        T, P = spec.T, spec.P
        for strat in strategies:
            for r in ratios:
                row = {"strategy": str(strat), "seed": spec.seed, "ratio": float(r), "K": total_budget(r, T, P)}
                try:
                    cfg = HyperParams.from_dict({**hp.to_dict(), "retention_ratio": float(r)})
                    start = time.perf_counter()
                    sel = run_strategy(sc.patches, sc.query, strat, cfg)
                    elapsed = (time.perf_counter() - start) * 1e3
                    rep = evaluate_selection(sc.attention, sel, mode=mode, pi_full=pi_full)
                    row.update(
                        er_raw=rep.er_raw,
                        er_rel=rep.er_rel,
                        cs=rep.cs,
                        recall=evidence_recall(sel, sc),
                        prune_ms=elapsed if timing else None,
                    )
                except (ValueError, ArithmeticError) as exc:
                    log.warning("bench row %s seed=%s r=%s failed: %s", strat, spec.seed, r, exc)
                    row.update(er_raw=math.nan, er_rel=math.nan, cs=math.nan, recall=math.nan, prune_ms=None)
                    row["error"] = str(exc)
                rows.append(row)
    rows.sort(key=lambda d: (d["strategy"], d["seed"], d["ratio"]))
    return rows


def interval_iou(pred: Sequence[float], gt: Sequence[float]) -> float:
    """Temporal IoU of two [start, end] intervals; 0 when the union is empty."""
    (ps, pe), (gs, ge) = pred, gt
    if ps > pe or gs > ge:
        raise ValidationError(f"interval with start after end: pred={list(pred)} gt={list(gt)}")
    inter = max(0.0, min(pe, ge) - max(ps, gs))
    union = max(pe, ge) - min(ps, gs)
    return inter / union if union > 0 else 0.0


def mean_iou(preds: Sequence, gts: Sequence) -> float:
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} predictions for {len(gts)} ground-truth intervals")
    if not preds:
        return 0.0
    return float(np.mean([interval_iou(p, g) for p, g in zip(preds, gts)]))


def recall_at(preds: Sequence, gts: Sequence, threshold: float) -> float:
    """Fraction of pairs whose IoU reaches ``threshold``."""
    if len(preds) != len(gts):
        raise ValidationError(f"{len(preds)} predictions for {len(gts)} ground-truth intervals")
    if not preds:
        return 0.0
    return float(np.mean([interval_iou(p, g) >= threshold for p, g in zip(preds, gts)]))


def grounding_summary(preds: Sequence, gts: Sequence, thresholds=(0.3, 0.5, 0.7)) -> dict:
    out = {"mIoU": mean_iou(preds, gts)}
    for m in thresholds:
        out[f"R1@{m}"] = recall_at(preds, gts, m)
    return out
