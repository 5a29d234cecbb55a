"""Prefill FLOPs estimate for a GQA decoder with a three-matrix (SwiGLU) FFN."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import ValidationError

__all__ = ["FlopsSpec", "per_layer_flops", "estimate_flops"]


@dataclass(frozen=True)
class FlopsSpec:
    n: int  # visual tokens
    hidden: int
    ffn: int
    kv_heads: int
    head_dim: int
    layers: int = 1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, bool) or not isinstance(value, int) or value <= 0:
                raise ValidationError(f"{name}={value!r} must be a positive integer")


def per_layer_flops(spec: FlopsSpec) -> int:
    n, D = spec.n, spec.hidden
    kv = 2 * n * D * (spec.kv_heads * spec.head_dim)
    proj = 2 * n * D * D
    attn = 2 * n * n * D
    ffn = 3 * n * D * spec.ffn
    return kv + proj + attn + ffn


def estimate_flops(spec: FlopsSpec) -> dict:
    layer = per_layer_flops(spec)
    total = layer * spec.layers
    return {
        "per_layer": layer,
        "total": total,
        "tflops": round(total / 1e12, 1),
        "spec": asdict(spec),
    }
