"""Command-line entry point: ``semvid {prune,metrics,synth,bench,flops}``.

Exit codes: 0 success, 2 validation error, 3 I/O or format error,
4 infeasible budget. Diagnostics go to stderr at the level named by the
``SEMVID_LOG`` environment variable (debug, info, warn); data goes to files
or, for ``flops``, to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .budget import HyperParams
from .errors import BudgetInfeasibleError, FormatError, ValidationError
from .flops import FlopsSpec, estimate_flops
from .graph import evaluate_selection
from .npyio import load_attention, read_tensor, write_json, write_manifest, write_rows_csv, write_tensor
from .pipeline import BENCH_COLUMNS, parse_strategy, run_bench, run_strategy
from .selector import Selection
from .synth import ScenarioSpec, generate_scenario

log = logging.getLogger("semvid")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_INFEASIBLE = 4

_LOG_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warn": logging.WARNING, "warning": logging.WARNING}


def _setup_logging() -> None:
    level = _LOG_LEVELS.get(os.environ.get("SEMVID_LOG", "warn").lower(), logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("semvid")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def _read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def _hyperparams(args) -> HyperParams:
    # flag > config file > built-in default
    cfg = HyperParams().to_dict()
    if getattr(args, "config", None):
        data = _read_json(args.config)
        if not isinstance(data, dict):
            raise ValidationError(f"{args.config}: config must be a JSON object")
        cfg.update(data)
    flags = {
        "alpha": args.alpha,
        "lambda_mmr": args.lambda_mmr,
        "beta": args.beta,
        "k_ctx": args.k_ctx,
        "retention_ratio": getattr(args, "ratio", None),
    }
    cfg.update({k: v for k, v in flags.items() if v is not None})
    return HyperParams.from_dict(cfg)


def cmd_prune(args) -> int:
    hp = _hyperparams(args)
    patches = read_tensor(args.patches)
    query = read_tensor(args.query)
    strategy = parse_strategy(args.strategy, seed=args.seed)
    log.info("pruning %s patches with %s at r=%s", patches.shape, strategy, hp.retention_ratio)
    sel = run_strategy(patches, query, strategy, hp)
    doc = sel.to_dict()
    doc["params"] = {**hp.to_dict(), **doc["params"]}
    write_json(args.out, doc)
    return EXIT_OK


def cmd_metrics(args) -> int:
    stack, manifest = load_attention(args.manifest)
    data = _read_json(args.selection)
    if isinstance(data, dict) and "selection" in data and "frames" not in data:
        data = data["selection"]
    sel = Selection.from_dict(data)
    if sel.T != stack.T or sel.P != int(manifest["P"]):
        raise ValidationError(
            f"selection grid ({sel.T}, {sel.P}) does not match manifest ({stack.T}, {manifest['P']})"
        )
    rep = evaluate_selection(stack, sel, mode=args.mode)
    doc = {"T": sel.T, "P": sel.P, "K": sel.K, "layers": stack.L, **rep.to_dict()}
    write_json(args.out, doc)
    return EXIT_OK


def cmd_synth(args) -> int:
    data = _read_json(args.spec)
    if not isinstance(data, dict):
        raise ValidationError(f"{args.spec}: scenario spec must be a JSON object")
    spec = ScenarioSpec.from_dict(data)
    sc = generate_scenario(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_tensor(out / "patches.npy", sc.patches)
    write_tensor(out / "query.npy", sc.query)
    write_tensor(out / "evidence_mask.npy", sc.evidence_mask.astype(np.float32))
    write_manifest(
        out,
        sc.attention,
        spec.P,
        extra={
            "patches": "patches.npy",
            "query": "query.npy",
            "evidence_mask": "evidence_mask.npy",
            "boundaries": list(sc.boundaries),
            "spec": spec.to_dict(),
        },
    )
    return EXIT_OK


def _load_specs(path) -> list[ScenarioSpec]:
    data = _read_json(path)
    if isinstance(data, dict):
        base = data.get("base", {})
        seeds = data.get("seeds", [base.get("seed", 0)])
        if isinstance(seeds, int):
            seeds = list(range(seeds))
        return [ScenarioSpec.from_dict({**base, "seed": int(s)}) for s in seeds]
    if isinstance(data, list):
        return [ScenarioSpec.from_dict(d) for d in data]
    raise ValidationError(f"{path}: expected a list of scenario specs or an object with base/seeds")


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def cmd_bench(args) -> int:
    specs = _load_specs(args.specs)
    strategies = [parse_strategy(s) for s in _split(args.strategies)]
    try:
        ratios = [float(r) for r in _split(args.ratios)]
    except ValueError as exc:
        raise ValidationError(f"bad ratio list {args.ratios!r}") from exc
    hp = _hyperparams(args)
    rows = run_bench(specs, strategies, ratios, hp=hp, mode=args.mode, timing=args.timing)
    write_rows_csv(args.out, rows, BENCH_COLUMNS)
    json_path = Path(args.out).with_suffix(".json")
    write_json(json_path, {"config": {**hp.to_dict(), "mode": args.mode}, "rows": rows})
    return EXIT_OK


def cmd_flops(args) -> int:
    spec = FlopsSpec(
        n=args.n, hidden=args.hidden, ffn=args.ffn, kv_heads=args.kv_heads, head_dim=args.head_dim, layers=args.layers
    )
    json.dump(estimate_flops(spec), sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with alpha, lambda_mmr, beta, k_ctx, retention_ratio")
    p.add_argument("--alpha", type=float)
    p.add_argument("--lambda-mmr", dest="lambda_mmr", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--k-ctx", dest="k_ctx", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semvid", description="Role-aware visual token pruning for video-language models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prune", help="select tokens from patch and query embeddings")
    p.add_argument("--patches", required=True, help="NPY file, float32 (T, P, D)")
    p.add_argument("--query", required=True, help="NPY file, float32 (N, D)")
    p.add_argument("--ratio", type=float, help="retention ratio in (0, 1]")
    _add_hp_flags(p)
    p.add_argument("--strategy", default="semvid", help="semvid|uniform|random|relevance|saliency")
    p.add_argument("--seed", type=int, help="seed for the random strategy")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("metrics", help="evidence retention and connectivity of a selection")
    p.add_argument("--manifest", required=True)
    p.add_argument("--selection", required=True)
    p.add_argument("--mode", choices=("reweighted", "restricted"), default="reweighted")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="write a synthetic scenario to a directory")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="compare strategies over synthetic scenarios")
    p.add_argument("--specs", required=True, help="JSON list of specs, or {\"base\": {...}, \"seeds\": n}")
    p.add_argument("--strategies", required=True, help="comma list, e.g. semvid,saliency,random:7")
    p.add_argument("--ratios", required=True, help="comma list, e.g. 0.125,0.25")
    p.add_argument("--mode", choices=("reweighted", "restricted"), default="reweighted")
    p.add_argument("--timing", action="store_true", help="fill prune_ms (output is then not reproducible)")
    _add_hp_flags(p)
    p.add_argument("--out", required=True, help="CSV path; a JSON mirror is written next to it")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("flops", help="prefill FLOPs estimate")
    p.add_argument("--n", type=int, required=True, help="visual token count")
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--ffn", type=int, required=True)
    p.add_argument("--kv-heads", dest="kv_heads", type=int, required=True)
    p.add_argument("--head-dim", dest="head_dim", type=int, required=True)
    p.add_argument("--layers", type=int, default=1)
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except BudgetInfeasibleError as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except (ValidationError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (FormatError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
