"""Float32 NPY (format 1.0) files, attention manifests and report writers."""

from __future__ import annotations

import ast
import csv
import io
import json
import math
import os
import struct
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import FormatError, ValidationError
from .graph import AttentionStack
from .tensor_core import check_finite

__all__ = [
    "MAGIC",
    "read_tensor",
    "write_tensor",
    "encode_tensor",
    "decode_tensor",
    "write_manifest",
    "load_attention",
    "emit_report",
    "write_rows_csv",
    "write_json",
]

MAGIC = b"\x93NUMPY"
_VERSION = (1, 0)
_DESCR = "<f4"
_ALIGN = 64


def _header_text(shape: tuple[int, ...]) -> bytes:
    if len(shape) == 1:
        shape_repr = f"({shape[0]},)"
    else:
        shape_repr = "(" + ", ".join(str(int(d)) for d in shape) + ")"
    text = f"{{'descr': '{_DESCR}', 'fortran_order': False, 'shape': {shape_repr}, }}"
    # magic(6) + version(2) + length(2) + header + '\n' padded to the alignment
    pad = -(10 + len(text) + 1) % _ALIGN
    return (text + " " * pad + "\n").encode("latin1")


def encode_tensor(x) -> bytes:
    arr = np.asarray(x)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    check_finite(arr, "tensor")
    header = _header_text(arr.shape)
    if len(header) > 0xFFFF:
        raise ValidationError(f"shape {arr.shape} needs a header longer than format 1.0 allows")
    body = np.ascontiguousarray(arr, dtype="<f4").tobytes(order="C")
    return MAGIC + bytes(_VERSION) + struct.pack("<H", len(header)) + header + body


def decode_tensor(data: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(data) < 10 or data[:6] != MAGIC:
        raise FormatError(f"{source}: bad magic {data[:6]!r}, expected {MAGIC!r}")
    version = (data[6], data[7])
    if version != _VERSION:
        raise FormatError(f"{source}: unsupported version {version[0]}.{version[1]}, only 1.0 is read")
    (hlen,) = struct.unpack("<H", data[8:10])
    raw = data[10 : 10 + hlen]
    if len(raw) != hlen:
        raise FormatError(f"{source}: header truncated")
    try:
        header = ast.literal_eval(raw.decode("latin1"))
    except (SyntaxError, ValueError) as exc:
        raise FormatError(f"{source}: header is not a Python literal dict") from exc
    if not isinstance(header, dict) or set(header) != {"descr", "fortran_order", "shape"}:
        raise FormatError(f"{source}: header must hold exactly descr, fortran_order and shape")
    if header["descr"] != _DESCR:
        raise FormatError(f"{source}: descr {header['descr']!r} unsupported, expected {_DESCR!r}")
    if header["fortran_order"] is not False:
        raise FormatError(f"{source}: fortran_order must be False")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(isinstance(d, int) and d >= 0 for d in shape):
        raise FormatError(f"{source}: shape {shape!r} is not a tuple of nonnegative ints")
    count = math.prod(shape)
    body = data[10 + hlen :]
    if len(body) != 4 * count:
        raise FormatError(f"{source}: data holds {len(body)} bytes, shape {shape} needs {4 * count}")
    return np.frombuffer(body, dtype="<f4").reshape(shape).astype(np.float32)


def write_tensor(path, x) -> None:
    Path(path).write_bytes(encode_tensor(x))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes(), source=str(path))


def write_manifest(out_dir, stack: AttentionStack, P: int, extra: Mapping | None = None) -> Path:
    """Write one NPY file per layer plus the injection, and a JSON manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    layer_names = []
    for l, layer in enumerate(stack.layers):
        name = f"layer_{l:02d}.npy"
        write_tensor(out / name, layer)
        layer_names.append(name)
    write_tensor(out / "injection.npy", stack.injection)
    manifest = {"layers": layer_names, "injection": "injection.npy", "T": stack.T, "P": P}
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    write_json(path, manifest)
    return path


def load_attention(manifest_path) -> tuple[AttentionStack, dict]:
    """Load an attention stack from a manifest; relative paths resolve next to it."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: not valid JSON ({exc})") from exc
    for key in ("layers", "injection", "T", "P"):
        if key not in manifest:
            raise FormatError(f"{manifest_path}: missing key {key!r}")
    T, P = int(manifest["T"]), int(manifest["P"])
    n = T * P
    root = manifest_path.parent
    layers = []
    for rel in manifest["layers"]:
        m = read_tensor(root / rel)
        if m.shape != (n, n):
            raise ValidationError(f"{rel}: shape {m.shape} does not match manifest T*P={n}")
        layers.append(m.astype(np.float64))
    if not layers:
        raise ValidationError(f"{manifest_path}: manifest lists no layers")
    inj = read_tensor(root / manifest["injection"]).astype(np.float64)
    if inj.shape != (n,):
        raise ValidationError(f"{manifest['injection']}: shape {inj.shape} does not match manifest T*P={n}")
    stack = AttentionStack.full(np.stack(layers), inj, T, P)
    # float32 storage leaves ~1e-7 row error; tighten back to float64 precision
    stack.layers /= stack.layers.sum(axis=2, keepdims=True)
    stack.injection /= stack.injection.sum()
    return stack, manifest


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.floating, np.integer)):
        return _clean(value.item())
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, Mapping):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def write_json(path, obj) -> None:
    text = json.dumps(_clean(obj), indent=2) + "\n"
    _atomic_write(path, text)


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_rows_csv(path, rows: Iterable[Mapping], columns: Sequence[str]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_format_cell(row.get(c)) for c in columns])
    _atomic_write(path, buf.getvalue())


def emit_report(path, selection=None, metrics=(), fmt: str = "json", columns: Sequence[str] | None = None, config=None):
    """Write a selection and/or metric rows as JSON or CSV.

    JSON holds ``{"config", "selection", "metrics"}`` in that key order. CSV
    holds only the metric rows, under ``columns`` (default: keys of the first
    row); no rows gives a header-only file.
    """
    metrics = list(metrics)
    if fmt == "json":
        doc = {}
        if config is not None:
            doc["config"] = config
        if selection is not None:
            doc["selection"] = selection.to_dict() if hasattr(selection, "to_dict") else selection
        doc["metrics"] = [m.to_dict() if hasattr(m, "to_dict") else m for m in metrics]
        write_json(path, doc)
    elif fmt == "csv":
        rows = [m.to_dict() if hasattr(m, "to_dict") else m for m in metrics]
        if columns is None:
            columns = list(rows[0]) if rows else []
        write_rows_csv(path, rows, columns)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)
