"""File formats: binary node fields, domain masks, key-value descriptors and JSON helpers.

Field file (little-endian throughout)::

    b"UCLF"  magic
    uint32   ndim
    uint32   shape[ndim]      node counts
    float64  h
    float64  origin[ndim]
    float64  values[prod(shape)]   row-major (C order)

Mask file: first line holds the cell dimensions, then row-major ``0``/``1``
characters (whitespace ignored). The fractional variant starts with the line
``fractional <dims>`` followed by one raw byte per cell, weight = byte / 255.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import ValidationError

__all__ = [
    "write_field",
    "read_field",
    "write_mask_file",
    "read_mask_file",
    "read_descriptor",
    "parse_descriptor",
    "dump_json",
    "sha256_file",
]

_MAGIC = b"UCLF"


def write_field(path, values: np.ndarray, h: float, origin=None) -> Path:
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    origin = np.zeros(values.ndim) if origin is None else np.asarray(origin, dtype=float)
    header = _MAGIC + struct.pack(f"<I{values.ndim}I", values.ndim, *values.shape)
    header += struct.pack(f"<d{values.ndim}d", float(h), *origin)
    path.write_bytes(header + values.tobytes())
    return path


def read_field(path) -> tuple[np.ndarray, float, np.ndarray]:
    """Return ``(values, h, origin)`` from a field file."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValidationError(f"{path}: not a field file")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    shape = struct.unpack_from(f"<{ndim}I", raw, 8)
    off = 8 + 4 * ndim
    h, *origin = struct.unpack_from(f"<d{ndim}d", raw, off)
    off += 8 * (ndim + 1)
    count = int(np.prod(shape))
    if len(raw) - off != 8 * count:
        raise ValidationError(f"{path}: expected {count} values, found {(len(raw) - off) // 8}")
    values = np.frombuffer(raw, dtype="<f8", offset=off).reshape(shape).astype(float)
    return values, h, np.asarray(origin)


def write_mask_file(path, weights: np.ndarray, fractional: bool = False) -> Path:
    path = Path(path)
    dims = " ".join(str(s) for s in weights.shape)
    if fractional:
        data = np.rint(np.clip(weights, 0.0, 1.0) * 255).astype(np.uint8)
        path.write_bytes(f"fractional {dims}\n".encode() + data.tobytes())
    else:
        flat = "".join("1" if w else "0" for w in np.asarray(weights, bool).ravel())
        rows = [flat[i : i + weights.shape[-1]] for i in range(0, len(flat), weights.shape[-1])]
        path.write_text(dims + "\n" + "\n".join(rows) + "\n")
    return path


def read_mask_file(path) -> np.ndarray:
    """Read a mask file; returns float weights in ``[0, 1]`` with the stored cell shape."""
    raw = Path(path).read_bytes()
    first, _, body = raw.partition(b"\n")
    tokens = first.decode("ascii", errors="replace").split()
    fractional = bool(tokens) and tokens[0] == "fractional"
    try:
        dims = tuple(int(t) for t in (tokens[1:] if fractional else tokens))
    except ValueError:
        raise ValidationError(f"{path}: bad dimension line {first!r}") from None
    if len(dims) not in (2, 3):
        raise ValidationError(f"{path}: masks must be 2D or 3D")
    count = int(np.prod(dims))
    if fractional:
        if len(body) != count:
            raise ValidationError(f"{path}: expected {count} bytes, found {len(body)}")
        return np.frombuffer(body, dtype=np.uint8).reshape(dims) / 255.0
    chars = [c for c in body.decode("ascii") if not c.isspace()]
    if len(chars) != count or any(c not in "01" for c in chars):
        raise ValidationError(f"{path}: expected {count} characters 0/1")
    return (np.asarray(chars) == "1").reshape(dims).astype(float)


def _coerce(text: str):
    text = text.strip()
    parts = text.replace(",", " ").split()
    if len(parts) > 1 and not any(op in text for op in "()^*+"):
        return [_coerce(p) for p in parts]
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_descriptor(text: str) -> dict:
    """Parse ``key = value`` text, optionally split into ``[sections]``.

    Keys before any section header land at the top level. Values with several
    whitespace or comma separated plain tokens become lists; numbers are
    converted, everything else (formulas, paths) stays a string.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[__top__]\n" + text)
    except configparser.Error as exc:
        raise ValidationError(f"cannot parse descriptor: {exc}") from None
    out: dict = {}
    for section in cp.sections():
        items = {k: _coerce(v) for k, v in cp.items(section)}
        if section == "__top__":
            out.update(items)
        else:
            out[section] = items
    return out


def read_descriptor(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"file not found: {path}")
    return parse_descriptor(path.read_text())


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def dump_json(path, payload: Mapping) -> Path:
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
