"""Deterministic JSON writing with 17-significant-digit floats.

The standard encoder prints the shortest round-tripping repr; checkpoints and
metrics instead fix the digit count so files are stable byte for byte.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np


def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialise non-finite value {x}")
    s = format(x, ".17g")
    if "." not in s and "e" not in s and "n" not in s:
        s += ".0"
    return s


def _scalar(x) -> str:
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return _float(float(x))
    if isinstance(x, str):
        return json.dumps(x)
    raise TypeError(f"cannot serialise {type(x).__name__}")


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """Serialise dicts (pretty-printed) and lists (one line) deterministically."""
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        pad = " " * (indent * (_level + 1))
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + " " * (indent * _level) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
    return _scalar(obj)


def write(path, obj) -> None:
    Path(path).write_text(dumps(obj) + "\n")


def read(path):
    return json.loads(Path(path).read_text())
