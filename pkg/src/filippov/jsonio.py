"""Deterministic JSON output: sorted keys, floats with 17 significant digits."""
from __future__ import annotations

import json
import math
from datetime import datetime, timezone
from enum import Enum

import numpy as np

SCHEMA_VERSION = 1
TIMESTAMP_KEY = "generated_at"


def _float(v: float) -> str:
    if math.isnan(v):
        return '"nan"'
    if math.isinf(v):
        return '"inf"' if v > 0 else '"-inf"'
    s = f"{v:.17g}"
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(obj, indent: int, level: int) -> str:
    pad = "\n" + " " * (indent * (level + 1))
    end = "\n" + " " * (indent * level)
    if isinstance(obj, Enum):
        obj = obj.value
    if isinstance(obj, np.generic):
        obj = obj.item()
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _float(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{json.dumps(str(k), ensure_ascii=False)}: {_encode(obj[k], indent, level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{" + pad + ("," + pad).join(items) + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [_encode(v, indent, level + 1) for v in obj]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(items) + "]"
        return "[" + pad + ("," + pad).join(items) + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj, indent: int = 1) -> str:
    return _encode(obj, indent, 0) + "\n"


def document(command: str, config: dict, result, timestamp: bool = True) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "command": command, "config": config, "result": result}
    if timestamp:
        doc[TIMESTAMP_KEY] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return doc


def strip_timestamp(text: str) -> dict:
    """Parse an output document and drop the timestamp, for comparisons."""
    doc = json.loads(text)
    doc.pop(TIMESTAMP_KEY, None)
    return doc
