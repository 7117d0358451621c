"""Deterministic report serialization (JSON and flat CSV).

Floats are written with 17 significant digits and object keys are sorted,
so identical inputs give byte-identical output.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == 0.0:
        return "0.0"
    text = format(x, ".17g")
    return text if any(c in text for c in ".en") else text + ".0"


def to_plain(obj):
    """Convert numpy containers/scalars (recursively) to built-in types."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_json"):
        return to_plain(obj.to_json())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f'{pad}{_encode_str(k)}: {_encode(obj[k], indent, level + 1)}' for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_float(obj)
    if obj is None:
        return "null"
    return _encode_str(obj)


def _encode_str(s: str) -> str:
    return json.dumps(str(s), ensure_ascii=False)


def dumps_json(obj, indent: int = 2) -> str:
    return _encode(to_plain(obj), indent, 0) + "\n"


def flatten(obj, prefix: str = ""):
    """Yield ``(dotted.path, scalar)`` rows in sorted-key order."""
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        if not obj:
            yield prefix, ""
        for i, v in enumerate(obj):
            yield from flatten(v, f"{prefix}.{i}" if prefix else str(i))
    else:
        yield prefix, obj


def dumps_csv(obj) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["key", "value"])
    for key, value in flatten(to_plain(obj)):
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = _fmt_float(value)
        elif value is None:
            value = "null"
        writer.writerow([key, value])
    return buf.getvalue()


@dataclass
class Report:
    command: str
    scenario: str
    parameters: dict
    results: dict = field(default_factory=dict)
    version: str = ""
    wall_time: float | None = None

    def to_dict(self) -> dict:
        d = {
            "command": self.command,
            "scenario": self.scenario,
            "parameters": self.parameters,
            "results": self.results,
            "version": self.version,
        }
        if self.wall_time is not None:
            d["wall_time_s"] = self.wall_time
        return d

    def render(self, fmt: str = "json") -> str:
        if fmt == "csv":
            return dumps_csv(self.to_dict())
        return dumps_json(self.to_dict())
