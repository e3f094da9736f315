"""JSON text with every float written to 17 significant digits.

Non-finite floats use the ``NaN`` / ``Infinity`` tokens understood by
:mod:`json`. Keys are sorted so that equal objects serialize to equal bytes.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any

import numpy as np


def _float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def _encode(o: Any, indent: int | None, level: int) -> str:
    if o is None:
        return "null"
    if isinstance(o, (bool, np.bool_)):
        return "true" if o else "false"
    if isinstance(o, (int, np.integer)):
        return str(int(o))
    if isinstance(o, (float, np.floating)):
        return _float(float(o))
    if isinstance(o, str):
        return json.dumps(o)
    if isinstance(o, np.ndarray):
        o = o.tolist()
    if isinstance(o, dict):
        items = [(str(k), v) for k, v in o.items()]
        items.sort(key=lambda kv: kv[0])
        parts = [f"{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in items]
        return _join(parts, "{", "}", indent, level)
    if isinstance(o, (list, tuple)):
        return _join([_encode(v, indent, level + 1) for v in o], "[", "]", indent, level)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _join(parts: list[str], open_: str, close: str, indent: int | None, level: int) -> str:
    if not parts:
        return open_ + close
    if indent is None:
        return open_ + ", ".join(parts) + close
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    return open_ + "\n" + ",\n".join(pad + p for p in parts) + "\n" + end + close


def dumps(obj: Any, indent: int | None = None) -> str:
    return _encode(obj, indent, 0)


def loads(text: str) -> Any:
    return json.loads(text)


def write_json(path: str | Path, obj: Any) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(dumps(obj, indent=2) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> Any:
    return loads(Path(path).read_text(encoding="utf-8"))
