"""Canonical JSON emission.

Every byte this package writes to wire or disk goes through here: object
keys sorted, floats as fixed 6-decimal strings, no whitespace, ASCII only.
The same value always serializes to the same bytes, which is what makes
trace checksums and byte-equality guarantees meaningful.
"""

from __future__ import annotations

import json
import numbers
from typing import List


def fnum(value: float) -> str:
    """Fixed 6-decimal rendering; negative zero folds to positive."""
    s = "%.6f" % value
    return "0.000000" if s == "-0.000000" else s


def dumps_canonical(obj) -> str:
    out: List[str] = []
    _emit(obj, out)
    return "".join(out)


def dumps_canonical_bytes(obj) -> bytes:
    return dumps_canonical(obj).encode("ascii")


def _emit(o, out: List[str]) -> None:
    if o is None:
        out.append("null")
    elif o is True:
        out.append("true")
    elif o is False:
        out.append("false")
    elif isinstance(o, str):
        out.append(json.dumps(o, ensure_ascii=True))
    elif isinstance(o, float):
        out.append(fnum(o))
    elif isinstance(o, numbers.Integral):
        out.append(str(int(o)))
    elif isinstance(o, dict):
        out.append("{")
        first = True
        for key in sorted(o):
            if not isinstance(key, str):
                raise TypeError(f"canonical JSON keys must be strings, got {key!r}")
            if not first:
                out.append(",")
            first = False
            out.append(json.dumps(key, ensure_ascii=True))
            out.append(":")
            _emit(o[key], out)
        out.append("}")
    elif isinstance(o, (list, tuple)):
        out.append("[")
        for n, item in enumerate(o):
            if n:
                out.append(",")
            _emit(item, out)
        out.append("]")
    else:
        raise TypeError(f"cannot canonicalize {type(o).__name__}")
