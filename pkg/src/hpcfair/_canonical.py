"""Canonical JSON encoding shared by interchange files, tensor files and logs.

One representation per value: compact separators, UTF-8, a single trailing
newline, floats rendered with Python's shortest round-trip repr.  Containers
must already be built in their canonical field order; this module does not
reorder keys.
"""

from __future__ import annotations

import json
from typing import Any


def dumps_canonical(obj: Any) -> bytes:
    # allow_nan=False: non-finite floats have no JSON form and would break
    # byte-for-byte round trips.
    text = json.dumps(obj, ensure_ascii=False, allow_nan=False,
                      separators=(",", ":"))
    return (text + "\n").encode("utf-8")


def loads_canonical(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)
