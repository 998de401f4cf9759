"""Binary container: a JSON text manifest followed by little-endian float64 arrays.

Layout::

    SKYTRACE <kind> <format_version>\\n
    <manifest byte length, decimal ASCII>\\n
    <manifest: UTF-8 JSON, keys sorted>
    <payload: float64 little-endian arrays, back to back>

The manifest's ``arrays`` list holds, per array, ``name``, ``shape``,
``offset`` (bytes from payload start) and ``count`` (elements). Everything
else in the manifest is caller metadata. Writing the same content twice
yields identical bytes.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import FormatError

MAGIC = "SKYTRACE"
FORMAT_VERSION = 1
_LE_F8 = np.dtype("<f8")


def encode(kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=_LE_F8)
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.nbytes
    manifest = dict(meta)
    if "arrays" in manifest:
        raise ValueError("'arrays' is reserved in container metadata")
    manifest["arrays"] = entries
    text = json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8")
    head = f"{MAGIC} {kind} {FORMAT_VERSION}\n{len(text)}\n".encode("ascii")
    return head + text + b"".join(chunks)


def decode(blob: bytes, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        first, rest = blob.split(b"\n", 1)
        magic, got_kind, version = first.decode("ascii").split(" ")
        size_line, rest = rest.split(b"\n", 1)
        size = int(size_line)
    except ValueError as exc:
        raise FormatError(f"not a {MAGIC} container: {exc}") from None
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if got_kind != kind:
        raise FormatError(f"expected a {kind!r} container, found {got_kind!r}")
    if int(version) != FORMAT_VERSION:
        raise FormatError(f"unsupported container version {version}")
    manifest = json.loads(rest[:size].decode("utf-8"))
    payload = rest[size:]
    arrays = {}
    for e in manifest.pop("arrays"):
        start, n = e["offset"], e["count"]
        if start + 8 * n > len(payload):
            raise FormatError(f"array {e['name']!r} runs past end of file")
        a = np.frombuffer(payload, dtype=_LE_F8, count=n, offset=start).astype(np.float64)
        arrays[e["name"]] = a.reshape(e["shape"])
    return manifest, arrays


def save(path, kind: str, meta: Mapping, arrays: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(kind, meta, arrays))


def load(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    return decode(Path(path).read_bytes(), kind)
