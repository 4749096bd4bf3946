"""Chunked little-endian checkpoint files.

Layout: ``MYOWCKPT`` magic, ``u32`` version, then chunks of
``tag[4] | u64 length | payload`` until end of file.

* ``CONF``: run configuration as canonical text (UTF-8)
* ``META``: JSON scalars (step counter, RNG states, optimizer counters, ...)
* ``ARRY``: one named array: ``u16 name length | name | dtype char | u8 ndim |
  u64 shape... | raw little-endian data``
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MYOWCKPT"
VERSION = 1
_DTYPES = {"d": "<f8", "f": "<f4", "q": "<i8"}
_CODES = {np.dtype("<f8"): "d", np.dtype("<f4"): "f", np.dtype("<i8"): "q"}


class CheckpointError(ValueError):
    pass


def _chunk(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def _array_payload(name: str, arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if arr.dtype.kind == "i":
        dt = np.dtype("<i8")
    code = _CODES.get(np.dtype(dt))
    if code is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype} for {name}")
    raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
    key = name.encode()
    head = struct.pack("<H", len(key)) + key + code.encode() + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + raw


def save_checkpoint(path, config_text: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    parts = [MAGIC, struct.pack("<I", VERSION),
             _chunk(b"CONF", config_text.encode()),
             _chunk(b"META", json.dumps(meta, sort_keys=True).encode())]
    for name in sorted(arrays):
        parts.append(_chunk(b"ARRY", _array_payload(name, arrays[name])))
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    config_text, meta, arrays = None, None, {}
    while pos < len(blob):
        tag = blob[pos:pos + 4]
        (length,) = struct.unpack_from("<Q", blob, pos + 4)
        payload = blob[pos + 12:pos + 12 + length]
        if len(payload) != length:
            raise CheckpointError(f"{path}: truncated chunk {tag!r}")
        pos += 12 + length
        if tag == b"CONF":
            config_text = payload.decode()
        elif tag == b"META":
            meta = json.loads(payload)
        elif tag == b"ARRY":
            (n,) = struct.unpack_from("<H", payload, 0)
            name = payload[2:2 + n].decode()
            code = chr(payload[2 + n])
            ndim = payload[3 + n]
            shape = struct.unpack_from(f"<{ndim}Q", payload, 4 + n)
            start = 4 + n + 8 * ndim
            arrays[name] = np.frombuffer(payload[start:], dtype=_DTYPES[code]).reshape(shape).copy()
        else:
            raise CheckpointError(f"{path}: unknown chunk tag {tag!r}")
    if config_text is None or meta is None:
        raise CheckpointError(f"{path}: missing CONF or META chunk")
    return config_text, arrays, meta
