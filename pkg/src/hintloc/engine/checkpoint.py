"""Binary on-disk state files for model parameters and optimizer moments.

Layout (all integers little-endian):

    magic  b"HLCK"
    u32    format version (currently 1)
    u32    header length in bytes
    bytes  header: UTF-8 JSON {"meta": {...}, "entries": [{"name", "shape"}, ...]}
    bytes  float64 C-order payload for each entry, in header order
    bytes  sha256 digest (32 bytes) of everything above

Writes go through a temp file and os.replace, so a crash cannot leave a
truncated file under the final name. Identical inputs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct

import numpy as np

from ..errors import DataFormatError

MAGIC = b"HLCK"
VERSION = 1


def save_state(path: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    entries = []
    payload = bytearray()
    for name in arrays:
        arr = np.asarray(arrays[name], dtype="<f8")
        # record shape first: ascontiguousarray promotes 0-d to 1-d
        entries.append({"name": name, "shape": list(arr.shape)})
        payload += np.ascontiguousarray(arr).tobytes()
    header = json.dumps({"meta": meta, "entries": entries},
                        sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(header)) + header + bytes(payload)
    body += hashlib.sha256(body).digest()
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(body)
    os.replace(tmp, path)


def load_state(path: str) -> tuple[dict[str, np.ndarray], dict]:
    try:
        with open(path, "rb") as f:
            blob = f.read()
    except OSError as e:
        raise DataFormatError(f"cannot read state file {path}: {e}") from e
    if len(blob) < 4 + 8 + 32 or blob[:4] != MAGIC:
        raise DataFormatError(f"{path} is not a state file (bad magic or truncated)")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise DataFormatError(f"{path} failed its integrity check")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise DataFormatError(f"{path} has unsupported version {version}")
    header_end = 12 + header_len
    if header_end > len(blob) - 32:
        raise DataFormatError(f"{path} header length {header_len} overruns the file")
    try:
        header = json.loads(blob[12:header_end].decode("utf-8"))
        entries = header["entries"]
        meta = header["meta"]
    except (ValueError, KeyError, UnicodeDecodeError) as e:
        raise DataFormatError(f"{path} has a malformed header: {e}") from e

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for entry in entries:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob) - 32:
            raise DataFormatError(f"{path} payload for {entry['name']} overruns the file")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        arrays[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(blob) - 32:
        raise DataFormatError(f"{path} has {len(blob) - 32 - offset} trailing payload bytes")
    return arrays, meta
