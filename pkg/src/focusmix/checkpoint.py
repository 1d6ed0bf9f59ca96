"""Checkpoint format: one-line JSON header + raw little-endian float32 blobs.

Header fields: version ("focusmix-ckpt-1"), meta (free-form dict: model kind,
config hash, step count), params (list of {name, shape, dtype, offset} with
offsets relative to the end of the header line). Written atomically via a
temp file and os.replace.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

FORMAT_VERSION = "focusmix-ckpt-1"


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path: str, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    entries = []
    blobs = []
    offset = 0
    for name, a in arrays.items():
        blob = np.ascontiguousarray(a, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(a.shape),
                        "dtype": "float32", "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"version": FORMAT_VERSION, "meta": meta or {},
                         "params": entries}, sort_keys=True)
    dirname = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".ckpt.tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(header.encode("utf-8"))
            f.write(b"\n")
            for blob in blobs:
                f.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path: str) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        header_line = f.readline()
        body = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"unreadable checkpoint header: {e}") from e
    if header.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint version {header.get('version')!r}")
    arrays = {}
    for ent in header["params"]:
        shape = tuple(ent["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = ent["offset"]
        end = start + 4 * count
        if end > len(body):
            raise CheckpointError(f"truncated blob for parameter {ent['name']!r}")
        arrays[ent["name"]] = np.frombuffer(
            body[start:end], dtype="<f4").reshape(shape).copy()
    return arrays, header.get("meta", {})
