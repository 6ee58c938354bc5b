"""Flat binary checkpoint container.

Layout (all integers little-endian)::

    u8   format version (currently 1)
    u32  parameter count
    repeated:
        u16  name length in bytes, then UTF-8 name
        u32  rows
        u32  cols
        rows*cols float64 (little-endian, row-major)
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path
from typing import Dict, Mapping, Union

import numpy as np

from ..errors import DataError

FORMAT_VERSION = 1
_F64 = np.dtype("<f8")


def dumps_params(params: Mapping[str, np.ndarray]) -> bytes:
    out = [struct.pack("<BI", FORMAT_VERSION, len(params))]
    for name, value in params.items():
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise DataError(f"parameter {name} must be at most 2-D, got {arr.shape}")
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)))
        out.append(raw)
        out.append(struct.pack("<II", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(out)


def loads_params(blob: bytes) -> Dict[str, np.ndarray]:
    if len(blob) < 5:
        raise DataError("checkpoint truncated before header")
    version, count = struct.unpack_from("<BI", blob, 0)
    if version != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {version}")
    pos = 5
    params: Dict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", blob, pos)
            pos += 2
            name = blob[pos:pos + n].decode("utf-8")
            pos += n
            rows, cols = struct.unpack_from("<II", blob, pos)
            pos += 8
            nbytes = rows * cols * 8
            if pos + nbytes > len(blob):
                raise DataError(f"checkpoint truncated inside parameter {name}")
            params[name] = np.frombuffer(blob, dtype=_F64, count=rows * cols,
                                         offset=pos).reshape(rows, cols).astype(np.float64)
            pos += nbytes
    except struct.error as exc:
        raise DataError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(blob):
        raise DataError(f"{len(blob) - pos} trailing bytes after last parameter")
    return params


def save_params(path: Union[str, Path], params: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps_params(params))


def load_params(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    return loads_params(Path(path).read_bytes())
