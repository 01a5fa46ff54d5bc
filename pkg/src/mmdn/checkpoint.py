"""Binary checkpoint format for named tensors.

Layout (little-endian throughout):

    magic   4 bytes  b"MMDN"
    version u32      1
    count   u32      number of tensors
    per tensor:
        name_len u16, name utf-8 bytes,
        dtype    u8  (0 = single/float32, 1 = double/float64),
        ndim     u8, dims u32 each,
        raw little-endian scalar data

Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .params import ParamRegistry

MAGIC = b"MMDN"
VERSION = 1
_DTYPE_CODES = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class CheckpointError(Exception):
    pass


def write_arrays(path, items: list[tuple[str, np.ndarray]]) -> None:
    """Write (name, array) pairs in order; duplicate names are rejected."""
    names = [n for n, _ in items]
    if len(set(names)) != len(names):
        raise CheckpointError("duplicate tensor names in checkpoint payload")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(items)))
        for name, arr in items:
            arr = np.ascontiguousarray(arr)
            if arr.dtype.newbyteorder("<") not in _DTYPE_CODES:
                raise CheckpointError(f"unsupported dtype {arr.dtype} for {name!r}")
            code = _DTYPE_CODES[arr.dtype.newbyteorder("<")]
            nb = name.encode("utf-8")
            if len(nb) > 0xFFFF:
                raise CheckpointError(f"tensor name too long: {name!r}")
            if arr.ndim > 0xFF:
                raise CheckpointError(f"too many dimensions for {name!r}")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<BB", code, arr.ndim))
            for d in arr.shape:
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_arrays(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back into an ordered name -> array dict."""
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise CheckpointError(f"truncated checkpoint: {path}")
    if data[:4] != MAGIC:
        raise CheckpointError(f"bad magic in {path}: {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    out: dict[str, np.ndarray] = {}
    off = 12
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + name_len].decode("utf-8")
            if len(data[off:off + name_len]) != name_len:
                raise struct.error("name")
            off += name_len
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            dims = struct.unpack_from(f"<{ndim}I", data, off) if ndim else ()
            off += 4 * ndim
            dtype = _CODE_DTYPES.get(code)
            if dtype is None:
                raise CheckpointError(f"unknown dtype code {code} for {name!r}")
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
            payload = data[off:off + nbytes]
            if len(payload) != nbytes:
                raise struct.error("payload")
            off += nbytes
        except struct.error:
            raise CheckpointError(f"truncated checkpoint: {path}")
        if name in out:
            raise CheckpointError(f"duplicate tensor name in checkpoint: {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    return out


def save_checkpoint(registry: ParamRegistry, path) -> None:
    write_arrays(path, registry.state_arrays())


def load_checkpoint(path) -> ParamRegistry:
    """Rebuild a standalone registry from a checkpoint file.

    Stored precisions are preserved exactly, so save -> load -> save is
    bit-identical.
    """
    arrays = read_arrays(path)
    dtype = next(iter(arrays.values())).dtype if arrays else "single"
    reg = ParamRegistry(dtype=dtype)
    for name, arr in arrays.items():
        reg.add(name, arr, cast=False)
    return reg
