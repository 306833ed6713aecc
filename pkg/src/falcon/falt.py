"""FALT tensor archive: a minimal hand-parseable container for named arrays.

Layout (all integers little-endian):

    magic  b"FALT"
    u16    version (1)
    u32    entry count
    entry: u16 name length, UTF-8 name, u8 ndim, ndim x u32 dims,
           u8 dtype (0 = float32, 1 = float64), payload row-major

dtype code 1 is a local extension for verification-mode (float64) tensors.
Entries keep insertion order, which callers use as the canonical order.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ArchiveError

MAGIC = b"FALT"
VERSION = 1

_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


def dumps(entries: dict[str, np.ndarray]) -> bytes:
    """Serialize named arrays; insertion order is preserved on disk."""
    chunks = [MAGIC, struct.pack("<HI", VERSION, len(entries))]
    for name, array in entries.items():
        array = np.ascontiguousarray(array)
        if array.dtype not in _DTYPE_CODES:
            raise ArchiveError(f"unsupported dtype {array.dtype} for entry {name!r}")
        if array.ndim == 0 or array.ndim > 255:
            raise ArchiveError(f"unsupported ndim {array.ndim} for entry {name!r}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(struct.pack("<B", _DTYPE_CODES[array.dtype]))
        chunks.append(array.astype(array.dtype.newbyteorder("<")).tobytes(order="C"))
    return b"".join(chunks)


def loads(data: bytes) -> dict[str, np.ndarray]:
    """Parse an archive back into an ordered name -> array mapping."""
    view = memoryview(data)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ArchiveError("truncated archive")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise ArchiveError("bad magic; not a FALT archive")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(name_len)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ArchiveError("entry name is not valid UTF-8") from exc
        (ndim,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{ndim}I", take(4 * ndim))
        (code,) = struct.unpack("<B", take(1))
        if code not in _CODE_DTYPES:
            raise ArchiveError(f"unknown dtype code {code} for entry {name!r}")
        dtype = _CODE_DTYPES[code]
        n_elem = int(np.prod(dims, dtype=np.int64)) if ndim else 1
        payload = take(n_elem * dtype.itemsize)
        array = np.frombuffer(payload, dtype=dtype).reshape(dims)
        entries[name] = array.astype(dtype.newbyteorder("="))
    if pos != len(view):
        raise ArchiveError("trailing bytes after last entry")
    return entries


def save(path: str, entries: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(dumps(entries))


def load(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path!r}: {exc}") from exc
    return loads(data)
