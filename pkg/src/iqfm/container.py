"""Little-endian binary container for checkpoints, plus atomic file writes.

Layout: 4-byte magic, u16 version, u16 reserved (0), u32 entry count, then
per entry: u16 name length, UTF-8 name, u8 dtype code, u8 ndim, ndim x u32
dims, and the row-major payload.  Dtype codes: 0 f64, 1 i64, 2 complex128
(re, im pairs), 3 UTF-8 text (1-D byte array).
"""
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

VERSION = 1
_HEAD = struct.Struct("<4sHHI")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("<c16"), 3: np.dtype("u1")}


def atomic_write_bytes(path, data):
    """Write via a temp file in the same directory and rename over ``path``."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode("utf-8"))


def _encode(value):
    if isinstance(value, str):
        return 3, np.frombuffer(value.encode("utf-8"), dtype=np.uint8)
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        return 2, arr.astype(_DTYPES[2])
    if arr.dtype.kind in "iub":
        return 1, arr.astype(_DTYPES[1])
    return 0, arr.astype(_DTYPES[0])


def pack(magic, entries):
    """Serialise an ordered mapping name -> array/str under a 4-byte magic."""
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    parts = [_HEAD.pack(magic, VERSION, 0, len(entries))]
    for name, value in entries.items():
        code, arr = _encode(value)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def unpack(data, magic):
    if len(data) < _HEAD.size:
        raise FormatError("container shorter than its header")
    m, version, _, count = _HEAD.unpack_from(data, 0)
    if m != magic:
        raise FormatError(f"bad magic {m!r}, expected {magic!r} at offset 0")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version} at offset 4")
    off = _HEAD.size
    out = {}
    try:
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            code, ndim = struct.unpack_from("<BB", data, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            if code not in _DTYPES:
                raise FormatError(f"unknown dtype code {code} at offset {off - 4 * ndim - 2}")
            dt = _DTYPES[code]
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            nbytes = size * dt.itemsize
            if off + nbytes > len(data):
                raise FormatError(f"truncated payload for {name!r} at offset {off}")
            arr = np.frombuffer(data, dtype=dt, count=size, offset=off).reshape(shape).copy()
            off += nbytes
            out[name] = arr.tobytes().decode("utf-8") if code == 3 else arr
    except struct.error as exc:
        raise FormatError(f"truncated container near offset {off}") from exc
    if off != len(data):
        raise FormatError(f"{len(data) - off} trailing bytes after offset {off}")
    return out


def save(path, magic, entries):
    atomic_write_bytes(path, pack(magic, entries))


def load(path, magic):
    with open(path, "rb") as f:
        return unpack(f.read(), magic)
