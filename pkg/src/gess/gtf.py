"""GTF1 tensor files.

Layout (little-endian)::

    bytes 0-3   b"GTF1"
    byte  4     dtype code, 0x01 = float32
    byte  5     ndim N, 1..4
    N x u32     extents, outermost first
    payload     prod(extents) float32 values, row-major

Trailing bytes after the payload are rejected.
"""
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GTF1"
DTYPE_F32 = 0x01
MAX_NDIM = 4
# element count ceiling; keeps the byte size addressable by a signed 32-bit offset
MAX_ELEMENTS = (1 << 31) - 1


class GTFError(ValueError):
    """Base class for malformed GTF data."""


class BadMagicError(GTFError):
    pass


class BadDtypeError(GTFError):
    pass


class BadShapeError(GTFError):
    pass


class DimOverflowError(GTFError):
    pass


class TruncatedPayloadError(GTFError):
    pass


class TrailingBytesError(GTFError):
    pass


def _check_dims(dims):
    if not 1 <= len(dims) <= MAX_NDIM:
        raise BadShapeError(f"ndim must be in 1..{MAX_NDIM}, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise BadShapeError(f"every extent must be >= 1, got {tuple(dims)}")
    if any(d > 0xFFFFFFFF for d in dims):
        raise DimOverflowError(f"extent does not fit in u32: {tuple(dims)}")
    n = 1
    for d in dims:
        n *= int(d)
    if n > MAX_ELEMENTS:
        raise DimOverflowError(f"dim product overflow: {tuple(dims)} has {n} elements")
    return n


def to_bytes(t):
    t = np.asarray(t)
    _check_dims(t.shape)
    header = MAGIC + bytes([DTYPE_F32, t.ndim]) + struct.pack(f"<{t.ndim}I", *t.shape)
    return header + np.ascontiguousarray(t, dtype="<f4").tobytes()


def from_bytes(buf):
    buf = memoryview(buf)
    if len(buf) < 6 or bytes(buf[:4]) != MAGIC:
        raise BadMagicError("bad magic: not a GTF1 file")
    if buf[4] != DTYPE_F32:
        raise BadDtypeError(f"unsupported dtype code 0x{buf[4]:02x} (only f32 = 0x01)")
    ndim = buf[5]
    if not 1 <= ndim <= MAX_NDIM:
        raise BadShapeError(f"ndim must be in 1..{MAX_NDIM}, got {ndim}")
    head = 6 + 4 * ndim
    if len(buf) < head:
        raise TruncatedPayloadError("truncated payload: header shorter than declared extents")
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    n = _check_dims(dims)
    need = head + 4 * n
    if len(buf) < need:
        raise TruncatedPayloadError(f"truncated payload: need {4 * n} bytes, have {len(buf) - head}")
    if len(buf) > need:
        raise TrailingBytesError(f"{len(buf) - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=head)
    return data.astype(np.float32).reshape(dims)


def write(t, path):
    Path(path).write_bytes(to_bytes(t))


def read(path):
    return from_bytes(Path(path).read_bytes())


MANIFEST = "manifest.json"


def write_bundle(directory, tensors, scalars=None):
    """Write ``{name: (array, role)}`` as one GTF file per tensor plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, (array, role) in tensors.items():
        fname = f"{name}.gtf"
        write(array, directory / fname)
        entries[name] = {"file": fname, "shape": list(np.shape(array)), "role": role}
    manifest = {"tensors": entries, "scalars": dict(scalars or {})}
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_bundle(directory):
    """Inverse of :func:`write_bundle`; returns ``(tensors, scalars)``."""
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    tensors = {}
    for name, entry in manifest["tensors"].items():
        t = read(directory / entry["file"])
        if list(t.shape) != list(entry["shape"]):
            raise BadShapeError(f"{name}: manifest shape {entry['shape']} != file shape {list(t.shape)}")
        tensors[name] = t
    return tensors, manifest.get("scalars", {})
