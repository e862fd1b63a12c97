"""Binary on-disk cache for extracted feature vectors.

Layout, little-endian throughout:

    magic   "FVC1" (4 bytes)
    u32     version = 1
    u32     dim
    u64     count
    u8      descriptor-identity length, then that many identity bytes
    count records of: u16 id length, id bytes (utf-8), dim x f32

Round trips are bit-exact; stale caches are detected through the stored
descriptor identity.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from scoutcv.errors import CacheError, StaleCacheError
from scoutcv.features.extractors import ExtractorDescriptor

MAGIC = b"FVC1"
VERSION = 1


def write_cache(
    path: str | Path,
    vectors: list[tuple[str, np.ndarray]],
    descriptor: ExtractorDescriptor,
) -> None:
    """Write (record-id, vector) pairs produced by one extractor."""
    identity = descriptor.identity.encode("utf-8")
    if len(identity) > 255:
        raise CacheError(f"descriptor identity exceeds 255 bytes: {descriptor.identity!r}")
    dim = descriptor.dim
    payload = bytearray()
    payload += MAGIC
    payload += struct.pack("<IIQB", VERSION, dim, len(vectors), len(identity))
    payload += identity
    for rid, vec in vectors:
        arr = np.asarray(vec, dtype=np.float32)
        if arr.ndim != 1 or arr.shape[0] != dim:
            raise CacheError(f"vector for {rid!r} has shape {arr.shape}, expected ({dim},)")
        if not np.all(np.isfinite(arr)):
            raise CacheError(f"vector for {rid!r} contains non-finite values")
        rid_bytes = rid.encode("utf-8")
        if len(rid_bytes) > 0xFFFF:
            raise CacheError(f"record id too long: {rid!r}")
        payload += struct.pack("<H", len(rid_bytes))
        payload += rid_bytes
        payload += arr.astype("<f4").tobytes()
    Path(path).write_bytes(bytes(payload))


def read_cache(path: str | Path) -> tuple[ExtractorDescriptor, list[tuple[str, np.ndarray]]]:
    """Read a feature cache; validates structure and vector finiteness."""
    data = Path(path).read_bytes()
    if len(data) < 4 + 17 or data[:4] != MAGIC:
        raise CacheError(f"{path}: corrupt header (bad magic)")
    version, dim, count, idlen = struct.unpack_from("<IIQB", data, 4)
    if version != VERSION:
        raise CacheError(f"{path}: unsupported cache version {version}")
    pos = 4 + 17
    if pos + idlen > len(data):
        raise CacheError(f"{path}: truncated descriptor identity")
    identity = data[pos : pos + idlen].decode("utf-8")
    pos += idlen
    vectors: list[tuple[str, np.ndarray]] = []
    vec_bytes = 4 * dim
    for i in range(count):
        if pos + 2 > len(data):
            raise CacheError(f"{path}: truncated payload at record {i}")
        (rid_len,) = struct.unpack_from("<H", data, pos)
        pos += 2
        if pos + rid_len + vec_bytes > len(data):
            raise CacheError(f"{path}: truncated payload at record {i}")
        rid = data[pos : pos + rid_len].decode("utf-8")
        pos += rid_len
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).copy()
        pos += vec_bytes
        if not np.all(np.isfinite(vec)):
            raise CacheError(f"{path}: non-finite vector for record {rid!r}")
        vectors.append((rid, vec))
    if pos != len(data):
        raise CacheError(f"{path}: {len(data) - pos} trailing bytes after last record")
    return ExtractorDescriptor.from_identity(identity, dim), vectors


def check_descriptor(
    found: ExtractorDescriptor, expected: ExtractorDescriptor, path: str | Path
) -> None:
    """Refuse to consume a cache produced by a different extractor."""
    if found.identity != expected.identity or found.dim != expected.dim:
        raise StaleCacheError(
            f"{path}: cache was built by {found.identity!r} (dim {found.dim}), "
            f"requested extractor is {expected.identity!r} (dim {expected.dim})"
        )
