"""Binary artifact container: one JSON manifest + raw little-endian blobs.

Every on-disk artifact (graphs, checkpoints, dataset caches) uses this single
container layout so round-trip and corruption behavior is uniform:

    bytes 0..3    magic  b"HGLB"
    bytes 4..11   uint64 LE manifest byte length
    manifest      canonical JSON (sorted keys, no whitespace)
    payload       blob bytes, concatenated in manifest order

The manifest records for each blob its name, dtype token, shape, payload
offset, byte length, and CRC32. Serialization is deterministic: writing the
result of a read reproduces the original file byte for byte.
"""

from __future__ import annotations

import json
import zlib

import numpy as np

from .errors import ContainerError

MAGIC = b"HGLB"
FORMAT_VERSION = 1


def _le_dtype(arr: np.ndarray) -> np.ndarray:
    """Return an equivalent array whose dtype is little-endian or order-free."""
    dt = arr.dtype
    if dt.byteorder == ">":
        return arr.astype(dt.newbyteorder("<"))
    return arr


def write_container(path, kind: str, meta: dict, blobs: dict) -> None:
    """Write named arrays plus JSON-safe metadata to ``path``.

    ``kind`` tags the artifact flavor ("graph", "checkpoint", ...) and is
    checked on read. ``meta`` must be JSON-serializable; blob order follows
    dict insertion order and is preserved by ``read_container``.
    """
    entries = []
    payload = bytearray()
    for name, arr in blobs.items():
        arr = np.ascontiguousarray(_le_dtype(np.asarray(arr)))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
                "crc32": zlib.crc32(raw),
            }
        )
        payload += raw
    manifest = {
        "format": "hgloc-container",
        "version": FORMAT_VERSION,
        "kind": kind,
        "meta": meta,
        "blobs": entries,
    }
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        fh.write(bytes(payload))


def read_container(path, expect_kind: str | None = None):
    """Read a container, verifying magic, version, kind, and per-blob CRCs.

    Returns ``(meta, blobs)`` where blobs is a name->ndarray dict in stored
    order. Raises ContainerError on any structural problem.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 12 or data[:4] != MAGIC:
        raise ContainerError(f"{path}: not a container file (bad magic)")
    head_len = int.from_bytes(data[4:12], "little")
    if 12 + head_len > len(data):
        raise ContainerError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(data[12 : 12 + head_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable manifest ({exc})") from exc
    if manifest.get("format") != "hgloc-container":
        raise ContainerError(f"{path}: unknown format tag {manifest.get('format')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise ContainerError(
            f"{path}: container version {manifest.get('version')!r}, "
            f"expected {FORMAT_VERSION}"
        )
    if expect_kind is not None and manifest.get("kind") != expect_kind:
        raise ContainerError(
            f"{path}: artifact kind {manifest.get('kind')!r}, expected {expect_kind!r}"
        )
    payload = data[12 + head_len :]
    blobs = {}
    for entry in manifest["blobs"]:
        name = entry["name"]
        if name in blobs:
            raise ContainerError(f"{path}: duplicate blob name {name!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        raw = payload[start : start + nbytes]
        if len(raw) != nbytes:
            raise ContainerError(f"{path}: truncated blob {name!r}")
        if zlib.crc32(raw) != entry["crc32"]:
            raise ContainerError(f"{path}: checksum failure in blob {name!r}")
        arr = np.frombuffer(raw, dtype=np.dtype(entry["dtype"]))
        blobs[name] = arr.reshape(entry["shape"]).copy()
    return manifest["meta"], blobs


def read_kind(path) -> str:
    """Peek at the artifact kind without validating blobs."""
    with open(path, "rb") as fh:
        data = fh.read(12)
        if len(data) < 12 or data[:4] != MAGIC:
            raise ContainerError(f"{path}: not a container file (bad magic)")
        head_len = int.from_bytes(data[4:12], "little")
        head = fh.read(head_len)
    try:
        manifest = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable manifest ({exc})") from exc
    return manifest.get("kind", "")
