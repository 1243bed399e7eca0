"""Versioned binary checkpoints.

Layout: 5 magic bytes "DADM1", a little-endian uint32 header length, a
UTF-8 JSON header, then the payload: little-endian float32 values of every
parameter in manifest order.  The header records the format version, the
model kind, hyperparameters, the parameter manifest (name, shape) and the
SHA-256 of the payload; conditioning-branch checkpoints also record the
content hash of the backbone they were trained against.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .optim import ParameterStore

MAGIC = b"DADM1"
FORMAT_VERSION = 1
KINDS = ("backbone", "cicn", "feature-extractor")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    params: dict[str, np.ndarray]   # float64 copies of the float32 payload
    header: dict

    @property
    def payload_hash(self) -> str:
        return self.header["payload_sha256"]

    def to_store(self) -> ParameterStore:
        store = ParameterStore()
        for name, value in self.params.items():
            store.add(name, value)
        return store


def _payload_bytes(params: dict[str, np.ndarray], manifest: list) -> bytes:
    chunks = []
    for name, shape in manifest:
        arr = np.ascontiguousarray(params[name], dtype=np.float32)
        if list(arr.shape) != list(shape):
            raise CheckpointError(f"manifest shape {shape} != parameter {name!r} shape {arr.shape}")
        chunks.append(arr.astype("<f4").tobytes())
    return b"".join(chunks)


def save_checkpoint(
    path,
    kind: str,
    params: dict[str, np.ndarray],
    extra: dict | None = None,
    backbone_hash: str | None = None,
) -> str:
    """Write a checkpoint; returns the payload content hash."""
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r}, expected one of {KINDS}")
    manifest = [[name, list(params[name].shape)] for name in sorted(params)]
    payload = _payload_bytes(params, manifest)
    digest = hashlib.sha256(payload).hexdigest()
    header = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "manifest": manifest,
        "payload_sha256": digest,
    }
    if backbone_hash is not None:
        header["backbone_sha256"] = backbone_hash
    if extra:
        header.update(extra)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)
    return digest


def load_checkpoint(path, expected_backbone_hash: str | None = None) -> Checkpoint:
    """Read and verify a checkpoint; raises CheckpointError on any damage."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"bad magic bytes in {path}")
    off = len(MAGIC)
    if len(blob) < off + 4:
        raise CheckpointError(f"truncated header in {path}")
    (header_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    try:
        header = json.loads(blob[off:off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable header in {path}: {exc}") from exc
    off += header_len
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {header.get('format_version')} in {path}")
    kind = header.get("kind")
    if kind not in KINDS:
        raise CheckpointError(f"unknown checkpoint kind {kind!r} in {path}")

    payload = blob[off:]
    expected_len = 4 * sum(int(np.prod(shape)) if shape else 1 for _, shape in header["manifest"])
    if len(payload) != expected_len:
        raise CheckpointError(f"payload length {len(payload)} != expected {expected_len} in {path}")
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"payload hash mismatch in {path}")
    if expected_backbone_hash is not None:
        if header.get("backbone_sha256") != expected_backbone_hash:
            raise CheckpointError(
                f"checkpoint {path} references backbone {header.get('backbone_sha256')}, "
                f"expected {expected_backbone_hash}"
            )

    params: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in header["manifest"]:
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(payload, dtype="<f4", count=count, offset=pos)
        params[name] = flat.reshape(shape).astype(np.float64)
        pos += 4 * count
    return Checkpoint(kind=kind, params=params, header=header)


def content_hash(path) -> str:
    """Payload hash of an existing checkpoint file (reference identity)."""
    return load_checkpoint(path).payload_hash
