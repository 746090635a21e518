"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic   8 bytes  b"DBSECKPT"
    version u32      format version (currently 1)
    digest  32 bytes sha256 of the canonical network-config string
    step    u64      training step counter
    count   u32      number of named blobs
    blob*   u16 name length, name utf-8, u8 ndim, u32 per dim, f32 data

Weights are serialised as little-endian 32-bit floats in state-dict order, so
a save -> load -> save round trip is byte-identical.
"""

import struct

import numpy as np
import torch

MAGIC = b"DBSECKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_blobs(path, digest_hex: str, step: int, blobs):
    """Write named float32 arrays; `blobs` is an iterable of (name, tensor)."""
    digest = bytes.fromhex(digest_hex)
    if len(digest) != 32:
        raise CheckpointError("config digest must be 32 bytes of hex")
    items = list(blobs)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(digest)
        fh.write(struct.pack("<Q", int(step)))
        fh.write(struct.pack("<I", len(items)))
        for name, tensor in items:
            arr = np.ascontiguousarray(
                tensor.detach().cpu().numpy() if isinstance(tensor, torch.Tensor) else tensor,
                dtype="<f4",
            )
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def load_blobs(path, expected_digest_hex: str = None):
    """Read (digest_hex, step, {name: float32 array}); verifies the digest if given."""
    with open(path, "rb") as fh:
        data = fh.read()
    view = memoryview(data)
    if bytes(view[: len(MAGIC)]) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    if len(data) < len(MAGIC) + 4 + 32 + 8 + 4:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", view, off)
    off += 4
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest_hex = bytes(view[off : off + 32]).hex()
    off += 32
    (step,) = struct.unpack_from("<Q", view, off)
    off += 8
    (count,) = struct.unpack_from("<I", view, off)
    off += 4
    if expected_digest_hex is not None and digest_hex != expected_digest_hex:
        raise CheckpointError(
            f"{path}: config digest mismatch (checkpoint {digest_hex[:12]}..., "
            f"expected {expected_digest_hex[:12]}...)"
        )
    blobs = {}
    for _ in range(count):
        if off + 2 > len(data):
            raise CheckpointError(f"{path}: truncated blob table")
        (name_len,) = struct.unpack_from("<H", view, off)
        off += 2
        name = bytes(view[off : off + name_len]).decode()
        off += name_len
        (ndim,) = struct.unpack_from("<B", view, off)
        off += 1
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<I", view, off)
            off += 4
            shape.append(dim)
        n_bytes = int(np.prod(shape, dtype=np.int64)) * 4 if shape else 4
        if off + n_bytes > len(data):
            raise CheckpointError(f"{path}: truncated blob data for {name!r}")
        arr = np.frombuffer(view[off : off + n_bytes], dtype="<f4").reshape(shape)
        off += n_bytes
        blobs[name] = arr
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return digest_hex, step, blobs
