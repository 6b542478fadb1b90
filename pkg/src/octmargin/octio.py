"""Binary file formats and patch-set persistence.

OCTV volume: magic "OCTV", u32 version, u32 rows/cols/frames, row-major
little-endian float32 intensities, then an optional mask section of u8
class codes with identical dims (its presence is detected from the file
length).

OCTM checkpoint: magic "OCTM", u32 version, u32-length-prefixed JSON
architecture description, per-tensor little-endian float32 in declaration
order, and a trailing 64-bit checksum (truncated SHA-256) of everything
before it.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .errors import OctMarginError
from .network import ArchitectureSpec, NetworkParams, zero_params
from .preproc import BScanVolume, PatchSet

OCTV_MAGIC = b"OCTV"
OCTM_MAGIC = b"OCTM"
FORMAT_VERSION = 1


class CorruptFileError(OctMarginError):
    """A file failed structural validation or its checksum."""


def _checksum(payload: bytes) -> bytes:
    return hashlib.sha256(payload).digest()[:8]


def write_octv(path, volume: BScanVolume) -> None:
    rows, cols, frames = volume.shape
    with open(path, "wb") as fh:
        fh.write(OCTV_MAGIC)
        fh.write(struct.pack("<4I", FORMAT_VERSION, rows, cols, frames))
        fh.write(np.ascontiguousarray(volume.frames, dtype="<f4").tobytes())
        if volume.mask is not None:
            fh.write(np.ascontiguousarray(volume.mask, dtype=np.uint8).tobytes())


def read_octv(path) -> BScanVolume:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != OCTV_MAGIC:
        raise CorruptFileError(f"{path}: not an OCTV file")
    version, rows, cols, frames = struct.unpack_from("<4I", data, 4)
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported OCTV version {version}")
    n = rows * cols * frames
    head = 20
    body = len(data) - head
    if body not in (4 * n, 5 * n):
        raise CorruptFileError(f"{path}: size {len(data)} inconsistent with dims")
    values = np.frombuffer(data, dtype="<f4", count=n, offset=head)
    mask = None
    if body == 5 * n:
        mask = np.frombuffer(data, dtype=np.uint8, count=n, offset=head + 4 * n)
        mask = mask.reshape(rows, cols, frames).copy()
    return BScanVolume(frames=values.reshape(rows, cols, frames).astype(float), mask=mask)


def write_checkpoint(path, params: NetworkParams) -> None:
    spec_json = json.dumps(params.arch.to_dict(), sort_keys=True).encode("utf-8")
    parts = [OCTM_MAGIC, struct.pack("<2I", FORMAT_VERSION, len(spec_json)), spec_json]
    for _, tensor in params.tensors():
        parts.append(np.ascontiguousarray(tensor, dtype="<f4").tobytes())
    payload = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(payload)
        fh.write(_checksum(payload))


def read_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != OCTM_MAGIC:
        raise CorruptFileError(f"{path}: not an OCTM checkpoint")
    payload, stored = data[:-8], data[-8:]
    if _checksum(payload) != stored:
        raise CorruptFileError(f"{path}: checksum mismatch")
    version, spec_len = struct.unpack_from("<2I", payload, 4)
    if version != FORMAT_VERSION:
        raise CorruptFileError(f"{path}: unsupported OCTM version {version}")
    offset = 12
    arch = ArchitectureSpec.from_dict(json.loads(payload[offset : offset + spec_len]))
    offset += spec_len
    params = zero_params(arch)
    for name, tensor in params.tensors():
        count = tensor.size
        vals = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
        tensor[...] = vals.reshape(tensor.shape)
        offset += 4 * count
    if offset != len(payload):
        raise CorruptFileError(f"{path}: trailing bytes after tensors")
    return params


def save_patches(path, patches: PatchSet) -> None:
    np.savez(path, patches=patches.patches, labels=patches.labels, origins=patches.origins)


def load_patches(path) -> PatchSet:
    with np.load(path) as z:
        return PatchSet(
            patches=z["patches"].astype(float),
            labels=z["labels"].astype(int),
            origins=z["origins"].astype(int),
        )
