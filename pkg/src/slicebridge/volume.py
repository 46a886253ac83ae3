"""Volumetric data model, RVOL file format, sub-volume extraction, reslicing.

A Volume is a Z x H x W scalar field. The on-disk RVOL format is:
8-byte magic "RVOL\\0\\0\\0\\x01", three little-endian uint32 dims (Z, H, W),
one uint8 dtype tag (1 = float32), 3 reserved zero bytes, then Z*H*W
little-endian float32 values in z -> h -> w order. Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Volume",
    "SubVolume",
    "VolumeFormatError",
    "load_volume",
    "save_volume",
    "min_max_normalize",
    "extract_subvolume",
    "reslice",
    "reassemble",
    "save_pgm",
]

RVOL_MAGIC = b"RVOL\x00\x00\x00\x01"
_HEADER = struct.Struct("<8s3IB3x")  # magic, Z, H, W, dtype tag, reserved
_DTYPE_FLOAT32 = 1
_MAX_DIM = 2**20


class VolumeFormatError(ValueError):
    """Malformed RVOL file; message carries the offending byte offset."""


@dataclass(frozen=True)
class Volume:
    """Immutable Z x H x W scalar field.

    ``normalized`` records that values were min-max mapped to [0, 1];
    ``constant_input`` flags the degenerate all-constant normalization case.
    """

    data: np.ndarray
    normalized: bool = False
    constant_input: bool = False

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def Z(self) -> int:
        return self.data.shape[0]


@dataclass(frozen=True)
class SubVolume:
    """A (2N+1) x H x W stack of slices [i-N, ..., i+N] around slice i.

    Out-of-range neighbor indices are filled by replicate-edge padding, so
    row N always equals slice i of the parent volume exactly.
    """

    center_index: int
    half_width: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape[0] != 2 * self.half_width + 1:
            raise ValueError("sub-volume stack height must be 2N+1")


def save_volume(volume: Volume, path) -> None:
    z, h, w = volume.dims
    with open(path, "wb") as f:
        f.write(_HEADER.pack(RVOL_MAGIC, z, h, w, _DTYPE_FLOAT32))
        f.write(volume.data.astype("<f4", copy=False).tobytes())


def load_volume(path) -> Volume:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < _HEADER.size:
        raise VolumeFormatError(f"file shorter than {_HEADER.size}-byte header "
                                f"(offset {len(raw)})")
    magic, z, h, w, tag = _HEADER.unpack_from(raw, 0)
    if magic != RVOL_MAGIC:
        raise VolumeFormatError("bad magic at offset 0")
    if tag != _DTYPE_FLOAT32:
        raise VolumeFormatError(f"unknown dtype tag {tag} at offset 20")
    if min(z, h, w) == 0 or max(z, h, w) > _MAX_DIM:
        raise VolumeFormatError(f"implausible dims ({z}, {h}, {w}) at offset 8")
    n = z * h * w
    expected = _HEADER.size + 4 * n
    if len(raw) != expected:
        raise VolumeFormatError(
            f"payload truncated or oversized: expected {expected} bytes, "
            f"got {len(raw)} (payload starts at offset {_HEADER.size})")
    data = np.frombuffer(raw, dtype="<f4", count=n, offset=_HEADER.size)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data))[0])
        raise VolumeFormatError(
            f"non-finite voxel at payload index {bad} "
            f"(offset {_HEADER.size + 4 * bad})")
    return Volume(data.reshape(z, h, w))


def min_max_normalize(volume: Volume) -> Volume:
    """Affine map of the volume onto [0, 1].

    A constant volume has no range; it maps to all zeros with
    ``constant_input`` set.
    """
    lo = float(volume.data.min())
    hi = float(volume.data.max())
    if hi == lo:
        return Volume(np.zeros(volume.dims, dtype=np.float32),
                      normalized=True, constant_input=True)
    out = (volume.data.astype(np.float64) - lo) / (hi - lo)
    return Volume(out.astype(np.float32), normalized=True)


def extract_subvolume(volume: Volume, i: int, N: int) -> SubVolume:
    """Slices [i-N, ..., i+N] with replicate-edge padding at the boundaries."""
    z = volume.Z
    if not 0 <= i < z:
        raise IndexError(f"slice index {i} out of range for Z={z}")
    idx = np.clip(np.arange(i - N, i + N + 1), 0, z - 1)
    return SubVolume(center_index=i, half_width=N, data=volume.data[idx])


_AXIS = {"z": 0, "y": 1, "x": 2}


def reslice(volume: Volume, axis: str) -> np.ndarray:
    """Stack of 2-D slices orthogonal to the given axis (lossless view)."""
    if axis not in _AXIS:
        raise ValueError(f"axis must be one of {sorted(_AXIS)}, got {axis!r}")
    return np.moveaxis(volume.data, _AXIS[axis], 0)


def reassemble(slices: np.ndarray, axis: str) -> Volume:
    """Inverse of reslice: rebuild the volume from a slice stack."""
    if axis not in _AXIS:
        raise ValueError(f"axis must be one of {sorted(_AXIS)}, got {axis!r}")
    return Volume(np.moveaxis(np.asarray(slices), 0, _AXIS[axis]))


def save_pgm(slice2d: np.ndarray, path) -> None:
    """16-bit binary PGM of a [0, 1] slice, linearly mapped to [0, 65535]."""
    arr = np.asarray(slice2d, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D slice, got shape {arr.shape}")
    pix = np.clip(np.rint(arr * 65535.0), 0, 65535).astype(">u2")
    h, w = pix.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        f.write(pix.tobytes())
