"""Complex tensor helpers and the CVT binary format.

Complex tensors are plain numpy arrays of dtype ``complex64`` (the default) or
``complex128`` for gradient-check runs.  ``complex64`` is already stored as
interleaved little-endian ``(re, im)`` float32 pairs, so no wrapper class is
needed.  Activations use the ``(batch, height, width, channels)`` layout and
kernels use ``(kh, kw, in_ch, out_ch)``.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Sequence, Union

import numpy as np

CTensor = np.ndarray

DTYPE = np.complex64
CVT_MAGIC = b"CVT1"

PadSpec = Union[int, tuple[int, int]]


class ShapeError(ValueError):
    """Raised when tensor shapes are invalid or incompatible."""


class FormatError(ValueError):
    """Raised when a binary file does not follow the expected layout."""


def zeros(shape: Sequence[int], dtype=DTYPE) -> CTensor:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s <= 0 for s in shape):
        raise ShapeError(f"all dimensions must be positive, got {shape}")
    return np.zeros(shape, dtype=dtype)


def zeros_like(x: CTensor) -> CTensor:
    return np.zeros_like(x)


def as_ctensor(x, dtype=DTYPE) -> CTensor:
    return np.ascontiguousarray(x, dtype=dtype)


def add(a: CTensor, b: CTensor) -> CTensor:
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def _spatial_axes(x: CTensor) -> tuple[int, int]:
    if x.ndim == 4:
        return 1, 2
    if x.ndim == 3:
        return 0, 1
    raise ShapeError(f"expected a rank-3 or rank-4 spatial tensor, got rank {x.ndim}")


def _pair(p: PadSpec) -> tuple[int, int]:
    if isinstance(p, (tuple, list)):
        return int(p[0]), int(p[1])
    return int(p), int(p)


def reflect_pad(x: CTensor, pad_h: PadSpec, pad_w: PadSpec) -> CTensor:
    """Mirror-pad the spatial axes without repeating the edge pixel.

    ``pad_h`` and ``pad_w`` are either a symmetric amount or a
    ``(before, after)`` pair.  Works on ``(H, W, C)`` and ``(B, H, W, C)``
    tensors.
    """
    ah, aw = _spatial_axes(x)
    ph, pw = _pair(pad_h), _pair(pad_w)
    if min(ph + pw) < 0:
        raise ShapeError("padding must be non-negative")
    if max(ph) >= x.shape[ah] or max(pw) >= x.shape[aw]:
        raise ShapeError(
            f"reflect padding {ph, pw} must be smaller than spatial size "
            f"{x.shape[ah], x.shape[aw]}"
        )
    widths = [(0, 0)] * x.ndim
    widths[ah] = ph
    widths[aw] = pw
    return np.pad(x, widths, mode="reflect")


def crop(x: CTensor, pad_h: PadSpec, pad_w: PadSpec) -> CTensor:
    """Inverse of :func:`reflect_pad`: strip the given border.

    Also accepts 2-d ``(H, W)`` grids such as label maps.
    """
    ah, aw = (0, 1) if x.ndim == 2 else _spatial_axes(x)
    (h0, h1), (w0, w1) = _pair(pad_h), _pair(pad_w)
    idx = [slice(None)] * x.ndim
    idx[ah] = slice(h0, x.shape[ah] - h1)
    idx[aw] = slice(w0, x.shape[aw] - w1)
    return x[tuple(idx)]


def hflip(x: CTensor) -> CTensor:
    """Reverse the width axis."""
    _, aw = _spatial_axes(x)
    return np.flip(x, axis=aw).copy()


def vflip(x: CTensor) -> CTensor:
    """Reverse the height axis."""
    ah, _ = _spatial_axes(x)
    return np.flip(x, axis=ah).copy()


# -- CVT binary format ------------------------------------------------------

def write_cvt(f: BinaryIO, x: CTensor) -> None:
    x = np.asarray(x)
    if x.ndim > 255:
        raise FormatError("rank too large for CVT")
    f.write(CVT_MAGIC)
    f.write(struct.pack("<B", x.ndim))
    f.write(struct.pack(f"<{x.ndim}Q", *x.shape))
    f.write(np.ascontiguousarray(x, dtype="<c8").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise FormatError(f"truncated CVT payload: wanted {n} bytes, got {len(buf)}")
    return buf


def read_cvt(f: BinaryIO) -> CTensor:
    magic = _read_exact(f, 4)
    if magic != CVT_MAGIC:
        raise FormatError(f"bad CVT magic {magic!r}")
    (rank,) = struct.unpack("<B", _read_exact(f, 1))
    dims = struct.unpack(f"<{rank}Q", _read_exact(f, 8 * rank))
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    data = np.frombuffer(_read_exact(f, 8 * count), dtype="<c8")
    return data.reshape(dims).astype(DTYPE)


def save_cvt(path, x: CTensor) -> None:
    with open(path, "wb") as f:
        write_cvt(f, x)


def load_cvt(path) -> CTensor:
    with open(path, "rb") as f:
        x = read_cvt(f)
        if f.read(1):
            raise FormatError(f"trailing bytes after CVT payload in {path}")
    return x


def to_cvt_bytes(x: CTensor) -> bytes:
    buf = io.BytesIO()
    write_cvt(buf, x)
    return buf.getvalue()
