"""Minimal image I/O (8-bit PNG, binary PPM/PGM) and resampling.

Images are float64 arrays of shape ``(height, width, channels)`` with
values in [0, 1] and 1 or 3 channels.  Files are parsed directly from
bytes so that format errors can name the offending offset, and writing
is fully deterministic (fixed filtering and compression settings, no
timestamps).

Resampling is separable with edge-clamped source sampling and the
pixel-center convention ``src = (dst + 0.5) * scale - 0.5``.  The
bicubic kernel is Catmull-Rom (a = -0.5).
"""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError

Image = np.ndarray

KERNELS = ("nearest", "bicubic")
CATMULL_ROM_A = -0.5

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_COLOR_CHANNELS = {0: 1, 2: 3}  # grayscale, truecolor


def validate_image(img: Image, what: str = "image") -> Image:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ShapeError(
            f"{what} must have shape (height, width, 1|3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ShapeError(f"{what} must have positive dims, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ParameterError(f"{what} contains non-finite pixels")
    if img.min() < 0.0 or img.max() > 1.0:
        raise ParameterError(f"{what} has pixels outside [0, 1]")
    return img


def quantize(img: Image) -> np.ndarray:
    """8-bit quantization, round half up: ``floor(p * 255 + 0.5)``."""
    return np.floor(np.asarray(img, dtype=np.float64) * 255.0 + 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------

def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    if pb <= pc:
        return b
    return c


def _unfilter(raw: bytes, width: int, height: int, channels: int) -> np.ndarray:
    stride = width * channels
    out = bytearray(height * stride)
    prev = bytes(stride)
    pos = 0
    for row in range(height):
        ftype = raw[pos]
        pos += 1
        line = bytearray(raw[pos:pos + stride])
        pos += stride
        if ftype == 0:
            pass
        elif ftype == 1:  # Sub
            for i in range(channels, stride):
                line[i] = (line[i] + line[i - channels]) & 0xFF
        elif ftype == 2:  # Up
            for i in range(stride):
                line[i] = (line[i] + prev[i]) & 0xFF
        elif ftype == 3:  # Average
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                line[i] = (line[i] + ((left + prev[i]) >> 1)) & 0xFF
        elif ftype == 4:  # Paeth
            for i in range(stride):
                left = line[i - channels] if i >= channels else 0
                up_left = prev[i - channels] if i >= channels else 0
                line[i] = (line[i] + _paeth(left, prev[i], up_left)) & 0xFF
        else:
            raise FormatError(f"scanline {row}: unknown PNG filter type {ftype}")
        out[row * stride:(row + 1) * stride] = line
        prev = bytes(line)
    arr = np.frombuffer(bytes(out), dtype=np.uint8)
    return arr.reshape(height, width, channels)


def _decode_png(data: bytes) -> Image:
    off = len(_PNG_SIG)
    header = None
    idat = bytearray()
    saw_iend = False
    while not saw_iend:
        if off + 8 > len(data):
            raise FormatError(f"offset {off}: truncated chunk header")
        length, ctype = struct.unpack(">I4s", data[off:off + 8])
        if off + 12 + length > len(data):
            raise FormatError(
                f"offset {off + 8}: truncated {ctype.decode('latin1')} chunk")
        payload = data[off + 8:off + 8 + length]
        crc, = struct.unpack(">I", data[off + 8 + length:off + 12 + length])
        if zlib.crc32(data[off + 4:off + 8 + length]) & 0xFFFFFFFF != crc:
            raise FormatError(
                f"offset {off + 8 + length}: bad CRC in {ctype.decode('latin1')} chunk")
        if header is None and ctype != b"IHDR":
            raise FormatError(f"offset {off + 4}: first chunk must be IHDR")
        if ctype == b"IHDR":
            if length != 13:
                raise FormatError(f"offset {off}: IHDR length {length}, expected 13")
            base = off + 8
            width, height = struct.unpack(">II", payload[:8])
            depth, color, comp, filt, interlace = payload[8:13]
            if width == 0 or height == 0:
                raise FormatError(f"offset {base}: zero image dimension")
            if depth != 8:
                raise FormatError(f"offset {base + 8}: unsupported bit depth {depth}")
            if color not in _COLOR_CHANNELS:
                raise FormatError(
                    f"offset {base + 9}: unsupported color type {color} "
                    f"(only 8-bit grayscale and RGB)")
            if comp != 0:
                raise FormatError(f"offset {base + 10}: unknown compression {comp}")
            if filt != 0:
                raise FormatError(f"offset {base + 11}: unknown filter method {filt}")
            if interlace != 0:
                raise FormatError(f"offset {base + 12}: interlaced PNG not supported")
            header = (width, height, _COLOR_CHANNELS[color])
        elif ctype == b"IDAT":
            idat += payload
        elif ctype == b"IEND":
            saw_iend = True
        off += 12 + length
    if header is None:
        raise FormatError("offset 8: no IHDR chunk")
    width, height, channels = header
    try:
        raw = zlib.decompress(bytes(idat))
    except zlib.error as err:
        raise FormatError(f"IDAT: corrupt zlib stream ({err})")
    expected = (width * channels + 1) * height
    if len(raw) != expected:
        raise FormatError(
            f"IDAT: {len(raw)} bytes after decompression, expected {expected}")
    return _unfilter(raw, width, height, channels).astype(np.float64) / 255.0


def _chunk(ctype: bytes, payload: bytes) -> bytes:
    return (struct.pack(">I", len(payload)) + ctype + payload
            + struct.pack(">I", zlib.crc32(ctype + payload) & 0xFFFFFFFF))


def _encode_png(img: Image) -> bytes:
    q = quantize(img)
    height, width, channels = q.shape
    color = 0 if channels == 1 else 2
    ihdr = struct.pack(">IIBBBBB", width, height, 8, color, 0, 0, 0)
    raw = b"".join(b"\x00" + q[row].tobytes() for row in range(height))
    return (_PNG_SIG + _chunk(b"IHDR", ihdr)
            + _chunk(b"IDAT", zlib.compress(raw, 9)) + _chunk(b"IEND", b""))


# ---------------------------------------------------------------------------
# Binary PPM / PGM
# ---------------------------------------------------------------------------

def _pnm_token(data: bytes, pos: int) -> tuple[int, int]:
    while pos < len(data):
        ch = data[pos:pos + 1]
        if ch == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
        elif ch.isspace():
            pos += 1
        else:
            break
    start = pos
    while pos < len(data) and data[pos:pos + 1].isdigit():
        pos += 1
    if pos == start:
        raise FormatError(f"offset {start}: expected a decimal value in PNM header")
    return int(data[start:pos]), pos


def _decode_pnm(data: bytes) -> Image:
    channels = 3 if data[:2] == b"P6" else 1
    width, pos = _pnm_token(data, 2)
    height, pos = _pnm_token(data, pos)
    maxval, pos = _pnm_token(data, pos)
    if width < 1 or height < 1:
        raise FormatError(f"offset 2: zero PNM dimension")
    if not 1 <= maxval <= 255:
        raise FormatError(f"offset {pos}: PNM maxval {maxval} outside [1, 255]")
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError(f"offset {pos}: missing whitespace before PNM raster")
    pos += 1
    need = width * height * channels
    raster = data[pos:pos + need]
    if len(raster) < need:
        raise FormatError(
            f"offset {pos + len(raster)}: truncated PNM pixel data "
            f"({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, channels)
    return arr.astype(np.float64) / maxval


def _encode_pnm(img: Image) -> bytes:
    q = quantize(img)
    height, width, channels = q.shape
    magic = b"P6" if channels == 3 else b"P5"
    return magic + f"\n{width} {height}\n255\n".encode("ascii") + q.tobytes()


# ---------------------------------------------------------------------------
# Load / save
# ---------------------------------------------------------------------------

def load_image(path) -> Image:
    """Read a PNG (8-bit gray/RGB) or binary PPM/PGM into [0, 1] floats."""
    data = Path(path).read_bytes()
    if data[:8] == _PNG_SIG:
        return _decode_png(data)
    if data[:2] in (b"P5", b"P6"):
        return _decode_pnm(data)
    raise FormatError("offset 0: not a PNG or binary PPM/PGM file")


def save_image(img: Image, path) -> None:
    """Write an 8-bit image file; the format follows the path suffix."""
    img = validate_image(img)
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        payload = _encode_png(img)
    elif suffix in (".ppm", ".pgm"):
        if suffix == ".ppm" and img.shape[2] != 3:
            raise ParameterError("PPM output requires a 3-channel image")
        if suffix == ".pgm" and img.shape[2] != 1:
            raise ParameterError("PGM output requires a 1-channel image")
        payload = _encode_pnm(img)
    else:
        raise ParameterError(f"cannot infer image format from suffix {suffix!r}")
    Path(path).write_bytes(payload)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def _catmull_rom(t: np.ndarray) -> np.ndarray:
    a = CATMULL_ROM_A
    t = np.abs(t)
    t2 = t * t
    t3 = t2 * t
    near = (a + 2.0) * t3 - (a + 3.0) * t2 + 1.0
    far = a * t3 - 5.0 * a * t2 + 8.0 * a * t - 4.0 * a
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _axis_taps(src: int, dst: int, kernel: str) -> tuple[np.ndarray, np.ndarray]:
    """Source indices and weights for one axis: (dst, taps) arrays."""
    scale = src / dst
    centers = (np.arange(dst, dtype=np.float64) + 0.5) * scale - 0.5
    if kernel == "nearest":
        idx = np.clip(np.floor(centers + 0.5).astype(np.int64), 0, src - 1)
        return idx[:, None], np.ones((dst, 1))
    base = np.floor(centers).astype(np.int64)
    offsets = np.arange(-1, 3)
    taps = base[:, None] + offsets[None, :]
    weights = _catmull_rom(centers[:, None] - taps)
    return np.clip(taps, 0, src - 1), weights


def _resample_axis(arr: np.ndarray, new_len: int, axis: int, kernel: str) -> np.ndarray:
    src = arr.shape[axis]
    idx, weights = _axis_taps(src, new_len, kernel)
    moved = np.moveaxis(arr, axis, 0)
    out = np.zeros((new_len, *moved.shape[1:]), dtype=np.float64)
    extra = (1,) * (moved.ndim - 1)
    for k in range(idx.shape[1]):
        out += weights[:, k].reshape(-1, *extra) * moved[idx[:, k]]
    return np.moveaxis(out, 0, axis)


def resize(img: Image, new_w: int, new_h: int, kernel: str = "bicubic") -> Image:
    """Separable resampling to ``new_w`` x ``new_h``, clamped to [0, 1]."""
    img = validate_image(img)
    if kernel not in KERNELS:
        raise ParameterError(f"unknown resample kernel {kernel!r}")
    if new_w < 1 or new_h < 1:
        raise ParameterError(f"target dims must be positive, got {new_w}x{new_h}")
    out = _resample_axis(img, new_w, 1, kernel)
    out = _resample_axis(out, new_h, 0, kernel)
    return np.clip(out, 0.0, 1.0)


def crop(img: Image, box) -> Image:
    """Exact pixel copy of the rectangle ``box`` (x, y, w, h attributes)."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if box.w < 1 or box.h < 1 or box.x < 0 or box.y < 0 \
            or box.x + box.w > w or box.y + box.h > h:
        raise ShapeError(
            f"box (x={box.x}, y={box.y}, w={box.w}, h={box.h}) "
            f"outside image {w}x{h}")
    return img[box.y:box.y + box.h, box.x:box.x + box.w].copy()
