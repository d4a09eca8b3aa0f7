"""Radiance RGBE (.hdr) and PFM readers/writers.

Images are ``(height, width, 3)`` float64 arrays with row 0 at the top.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .errors import DataError, FormatError

_RES_LINE = re.compile(rb"^-Y\s+(\d+)\s+\+X\s+(\d+)\s*$")


def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return bytes(source)
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read()
    return source.read()


def _check_image(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {image.shape}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ValueError("image has zero area")
    return image


# ---------------------------------------------------------------------------
# RGBE
# ---------------------------------------------------------------------------


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    """Shared-exponent decode, Radiance convention (mantissa + 0.5)."""
    rgbe = np.asarray(rgbe, dtype=np.uint8)
    e = rgbe[..., 3].astype(np.int32)
    scale = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return (rgbe[..., :3].astype(np.float64) + 0.5) * scale[..., None]


def float_to_rgbe(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if np.any(rgb < 0.0) or not np.all(np.isfinite(rgb)):
        raise DataError("RGBE can only store finite non-negative radiance")
    v = rgb.max(axis=-1)
    mantissa, exponent = np.frexp(v)
    out = np.zeros(rgb.shape[:-1] + (4,), dtype=np.uint8)
    live = v >= 1e-32
    scale = np.where(live, mantissa * 256.0 / np.where(live, v, 1.0), 0.0)
    out[..., :3] = np.where(live[..., None], np.floor(rgb * scale[..., None]), 0).astype(np.uint8)
    out[..., 3] = np.where(live, exponent + 128, 0).astype(np.uint8)
    return out


def _parse_rgbe_header(data: bytes) -> tuple[int, int, int]:
    if not (data.startswith(b"#?RADIANCE") or data.startswith(b"#?RGBE")):
        raise FormatError("missing Radiance magic")
    pos = 0
    fmt = None
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError("truncated Radiance header")
        line = data[pos:end]
        pos = end + 1
        if line.startswith(b"FORMAT="):
            fmt = line[7:].strip()
        if line.strip() == b"":
            break
    if fmt is not None and fmt != b"32-bit_rle_rgbe":
        raise FormatError(f"unsupported Radiance pixel format {fmt.decode(errors='replace')}")
    end = data.find(b"\n", pos)
    if end < 0:
        raise FormatError("missing Radiance resolution line")
    m = _RES_LINE.match(data[pos:end])
    if not m:
        raise FormatError("only '-Y h +X w' Radiance orientation is supported")
    height, width = int(m.group(1)), int(m.group(2))
    return width, height, end + 1


def _decode_scanlines(data: bytes, pos: int, width: int, height: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    for row in range(height):
        if pos + 4 > len(buf):
            raise FormatError(f"truncated RGBE data at scanline {row}")
        head = buf[pos:pos + 4]
        if 8 <= width < 32768 and head[0] == 2 and head[1] == 2 and not (head[2] & 0x80):
            if (int(head[2]) << 8 | int(head[3])) != width:
                raise FormatError(f"RLE scanline width mismatch at row {row}")
            pos += 4
            for c in range(4):
                i = 0
                while i < width:
                    if pos >= len(buf):
                        raise FormatError(f"truncated RLE run at scanline {row}")
                    count = int(buf[pos])
                    pos += 1
                    if count > 128:
                        count -= 128
                        if i + count > width or pos >= len(buf):
                            raise FormatError(f"bad RLE run at scanline {row}")
                        out[row, i:i + count, c] = buf[pos]
                        pos += 1
                    else:
                        if count == 0 or i + count > width or pos + count > len(buf):
                            raise FormatError(f"bad RLE literal at scanline {row}")
                        out[row, i:i + count, c] = buf[pos:pos + count]
                        pos += count
                    i += count
        else:
            # flat pixels, possibly with old-style (1,1,1,n) repeat markers
            i = 0
            shift = 0
            while i < width:
                if pos + 4 > len(buf):
                    raise FormatError(f"truncated flat scanline {row}")
                px = buf[pos:pos + 4]
                pos += 4
                if px[0] == 1 and px[1] == 1 and px[2] == 1:
                    if i == 0:
                        raise FormatError("repeat marker at start of scanline")
                    count = int(px[3]) << shift
                    if i + count > width:
                        raise FormatError(f"repeat run overflows scanline {row}")
                    out[row, i:i + count] = out[row, i - 1]
                    i += count
                    shift += 8
                else:
                    out[row, i] = px
                    i += 1
                    shift = 0
    return out


def read_rgbe(source) -> np.ndarray:
    data = _read_bytes(source)
    width, height, pos = _parse_rgbe_header(data)
    if width < 1 or height < 1:
        raise ValueError("Radiance image has zero area")
    return rgbe_to_float(_decode_scanlines(data, pos, width, height))


def _rle_channel(values: np.ndarray) -> bytearray:
    out = bytearray()
    n = len(values)
    i = 0
    while i < n:
        run = 1
        while i + run < n and run < 127 and values[i + run] == values[i]:
            run += 1
        if run >= 4:
            out += bytes((128 + run, int(values[i])))
            i += run
            continue
        start = i
        # extend the literal until a run of 4 starts or 128 bytes are taken
        while i < n and i - start < 128:
            if i + 3 < n and values[i] == values[i + 1] == values[i + 2] == values[i + 3]:
                break
            i += 1
        out.append(i - start)
        out += bytes(values[start:i])
    return out


def write_rgbe(image, rle: bool = True) -> bytes:
    image = _check_image(image)
    height, width = image.shape[:2]
    rgbe = float_to_rgbe(image)
    header = b"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n" + f"-Y {height} +X {width}\n".encode()
    body = bytearray()
    use_rle = rle and 8 <= width < 32768
    for row in range(height):
        if use_rle:
            body += bytes((2, 2, width >> 8, width & 0xFF))
            for c in range(4):
                body += _rle_channel(rgbe[row, :, c])
        else:
            body += rgbe[row].tobytes()
    return header + bytes(body)


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def read_pfm(source) -> np.ndarray:
    data = _read_bytes(source)
    tokens = []
    pos = 0
    # header: magic, width, height, scale separated by whitespace; one byte of
    # whitespace follows the scale
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PFM header")
        tokens.append(data[start:pos])
    pos += 1
    magic = tokens[0]
    if magic == b"PF":
        channels = 3
    elif magic == b"Pf":
        channels = 1
    else:
        raise FormatError("missing PFM magic")
    try:
        width, height, scale = int(tokens[1]), int(tokens[2]), float(tokens[3])
    except ValueError as exc:
        raise FormatError(f"malformed PFM header: {exc}") from None
    if width < 1 or height < 1:
        raise ValueError("PFM image has zero area")
    if scale == 0.0:
        raise FormatError("PFM scale must be non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * channels
    if len(data) - pos < count * 4:
        raise FormatError("truncated PFM payload")
    pixels = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    image = pixels.reshape(height, width, channels)[::-1].astype(np.float64)
    if channels == 1:
        image = np.repeat(image, 3, axis=2)
    return image


def write_pfm(image, little_endian: bool = True) -> bytes:
    image = _check_image(image)
    height, width = image.shape[:2]
    header = f"PF\n{width} {height}\n{-1.0 if little_endian else 1.0}\n".encode()
    dtype = "<f4" if little_endian else ">f4"
    return header + np.ascontiguousarray(image[::-1], dtype=dtype).tobytes()


# ---------------------------------------------------------------------------


def read_hdr_image(source) -> np.ndarray:
    """Decode RGBE or PFM by magic bytes."""
    data = _read_bytes(source)
    if data.startswith(b"#?"):
        return read_rgbe(data)
    if data[:2] in (b"PF", b"Pf"):
        return read_pfm(data)
    raise FormatError("unknown HDR image format (expected Radiance or PFM)")


def write_hdr_image(path, image) -> None:
    path = os.fspath(path)
    data = write_pfm(image) if path.lower().endswith(".pfm") else write_rgbe(image)
    with open(path, "wb") as fh:
        fh.write(data)
