"""Binary PGM (P5) encode/decode for 8- and 16-bit gray images."""
from __future__ import annotations

import numpy as np


class PGMError(ValueError):
    pass


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def encode_pgm(pixels: np.ndarray, maxval: int) -> bytes:
    """Integer pixels (H, W) -> P5 bytes. Samples are big-endian when maxval > 255."""
    pixels = np.asarray(pixels)
    if pixels.ndim != 2:
        raise PGMError("PGM image must be 2-D")
    if pixels.min(initial=0) < 0 or pixels.max(initial=0) > maxval:
        raise PGMError(f"pixel values outside [0, {maxval}]")
    h, w = pixels.shape
    header = f"P5\n{w} {h}\n{maxval}\n".encode("ascii")
    dtype = ">u2" if maxval > 255 else "u1"
    return header + pixels.astype(dtype).tobytes()


def _header_tokens(blob: bytes):
    """Yield (token, end_offset) for the first four header tokens, skipping comments."""
    pos, n = 0, len(blob)
    tokens = []
    while len(tokens) < 4:
        while pos < n and blob[pos:pos + 1].isspace():
            pos += 1
        if pos < n and blob[pos:pos + 1] == b"#":
            while pos < n and blob[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PGMError("truncated PGM header")
        tokens.append(blob[start:pos])
    # exactly one whitespace byte separates maxval from the raster
    return tokens, pos + 1


def decode_pgm(blob: bytes) -> tuple[np.ndarray, int]:
    """P5 bytes -> (integer pixels (H, W), maxval)."""
    if blob[:2] != b"P5":
        raise PGMError("bad PGM magic (expected P5)")
    tokens, off = _header_tokens(blob)
    try:
        w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError as exc:
        raise PGMError("malformed PGM header") from exc
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise PGMError("invalid PGM dimensions or maxval")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    need = w * h * dtype.itemsize
    if len(blob) - off < need:
        raise PGMError("truncated PGM payload")
    px = np.frombuffer(blob, dtype=dtype, count=w * h, offset=off).reshape(h, w)
    return px.astype(np.int64), maxval


def encode_pgm16(values: np.ndarray) -> bytes:
    """Map reals in [0, 1] to 16-bit samples, round half away from zero."""
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)) or v.min(initial=0) < 0 or v.max(initial=0) > 1:
        raise PGMError("encode_pgm16 needs values in [0, 1]")
    return encode_pgm(_round_half_away(v * 65535.0).astype(np.int64), 65535)


def decode_pgm16(blob: bytes) -> np.ndarray:
    px, maxval = decode_pgm(blob)
    if maxval != 65535:
        raise PGMError(f"expected 16-bit PGM (maxval 65535), got maxval {maxval}")
    return px / 65535.0


def encode_mask_pgm(mask: np.ndarray) -> bytes:
    """Boolean mask as 8-bit PGM: 255 where true, 0 elsewhere."""
    return encode_pgm(np.where(np.asarray(mask, dtype=bool), 255, 0), 255)


def decode_mask_pgm(blob: bytes) -> np.ndarray:
    px, maxval = decode_pgm(blob)
    if maxval != 255:
        raise PGMError(f"expected 8-bit mask PGM, got maxval {maxval}")
    if not np.all((px == 0) | (px == 255)):
        raise PGMError("mask PGM must contain only 0 and 255")
    return px == 255
