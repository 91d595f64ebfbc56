"""Image file I/O: PFM (float), PNG and binary PPM (8/16-bit), exposure lists, scene folders."""
from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class ImageIOError(ValueError):
    pass


class UnknownFormatError(ImageIOError):
    """Magic bytes do not match a supported format."""


class TruncatedFileError(ImageIOError):
    """File ends before the declared payload (or cannot be decoded)."""


class InvalidDimensionsError(ImageIOError):
    """Header declares non-positive or malformed dimensions."""


# ----------------------------------------------------------------------- PFM

def write_pfm(path: str | os.PathLike, image: np.ndarray) -> None:
    """Write an H x W x 3 (or H x W) float image as little-endian PFM, bottom row first."""
    arr = np.asarray(image, dtype="<f4")
    if arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    elif arr.ndim == 2:
        tag = b"Pf"
    else:
        raise ValueError(f"PFM stores 1 or 3 channels, got array of shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n")
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def _read_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(buf) and buf[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    if start == pos:
        raise TruncatedFileError("unexpected end of header")
    return buf[start:pos], pos


def read_pfm(path: str | os.PathLike) -> np.ndarray:
    buf = Path(path).read_bytes()
    if buf[:2] == b"PF":
        channels = 3
    elif buf[:2] == b"Pf":
        channels = 1
    else:
        raise UnknownFormatError(f"{path}: not a PFM file (magic {buf[:2]!r})")
    pos = 2
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        s_tok, pos = _read_token(buf, pos)
        w, h, scale = int(w_tok), int(h_tok), float(s_tok)
    except ValueError as err:
        if isinstance(err, ImageIOError):
            raise
        raise InvalidDimensionsError(f"{path}: malformed PFM header") from err
    if w <= 0 or h <= 0:
        raise InvalidDimensionsError(f"{path}: non-positive dimensions {w}x{h}")
    pos += 1  # single whitespace byte ends the header
    count = w * h * channels
    payload = buf[pos:pos + 4 * count]
    if len(payload) < 4 * count:
        raise TruncatedFileError(f"{path}: expected {4 * count} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4" if scale < 0 else ">f4").astype(np.float32)
    data = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.ascontiguousarray(data[::-1])


# --------------------------------------------------------------- LDR formats

def _read_ppm(path, buf: bytes) -> np.ndarray:
    pos = 2
    try:
        w_tok, pos = _read_token(buf, pos)
        h_tok, pos = _read_token(buf, pos)
        m_tok, pos = _read_token(buf, pos)
        w, h, maxval = int(w_tok), int(h_tok), int(m_tok)
    except ValueError as err:
        if isinstance(err, ImageIOError):
            raise
        raise InvalidDimensionsError(f"{path}: malformed PPM header") from err
    if w <= 0 or h <= 0 or not 0 < maxval < 65536:
        raise InvalidDimensionsError(f"{path}: invalid PPM header {w}x{h} maxval {maxval}")
    pos += 1
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = w * h * 3 * dtype.itemsize
    if len(buf) - pos < nbytes:
        raise TruncatedFileError(f"{path}: expected {nbytes} payload bytes, found {len(buf) - pos}")
    raw = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype).reshape(h, w, 3)
    return raw.astype(np.float32) / maxval


def read_ldr_pixels(path: str | os.PathLike) -> np.ndarray:
    """H x W x 3 float32 in [0, 1]; integer codes divided by the format's maximum code."""
    buf = Path(path).read_bytes()
    if buf[:2] == b"P6":
        return _read_ppm(path, buf)
    if buf[:8] != PNG_MAGIC:
        raise UnknownFormatError(f"{path}: unsupported image format (magic {buf[:8]!r})")
    img = cv2.imdecode(np.frombuffer(buf, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise TruncatedFileError(f"{path}: PNG could not be decoded")
    if img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    elif img.shape[2] == 4:
        img = img[:, :, :3]
    img = img[:, :, ::-1]  # BGR -> RGB
    maxcode = np.iinfo(img.dtype).max
    return img.astype(np.float32) / maxcode


def write_ldr_pixels(path: str | os.PathLike, pixels: np.ndarray, bits: int = 16) -> None:
    """Round-to-nearest quantization; PNG unless the suffix is .ppm."""
    maxcode = (1 << bits) - 1
    codes = np.rint(np.clip(pixels, 0.0, 1.0) * maxcode).astype(np.uint16 if bits > 8 else np.uint8)
    if str(path).lower().endswith(".ppm"):
        h, w = codes.shape[:2]
        body = codes.astype(">u2").tobytes() if bits > 8 else codes.tobytes()
        Path(path).write_bytes(f"P6\n{w} {h}\n{maxcode}\n".encode() + body)
        return
    if codes.ndim == 3:
        codes = codes[:, :, ::-1]
    if not cv2.imwrite(str(path), np.ascontiguousarray(codes)):
        raise ImageIOError(f"{path}: failed to write PNG")


# ------------------------------------------------------------------ metadata

def read_exposures(path: str | os.PathLike) -> list[float]:
    """Exposure times from one EV per line: t = 2**(EV - min EV)."""
    evs = [float(line) for line in Path(path).read_text().split("\n") if line.strip()]
    if not evs:
        raise ImageIOError(f"{path}: no exposure values")
    lo = min(evs)
    return [2.0 ** (ev - lo) for ev in evs]


def write_exposures(path: str | os.PathLike, times) -> None:
    Path(path).write_text("".join(f"{float(np.log2(t))!r}\n" for t in times))
