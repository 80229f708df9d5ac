"""Reading and writing Netpbm images (binary PGM/PPM) plus optional PNG.

PGM is the toolkit's native frame format: P5, 8- or 16-bit, big-endian sample
order per the Netpbm convention. Intensities normalize as k / maxval so a
round trip at the stored bit depth is lossless.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .core import GrayImage


class ImageFormatError(ValueError):
    """The file is not a supported grayscale image."""


def _read_pnm_header(f) -> tuple[bytes, int, int, int]:
    magic = f.read(2)
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported magic {magic!r}; expected binary PGM (P5) or PPM (P6)")

    # width, height, maxval separated by whitespace; '#' starts a comment.
    fields = []
    while len(fields) < 3:
        ch = f.read(1)
        if not ch:
            raise ImageFormatError("truncated PNM header")
        if ch == b"#":
            while ch not in (b"\n", b""):
                ch = f.read(1)
            continue
        if ch.isspace():
            continue
        token = ch
        while True:
            ch = f.read(1)
            if not ch or ch.isspace():
                break
            if not ch.isdigit():
                raise ImageFormatError(f"malformed PNM header near {token + ch!r}")
            token += ch
        fields.append(int(token))
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PNM dimensions {width}x{height}")
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported maxval {maxval}; only 8- and 16-bit samples")
    return magic, width, height, maxval


def read_pgm(path: str | os.PathLike) -> tuple[np.ndarray, int]:
    """Read a binary PGM, returning (raw uint array (h, w), maxval)."""
    with open(path, "rb") as f:
        magic, width, height, maxval = _read_pnm_header(f)
        if magic != b"P5":
            raise ImageFormatError("color PPM given where a grayscale PGM was expected")
        dtype = np.dtype(">u2") if maxval == 65535 else np.dtype(np.uint8)
        count = width * height
        raw = np.frombuffer(f.read(count * dtype.itemsize), dtype=dtype)
    if raw.size != count:
        raise ImageFormatError(f"PGM raster truncated: expected {count} samples, got {raw.size}")
    return raw.reshape(height, width).astype(np.uint16 if maxval == 65535 else np.uint8), maxval


def write_pgm(path: str | os.PathLike, samples: np.ndarray, maxval: int = 255) -> None:
    """Write a binary PGM from integer samples already scaled to [0, maxval]."""
    if maxval not in (255, 65535):
        raise ImageFormatError(f"unsupported maxval {maxval}")
    samples = np.asarray(samples)
    if samples.ndim != 2:
        raise ImageFormatError("PGM samples must be a 2-D array")
    dtype = np.dtype(">u2") if maxval == 65535 else np.uint8
    h, w = samples.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(np.ascontiguousarray(samples, dtype=dtype).tobytes())


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    """Write a binary PPM (P6, 8-bit) from an (h, w, 3) uint8 array."""
    rgb = np.asarray(rgb, dtype=np.uint8)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ImageFormatError(f"PPM data must be (h, w, 3), got {rgb.shape}")
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(np.ascontiguousarray(rgb).tobytes())


def load_image(path: str | os.PathLike) -> GrayImage:
    """Load a grayscale frame and normalize it to [0, 1].

    Binary PGM (8/16-bit) is always supported; .png is read through Pillow and
    must already be single-channel grayscale.
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        raw, maxval = _read_png(path)
    else:
        raw, maxval = read_pgm(path)
    return GrayImage.from_array(raw.astype(np.float64) / float(maxval))


def save_image(img: GrayImage, path: str | os.PathLike, bits: int = 8) -> None:
    """Save a frame as binary PGM (or PNG for .png paths) at 8 or 16 bits."""
    if bits not in (8, 16):
        raise ImageFormatError(f"bit depth must be 8 or 16, got {bits}")
    maxval = (1 << bits) - 1
    samples = np.rint(img.data * maxval).astype(np.uint16 if bits == 16 else np.uint8)
    if Path(path).suffix.lower() == ".png":
        _write_png(path, samples, bits)
    else:
        write_pgm(path, samples, maxval)


def _read_png(path) -> tuple[np.ndarray, int]:
    from PIL import Image

    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.uint8), 255
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im.convert("I"), dtype=np.int64)
            if arr.min() < 0 or arr.max() > 65535:
                raise ImageFormatError("PNG sample values exceed 16-bit range")
            return arr.astype(np.uint16), 65535
        raise ImageFormatError(
            f"PNG mode {im.mode!r} is not grayscale; convert before loading"
        )


def _write_png(path, samples: np.ndarray, bits: int) -> None:
    from PIL import Image

    mode = "I;16" if bits == 16 else "L"
    Image.fromarray(samples, mode=mode).save(path, format="PNG")
