"""Frame enhancement before correlation: CLAHE, Gaussian high-pass, intensity capping.

The three operators run in that fixed order when chained through
:func:`apply_preprocess`. All of them preserve image dimensions and keep
intensities inside [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GrayImage, ParameterError


@dataclass(frozen=True)
class PreprocessConfig:
    clahe_enabled: bool = True
    clahe_tile: int = 32
    clahe_clip: float = 4.0
    clahe_bins: int = 256
    hpf_enabled: bool = False
    hpf_sigma: float = 3.0
    cap_enabled: bool = True
    cap_n: float = 2.0

    def __post_init__(self):
        if self.clahe_tile < 8:
            raise ParameterError(f"clahe_tile must be >= 8, got {self.clahe_tile}")
        if self.clahe_bins < 16:
            raise ParameterError(f"clahe_bins must be >= 16, got {self.clahe_bins}")
        if not self.clahe_clip > 1.0:
            raise ParameterError(f"clahe_clip must exceed 1, got {self.clahe_clip}")
        if not self.hpf_sigma > 0:
            raise ParameterError(f"hpf_sigma must be positive, got {self.hpf_sigma}")
        if not self.cap_n > 0:
            raise ParameterError(f"cap_n must be positive, got {self.cap_n}")


def _bin_index(values: np.ndarray, bins: int) -> np.ndarray:
    # Intensity 1.0 falls in the top bin rather than one past it.
    return np.minimum((values * bins).astype(np.int64), bins - 1)


def _tile_mapping(tile: np.ndarray, bins: int, clip: float) -> np.ndarray:
    """Equalization lookup for one tile: clipped histogram -> CDF over [0, 1]."""
    n = tile.size
    hist = np.bincount(_bin_index(tile.ravel(), bins), minlength=bins).astype(np.float64)
    if math.isfinite(clip):
        level = clip * n / bins
        excess = np.maximum(hist - level, 0.0).sum()
        hist = np.minimum(hist, level) + excess / bins
    return np.cumsum(hist) / n


def clahe(img: GrayImage, tile: int, clip: float, bins: int) -> GrayImage:
    """Contrast-limited adaptive histogram equalization.

    The frame is covered by square tiles of side ``tile`` (edge-replicated out
    to a whole number of tiles). Each tile's histogram is clipped at
    ``clip * tile**2 / bins`` with the excess redistributed uniformly in a
    single pass, and per-tile equalization mappings are blended bilinearly
    between tile centers; blending clamps at the frame border so edge and
    corner pixels fall back to their nearest tiles.
    """
    if tile < 1 or tile > min(img.width, img.height):
        raise ParameterError(
            f"tile {tile} must lie in [1, {min(img.width, img.height)}] for this image"
        )
    if bins < 1:
        raise ParameterError(f"bins must be positive, got {bins}")

    h, w = img.height, img.width
    nty = -(-h // tile)
    ntx = -(-w // tile)
    padded = np.pad(img.data, ((0, nty * tile - h), (0, ntx * tile - w)), mode="edge")

    luts = np.empty((nty, ntx, bins))
    for ty in range(nty):
        for tx in range(ntx):
            block = padded[ty * tile : (ty + 1) * tile, tx * tile : (tx + 1) * tile]
            luts[ty, tx] = _tile_mapping(block, bins, clip)

    yy, xx = np.mgrid[0:h, 0:w]
    gy = np.clip(yy / tile - 0.5, 0.0, nty - 1.0)
    gx = np.clip(xx / tile - 0.5, 0.0, ntx - 1.0)
    ty0 = gy.astype(np.int64)
    tx0 = gx.astype(np.int64)
    ty1 = np.minimum(ty0 + 1, nty - 1)
    tx1 = np.minimum(tx0 + 1, ntx - 1)
    fy = gy - ty0
    fx = gx - tx0

    b = _bin_index(img.data, bins)
    out = (
        (1 - fy) * (1 - fx) * luts[ty0, tx0, b]
        + (1 - fy) * fx * luts[ty0, tx1, b]
        + fy * (1 - fx) * luts[ty1, tx0, b]
        + fy * fx * luts[ty1, tx1, b]
    )
    return GrayImage.from_array(out)


def gaussian_lowpass(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel truncated at radius ceil(3*sigma).

    The 1-D kernel is normalized to unit sum and borders are handled by edge
    replication, so a constant array passes through unchanged.
    """
    if not sigma > 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(x * x) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()

    padded = np.pad(data, ((radius, radius), (0, 0)), mode="edge")
    rows = np.zeros_like(data, dtype=np.float64)
    for k, weight in enumerate(kernel):
        rows += weight * padded[k : k + data.shape[0], :]
    padded = np.pad(rows, ((0, 0), (radius, radius)), mode="edge")
    out = np.zeros_like(data, dtype=np.float64)
    for k, weight in enumerate(kernel):
        out += weight * padded[:, k : k + data.shape[1]]
    return out


def highpass(img: GrayImage, sigma: float) -> GrayImage:
    """Remove slow illumination variation: subtract a Gaussian low-pass.

    The residual is brought back to [0, 1] by min-max normalization; a
    residual with no spread (e.g. from a constant frame) maps to all zeros.
    """
    residual = img.data - gaussian_lowpass(img.data, sigma)
    lo = residual.min()
    hi = residual.max()
    if hi - lo <= 0.0:
        return GrayImage.from_array(np.zeros_like(residual))
    return GrayImage.from_array((residual - lo) / (hi - lo))


def intensity_cap(img: GrayImage, n: float) -> GrayImage:
    """Clamp bright outliers: pixels above mean + n * stddev are set to that cap.

    Uses the population standard deviation over all pixels. Pixels at or below
    the cap pass through untouched, so the result is pixelwise <= the input.
    """
    if not n > 0:
        raise ParameterError(f"cap multiplier must be positive, got {n}")
    mu = img.data.mean()
    cap = mu + n * img.data.std()
    return GrayImage.from_array(np.minimum(img.data, cap))


def apply_preprocess(img: GrayImage, cfg: PreprocessConfig) -> GrayImage:
    """Run the enabled enhancement steps in order: CLAHE, high-pass, capping."""
    out = img
    if cfg.clahe_enabled:
        out = clahe(out, cfg.clahe_tile, cfg.clahe_clip, cfg.clahe_bins)
    if cfg.hpf_enabled:
        out = highpass(out, cfg.hpf_sigma)
    if cfg.cap_enabled:
        out = intensity_cap(out, cfg.cap_n)
    return out
