"""Displacement estimation per interrogation window.

Two correlation backends produce the same correlation surface on their shared
shift domain: ``dcc`` evaluates the windowed cross-correlation sum directly in
the spatial domain, ``fft_correlate`` computes it through zero-padded FFTs.
Both subtract each window's mean and divide every shift bin by its overlap
pixel count, so a peak at (m, n) means frame B's pattern sits m pixels right
and n pixels down of frame A's.

Integer peaks are refined by two independent three-point Gaussian fits (one
per axis). Multipass evaluation warps the second frame with the previous
pass's field (linear window deformation) and accumulates predictor plus
residual.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .core import (
    MEASURED,
    DimensionError,
    GrayImage,
    GridSpec,
    ParameterError,
    VectorField,
    make_grid,
    sample_node_values,
)
from .postprocess import PostprocessConfig, global_threshold_validate, interpolate_holes, local_stddev_validate

METHODS = ("dcc", "fft")
DEFORM_MODES = ("none", "linear")


@dataclass(frozen=True)
class PassSpec:
    """Geometry and method of one interrogation pass."""

    window: int
    step: int
    method: str = "fft"
    deform: str = "linear"
    half_width: int | None = None

    def __post_init__(self):
        if self.window < 4:
            raise ParameterError(f"window must be >= 4, got {self.window}")
        if not 1 <= self.step <= self.window:
            raise ParameterError(f"step must lie in [1, window], got {self.step}")
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.deform not in DEFORM_MODES:
            raise ParameterError(f"deform must be one of {DEFORM_MODES}, got {self.deform!r}")
        if self.half_width is not None and not 1 <= self.half_width <= self.window // 2:
            raise ParameterError(
                f"half_width must lie in [1, window/2], got {self.half_width}"
            )

    @property
    def search_half_width(self) -> int:
        """Maximum shift searched during peak finding (window/3 by default)."""
        if self.half_width is not None:
            return self.half_width
        return max(1, self.window // 3)


@dataclass(frozen=True)
class CorrelationPlane:
    """Correlation values over integer shifts for one window pair.

    ``values[origin[0] + n, origin[1] + m]`` is the correlation at x-shift m,
    y-shift n. ``half_width`` bounds the shifts that peak search may visit;
    FFT planes extend beyond it, but the outer bins average too few pixels to
    be trusted.
    """

    values: np.ndarray
    origin: tuple[int, int]
    half_width: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise DimensionError(f"correlation plane must be a nonempty 2-D array")
        oy, ox = self.origin
        if not (0 <= oy < values.shape[0] and 0 <= ox < values.shape[1]):
            raise DimensionError(f"origin {self.origin} outside plane {values.shape}")
        if self.half_width < 0:
            raise ParameterError("half_width must be nonnegative")
        if not np.all(np.isfinite(values)):
            raise ValueError("correlation values must be finite")
        object.__setattr__(self, "values", values)

    def searched(self) -> np.ndarray:
        """The sub-plane of shifts eligible for peak search."""
        oy, ox = self.origin
        h = self.half_width
        y0, y1 = max(0, oy - h), min(self.values.shape[0], oy + h + 1)
        x0, x1 = max(0, ox - h), min(self.values.shape[1], ox + h + 1)
        return self.values[y0:y1, x0:x1]


class PeakResult(NamedTuple):
    ix: int
    iy: int
    value: float
    peak_ratio: float
    degenerate: bool


@dataclass(frozen=True)
class Displacement:
    """Sub-pixel displacement for one window pair, in pixels."""

    dx: float
    dy: float
    peak_value: float
    peak_ratio: float
    degenerate: bool = False


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"window shapes differ: {a.shape} vs {b.shape}")
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"windows must be square 2-D arrays, got {a.shape}")
    return a, b, a.shape[0]


def _dcc_batch(a: np.ndarray, b: np.ndarray, half_width: int) -> np.ndarray:
    """Direct correlation for a stack of window pairs, shape (k, w, w)."""
    w = a.shape[-1]
    a = a - a.mean(axis=(-2, -1), keepdims=True)
    b = b - b.mean(axis=(-2, -1), keepdims=True)
    size = 2 * half_width + 1
    planes = np.empty(a.shape[:-2] + (size, size))
    for n in range(-half_width, half_width + 1):
        ia0, ia1 = max(0, -n), w - max(0, n)
        for m in range(-half_width, half_width + 1):
            ja0, ja1 = max(0, -m), w - max(0, m)
            overlap = (ia1 - ia0) * (ja1 - ja0)
            prod = a[..., ia0:ia1, ja0:ja1] * b[..., ia0 + n : ia1 + n, ja0 + m : ja1 + m]
            planes[..., n + half_width, m + half_width] = prod.sum(axis=(-2, -1)) / overlap
    return planes


def dcc(a: np.ndarray, b: np.ndarray, half_width: int) -> CorrelationPlane:
    """Spatial-domain cross-correlation over shifts in [-half_width, +half_width]^2.

    For each shift the product sum runs over the overlapping samples only and
    is divided by the overlap pixel count, which removes the systematic bias
    toward zero shift that the shrinking overlap would otherwise cause.
    """
    a, b, w = _check_pair(a, b)
    if not 1 <= half_width <= w // 2:
        raise ParameterError(f"half_width must lie in [1, {w // 2}] for window {w}")
    values = _dcc_batch(a[None], b[None], half_width)[0]
    return CorrelationPlane(values=values, origin=(half_width, half_width), half_width=half_width)


def _pad_size(side: int) -> int:
    return 1 << (2 * side - 1).bit_length()


def _fft_batch(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """FFT correlation for a stack of window pairs; returns (k, 2w, 2w) planes."""
    w = a.shape[-1]
    a = a - a.mean(axis=(-2, -1), keepdims=True)
    b = b - b.mean(axis=(-2, -1), keepdims=True)
    size = _pad_size(w)
    fa = np.fft.rfft2(a, s=(size, size))
    fb = np.fft.rfft2(b, s=(size, size))
    corr = np.fft.irfft2(np.conj(fa) * fb, s=(size, size))
    corr = np.fft.fftshift(corr, axes=(-2, -1))
    c = size // 2
    corr = corr[..., c - w : c + w, c - w : c + w]

    span = np.arange(-w, w)
    overlap = np.maximum(w - np.abs(span), 0)
    counts = overlap[:, None] * overlap[None, :]
    out = np.zeros_like(corr)
    np.divide(corr, counts, out=out, where=counts > 0)
    return out


def fft_correlate(a: np.ndarray, b: np.ndarray, pad: bool = True) -> CorrelationPlane:
    """Cross-correlation through the frequency domain.

    Both windows are mean-subtracted and zero-padded to a power of two at
    least twice their side, the spectra are multiplied with the first factor
    conjugated, and the inverse transform is reordered so zero shift sits at
    the plane origin. Bins are divided by their overlap pixel count, making
    the result identical to :func:`dcc` on the shared shift domain; bins with
    no overlap are zero. Peak search is limited to shifts within a quarter of
    the padded extent (``half_width = side // 2``).

    With ``pad=False`` the correlation is circular on the raw window, useful
    when the second window is a circular shift of the first.
    """
    a, b, w = _check_pair(a, b)
    if w < 2:
        raise DimensionError("window too small to correlate")
    if not pad:
        a0 = a - a.mean()
        b0 = b - b.mean()
        corr = np.fft.irfft2(np.conj(np.fft.rfft2(a0)) * np.fft.rfft2(b0), s=(w, w))
        values = np.fft.fftshift(corr) / (w * w)
        c = w // 2
        return CorrelationPlane(values=values, origin=(c, c), half_width=max(1, c - 1))
    values = _fft_batch(a[None], b[None])[0]
    return CorrelationPlane(values=values, origin=(w, w), half_width=w // 2)


def _second_peak(values: np.ndarray, row: int, col: int) -> float:
    """Highest value outside the 3x3 neighborhood of (row, col); -inf if none."""
    masked = values.copy()
    masked[max(0, row - 1) : row + 2, max(0, col - 1) : col + 2] = -np.inf
    second = masked.max()
    return float(second)


def _ratio(value: float, second: float) -> float:
    if not math.isfinite(second):
        return math.inf if value > 0 else math.nan
    if second <= 0.0:
        return math.inf if value > 0 else math.nan
    return value / second


def find_peak(plane: CorrelationPlane) -> PeakResult:
    """Locate the integer-shift correlation maximum within the searched range.

    Ties are broken toward the smallest shift magnitude, then row-major order.
    An all-equal plane carries no displacement information and comes back
    degenerate at shift (0, 0). The peak ratio compares the primary peak with
    the highest value outside its 3x3 neighborhood.
    """
    sub = plane.searched()
    oy, ox = plane.origin
    h = plane.half_width
    sy = oy - max(0, oy - h)
    sx = ox - max(0, ox - h)

    top = sub.max()
    if top == sub.min():
        return PeakResult(0, 0, float(top), math.nan, True)

    best = None
    for r, c in np.argwhere(sub == top):
        d2 = (r - sy) ** 2 + (c - sx) ** 2
        if best is None or d2 < best[0]:
            best = (d2, int(r), int(c))
    _, row, col = best
    second = _second_peak(sub, row, col)
    return PeakResult(col - sx, row - sy, float(top), _ratio(float(top), second), False)


def subpixel_gauss3(
    plane: CorrelationPlane, peak: tuple[int, int], peak_ratio: float | None = None
) -> Displacement:
    """Refine an integer peak with two independent 3-point Gaussian fits.

    Per axis, with samples c-, c0, c+ around the peak, the offset is
    ``(ln c- - ln c+) / (2 ln c- - 4 ln c0 + 2 ln c+)``, which recovers the
    center of an exactly Gaussian peak. If the 3x3 neighborhood contains
    nonpositive values it is lifted by ``1e-6 - min`` first. A border peak,
    nonpositive peak value, vanishing denominator, or an offset of a full
    pixel falls back to the integer peak with the degenerate flag set.
    """
    ix, iy = int(peak[0]), int(peak[1])
    oy, ox = plane.origin
    row, col = oy + iy, ox + ix
    ny, nx = plane.values.shape
    if not (0 <= row < ny and 0 <= col < nx):
        raise ParameterError(f"peak {peak} outside the correlation plane")
    value = float(plane.values[row, col])
    if peak_ratio is None:
        peak_ratio = _ratio(value, _second_peak(plane.values, row, col))

    def fallback() -> Displacement:
        return Displacement(float(ix), float(iy), value, peak_ratio, degenerate=True)

    if row <= 0 or row >= ny - 1 or col <= 0 or col >= nx - 1:
        return fallback()
    if value <= 0.0:
        return fallback()

    hood = plane.values[row - 1 : row + 2, col - 1 : col + 2]
    lowest = hood.min()
    if lowest <= 0.0:
        hood = hood + (1e-6 - lowest)

    offsets = []
    for cm, c0, cp in ((hood[1, 0], hood[1, 1], hood[1, 2]), (hood[0, 1], hood[1, 1], hood[2, 1])):
        lm, l0, lp = math.log(cm), math.log(c0), math.log(cp)
        denom = 2.0 * lm - 4.0 * l0 + 2.0 * lp
        if denom == 0.0:
            return fallback()
        delta = (lm - lp) / denom
        if not abs(delta) < 1.0:
            return fallback()
        offsets.append(delta)

    return Displacement(ix + offsets[0], iy + offsets[1], value, peak_ratio, degenerate=False)


def _field_at_pixels(field: VectorField, xq: np.ndarray, yq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    u = sample_node_values(field.grid, field.u, xq, yq)
    v = sample_node_values(field.grid, field.v, xq, yq)
    return u, v


def _bilinear_image(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample an image at real coordinates; outside samples replicate the edge."""
    h, w = data.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = xs.astype(np.int64)
    y0 = ys.astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    return (
        (1 - fy) * (1 - fx) * data[y0, x0]
        + (1 - fy) * fx * data[y0, x1]
        + fy * (1 - fx) * data[y1, x0]
        + fy * fx * data[y1, x1]
    )


def deform_window(img: GrayImage, field: VectorField) -> GrayImage:
    """Warp the second frame so the predictor displacement is cancelled.

    The node displacements are interpolated bilinearly to every pixel (edge
    nodes extend outward), and the frame is resampled at ``x + d(x)`` with
    bilinear interpolation and edge replication. Correlating the first frame
    against the result measures only the residual displacement, which the
    multipass loop adds back onto the predictor.
    """
    h, w = img.height, img.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u, v = _field_at_pixels(field, xx, yy)
    warped = _bilinear_image(img.data, xx + u, yy + v)
    return GrayImage.from_array(warped)


def resample_field(field: VectorField, grid: GridSpec) -> VectorField:
    """Interpolate a field's displacements onto another grid's node centers.

    Bilinear between node centers; query points beyond the outermost centers
    clamp to them. All resampled nodes are marked measured.
    """
    xq, yq = np.meshgrid(grid.x_centers, grid.y_centers)
    u, v = _field_at_pixels(field, xq, yq)
    return VectorField(grid=grid, u=u, v=v)


def _extract_row(data: np.ndarray, oy: int, x_origins: np.ndarray, w: int) -> np.ndarray:
    return sliding_window_view(data, (w, w))[oy, x_origins]


def _correlate_row(a_row: np.ndarray, b_row: np.ndarray, spec: PassSpec) -> tuple[np.ndarray, tuple[int, int], int]:
    if spec.method == "dcc":
        h = spec.search_half_width
        return _dcc_batch(a_row, b_row, h), (h, h), h
    # Same default search radius as dcc: beyond window/3 the overlap shrinks
    # enough that overlap-normalized bins turn noisy.
    w = a_row.shape[-1]
    return _fft_batch(a_row, b_row), (w, w), spec.search_half_width


def single_pass(a: GrayImage, b: GrayImage, spec: PassSpec, threads: int = 1) -> VectorField:
    """Correlate every interrogation window of a frame pair once.

    Each grid node gets the sub-pixel displacement of its window; nodes whose
    correlation plane is degenerate keep the integer peak (or zero). All nodes
    come back in the measured state; outlier screening happens downstream.
    """
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionError(
            f"frame sizes differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    grid = make_grid(a.width, a.height, spec.window, spec.step)
    w = spec.window
    x_origins = np.arange(grid.nx) * spec.step
    u = np.zeros(grid.shape)
    v = np.zeros(grid.shape)

    def process_row(j: int) -> None:
        oy = j * spec.step
        a_row = _extract_row(a.data, oy, x_origins, w)
        b_row = _extract_row(b.data, oy, x_origins, w)
        planes, origin, half_width = _correlate_row(a_row, b_row, spec)
        for i in range(grid.nx):
            plane = CorrelationPlane(values=planes[i], origin=origin, half_width=half_width)
            pk = find_peak(plane)
            if pk.degenerate:
                continue
            disp = subpixel_gauss3(plane, (pk.ix, pk.iy), pk.peak_ratio)
            u[j, i] = disp.dx
            v[j, i] = disp.dy

    rows = range(grid.ny)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(process_row, rows))
    else:
        for j in rows:
            process_row(j)
    return VectorField(grid=grid, u=u, v=v)


def _validate_between_passes(field: VectorField, post: PostprocessConfig) -> VectorField:
    out = global_threshold_validate(field, post.n_global, post.eps)
    out = local_stddev_validate(out, post.local_radius, post.n_local, post.eps)
    return interpolate_holes(out)


def multipass(
    a: GrayImage,
    b: GrayImage,
    passes: list[PassSpec],
    post: PostprocessConfig,
    threads: int = 1,
) -> VectorField:
    """Iterative interrogation with grid refinement and window deformation.

    The first pass measures plainly. Before each later pass, the previous
    field is validated and hole-filled, interpolated onto the finer grid as a
    predictor, and (for deform="linear") used to warp frame B; the pass then
    measures the residual and the predictor is added back. Window sizes must
    be non-increasing. The final pass's field is returned unvalidated.
    """
    if not passes:
        raise ParameterError("multipass needs at least one pass")
    windows = [p.window for p in passes]
    if any(wa < wb for wa, wb in zip(windows, windows[1:])):
        raise ParameterError(f"pass windows must be non-increasing, got {windows}")

    field = single_pass(a, b, passes[0], threads=threads)
    for spec in passes[1:]:
        previous = _validate_between_passes(field, post)
        grid = make_grid(a.width, a.height, spec.window, spec.step)
        predictor = resample_field(previous, grid)
        if spec.deform == "linear":
            b_work = deform_window(b, predictor)
            residual = single_pass(a, b_work, spec, threads=threads)
            field = VectorField(grid=grid, u=predictor.u + residual.u, v=predictor.v + residual.v)
        else:
            field = single_pass(a, b, spec, threads=threads)
    return field
