"""Vector-field cleanup: outlier screening, hole filling, median smoothing.

Screening only changes node status, never displacement values; filling and
smoothing are the phases that write new values. The full chain runs global
sigma thresholding, the local standard-deviation filter, Laplace hole
interpolation, and optionally a median smoother, in that order.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import FLAGGED, INTERPOLATED, MEASURED, ParameterError, VectorField


@dataclass(frozen=True)
class PostprocessConfig:
    n_global: float = 3.0
    local_radius: int = 1
    n_local: float = 2.0
    median_radius: int = 1
    smoothing_enabled: bool = True
    # Absolute tolerance in pixels added to the sigma bands. Without it a
    # perfectly good field gets its sub-resolution jitter flagged, because
    # sigma-multiplier tests are scale-free.
    eps: float = 0.1

    def __post_init__(self):
        if not self.n_global > 0:
            raise ParameterError(f"n_global must be positive, got {self.n_global}")
        if not self.n_local > 0:
            raise ParameterError(f"n_local must be positive, got {self.n_local}")
        if self.local_radius < 1 or self.median_radius < 1:
            raise ParameterError("neighborhood radii must be >= 1")
        if self.eps < 0:
            raise ParameterError(f"eps must be nonnegative, got {self.eps}")


def global_threshold_validate(field: VectorField, n: float, eps: float = 0.0) -> VectorField:
    """Flag nodes whose u or v lies outside mean +/- n * stddev of the field.

    Mean and population standard deviation are taken over measured nodes,
    separately per component; a node is flagged when either component falls
    strictly outside its band, widened by the absolute tolerance ``eps``
    (pixels). Already flagged or interpolated nodes keep their state.
    """
    if not n > 0:
        raise ParameterError(f"threshold multiplier must be positive, got {n}")
    measured = field.status == MEASURED
    if not measured.any():
        warnings.warn("global threshold validation skipped: no measured nodes", stacklevel=2)
        return field

    status = field.status.copy()
    for comp in (field.u, field.v):
        mu = comp[measured].mean()
        sigma = comp[measured].std()
        guard = 1e-9 * np.abs(comp).max()  # fp slack for bitwise-constant fields
        outside = np.abs(comp - mu) > n * sigma + eps + guard
        status[measured & outside] = FLAGGED
    return field.with_values(status=status)


def _window_sums(arr: np.ndarray, radius: int) -> np.ndarray:
    """Sum of arr over a (2r+1)^2 window around each cell, truncated at borders."""
    ny, nx = arr.shape
    csum = np.zeros((ny + 1, nx + 1))
    csum[1:, 1:] = arr.cumsum(axis=0).cumsum(axis=1)
    y0 = np.clip(np.arange(ny) - radius, 0, ny)
    y1 = np.clip(np.arange(ny) + radius + 1, 0, ny)
    x0 = np.clip(np.arange(nx) - radius, 0, nx)
    x1 = np.clip(np.arange(nx) + radius + 1, 0, nx)
    return (
        csum[np.ix_(y1, x1)] - csum[np.ix_(y0, x1)] - csum[np.ix_(y1, x0)] + csum[np.ix_(y0, x0)]
    )


def local_stddev_validate(field: VectorField, radius: int, n: float, eps: float = 0.0) -> VectorField:
    """Flag nodes deviating from their neighborhood by more than n local sigmas.

    For every unflagged node, mean and population standard deviation are
    computed per component over the surrounding (2r+1)^2 nodes, excluding the
    node itself and any node flagged before this sweep. All decisions are made
    against that frozen state in a single sweep; ``eps`` widens the band by an
    absolute pixel tolerance. Nodes with an empty neighborhood are left alone,
    and the comparison is strict, so a constant field (sigma 0, deviation 0)
    flags nothing.
    """
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    if not n > 0:
        raise ParameterError(f"threshold multiplier must be positive, got {n}")

    usable = (field.status != FLAGGED).astype(np.float64)
    status = field.status.copy()
    flag = np.zeros(field.grid.shape, dtype=bool)
    counts = _window_sums(usable, radius) - usable
    valid = counts >= 1

    for raw in (field.u, field.v):
        comp = raw - raw.mean()  # centering avoids E[x^2]-E[x]^2 cancellation
        # cumulative window sums round at ~1e-12 relative; without a guard a
        # bitwise-constant neighborhood can compare 1e-16 > 0 and flag.
        guard = 1e-9 * np.abs(comp).max()
        masked = comp * usable
        s1 = _window_sums(masked, radius) - masked
        s2 = _window_sums(masked * comp, radius) - masked * comp
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s1 / counts
            var = np.maximum(s2 / counts - mean * mean, 0.0)
            flag |= valid & (np.abs(comp - mean) > n * np.sqrt(var) + eps + guard)

    status[flag & (field.status != FLAGGED)] = FLAGGED
    return field.with_values(status=status)


def interpolate_holes(field: VectorField, tol: float = 1e-9, max_sweeps: int = 10_000) -> VectorField:
    """Fill flagged nodes by discrete Laplace interpolation.

    Each hole relaxes to the mean of its in-grid 4-neighbors (holes included,
    solved jointly) until the largest per-sweep update drops below ``tol`` or
    the sweep budget runs out. Filled nodes are marked interpolated. Linear
    fields are discrete-harmonic on this stencil, so holes in them are
    restored exactly.
    """
    holes = field.status == FLAGGED
    if not (field.status == MEASURED).any():
        warnings.warn("hole interpolation skipped: no measured nodes", stacklevel=2)
        return field
    if not holes.any():
        return field

    u = field.u.copy()
    v = field.v.copy()
    for comp in (u, v):
        seed = comp[~holes].mean()
        comp[holes] = seed
        _relax_holes(comp, holes, tol, max_sweeps)

    status = field.status.copy()
    status[holes] = INTERPOLATED
    return field.with_values(u=u, v=v, status=status)


def _relax_holes(values: np.ndarray, holes: np.ndarray, tol: float, max_sweeps: int) -> None:
    ny, nx = values.shape
    padded = np.pad(values, 1, mode="constant")
    weight = np.pad(np.ones_like(values), 1, mode="constant")
    wsum = (
        weight[:-2, 1:-1] + weight[2:, 1:-1] + weight[1:-1, :-2] + weight[1:-1, 2:]
    )
    hy, hx = np.nonzero(holes)
    for _ in range(max_sweeps):
        padded[1:-1, 1:-1] = values
        neighbor_sum = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        )
        new = neighbor_sum[hy, hx] / wsum[hy, hx]
        delta = np.abs(new - values[hy, hx]).max()
        values[hy, hx] = new
        if delta < tol:
            return


def median_smooth(field: VectorField, radius: int) -> VectorField:
    """Replace each component by the median of its (2r+1)^2 neighborhood.

    Neighborhoods truncate at the grid border; even-sized ones take the mean
    of the two middle order statistics. Node status is preserved.
    """
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    ny, nx = field.grid.shape
    u = np.empty_like(field.u)
    v = np.empty_like(field.v)
    for j in range(ny):
        y0, y1 = max(0, j - radius), min(ny, j + radius + 1)
        for i in range(nx):
            x0, x1 = max(0, i - radius), min(nx, i + radius + 1)
            u[j, i] = np.median(field.u[y0:y1, x0:x1])
            v[j, i] = np.median(field.v[y0:y1, x0:x1])
    return field.with_values(u=u, v=v)


def validate_pipeline(field: VectorField, cfg: PostprocessConfig) -> VectorField:
    """Full cleanup chain: global threshold, local filter, hole fill, smoothing."""
    if not (field.status == MEASURED).any():
        warnings.warn("validation skipped: field has no measured nodes", stacklevel=2)
        return field
    out = global_threshold_validate(field, cfg.n_global, cfg.eps)
    out = local_stddev_validate(out, cfg.local_radius, cfg.n_local, cfg.eps)
    out = interpolate_holes(out)
    if cfg.smoothing_enabled:
        out = median_smooth(out, cfg.median_radius)
    return out
