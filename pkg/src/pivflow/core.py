"""Shared data model: grayscale frames, interrogation grids, vector and scalar fields.

All containers are frozen dataclasses holding read-only float64 arrays, so they
can be shared freely between worker threads. Operations elsewhere in the
package never mutate a field in place; they build a new one.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

# Per-node validity states of a VectorField.
MEASURED = 0
FLAGGED = 1
INTERPOLATED = 2

STATUS_NAMES = {MEASURED: "measured", FLAGGED: "flagged", INTERPOLATED: "interpolated"}
STATUS_CODES = {name: code for code, name in STATUS_NAMES.items()}

Quantity = Literal["vorticity", "magnitude", "divergence", "shear"]
QUANTITIES = ("vorticity", "magnitude", "divergence", "shear")


class DimensionError(ValueError):
    """Geometry is incompatible, e.g. an interrogation window larger than the frame."""


class ParameterError(ValueError):
    """A parameter violates its documented range."""


def _frozen_f64(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """A grayscale frame with intensities normalized to [0, 1].

    ``data`` is a read-only (height, width) float64 array in row-major order;
    ``data[y, x]`` is the intensity at column x of row y.
    """

    width: int
    height: int
    data: np.ndarray

    def __post_init__(self):
        data = _frozen_f64(self.data)
        if data.shape != (self.height, self.width):
            raise DimensionError(
                f"image data shape {data.shape} does not match "
                f"(height={self.height}, width={self.width})"
            )
        if self.width < 1 or self.height < 1:
            raise DimensionError("image must have at least one pixel")
        if not np.all(np.isfinite(data)):
            raise ValueError("image intensities must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data: np.ndarray) -> "GrayImage":
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"expected a 2-D array, got shape {data.shape}")
        return cls(width=data.shape[1], height=data.shape[0], data=data)


@dataclass(frozen=True)
class GridSpec:
    """Tiling of a frame into square interrogation windows.

    Window origins sit at multiples of ``step`` starting from pixel (0, 0);
    node k along an axis is centered at ``k * step + window / 2``. Windows that
    would poke past the frame are dropped, never padded.
    """

    window: int
    step: int
    nx: int
    ny: int

    def __post_init__(self):
        if self.window < 4:
            raise ParameterError(f"window must be >= 4 pixels, got {self.window}")
        if self.step < 1:
            raise ParameterError(f"step must be >= 1 pixel, got {self.step}")
        if self.step > self.window:
            raise ParameterError(
                f"step {self.step} exceeds window {self.window}; windows may not leave gaps"
            )
        if self.nx < 1 or self.ny < 1:
            raise DimensionError(f"grid must have at least one node, got {self.nx}x{self.ny}")

    @property
    def shape(self) -> tuple[int, int]:
        """(ny, nx), the shape of per-node arrays."""
        return (self.ny, self.nx)

    @property
    def n_nodes(self) -> int:
        return self.nx * self.ny

    @property
    def x_centers(self) -> np.ndarray:
        """Pixel x coordinate of each node center, length nx."""
        return self.window / 2.0 + self.step * np.arange(self.nx, dtype=np.float64)

    @property
    def y_centers(self) -> np.ndarray:
        """Pixel y coordinate of each node center, length ny."""
        return self.window / 2.0 + self.step * np.arange(self.ny, dtype=np.float64)


def make_grid(width: int, height: int, window: int, step: int) -> GridSpec:
    """Build the interrogation grid for a width x height frame.

    Node counts follow ``floor((extent - window) / step) + 1`` per axis, so the
    last window on each axis ends at or before the frame edge.
    """
    if window < 4:
        raise ParameterError(f"window must be >= 4 pixels, got {window}")
    if step < 1:
        raise ParameterError(f"step must be >= 1 pixel, got {step}")
    if step > window:
        raise ParameterError(f"step {step} exceeds window {window}")
    if window > min(width, height):
        raise DimensionError(
            f"window {window} exceeds image dimensions {width}x{height}"
        )
    nx = (width - window) // step + 1
    ny = (height - window) // step + 1
    return GridSpec(window=window, step=step, nx=nx, ny=ny)


@dataclass(frozen=True)
class VectorField:
    """Per-node displacement (u, v) in pixels per frame interval, plus validity.

    ``u`` is the x (column) component, ``v`` the y (row) component, both shaped
    (ny, nx). ``status`` holds one of MEASURED, FLAGGED, INTERPOLATED per node.
    """

    grid: GridSpec
    u: np.ndarray
    v: np.ndarray
    status: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        u = _frozen_f64(self.u)
        v = _frozen_f64(self.v)
        status = self.status
        if status is None:
            status = np.full(self.grid.shape, MEASURED, dtype=np.uint8)
        status = np.array(status, dtype=np.uint8, copy=True)
        status.setflags(write=False)
        for name, arr in (("u", u), ("v", v), ("status", status)):
            if arr.shape != self.grid.shape:
                raise DimensionError(
                    f"{name} shape {arr.shape} does not match grid {self.grid.shape}"
                )
        if not np.all(np.isfinite(u)) or not np.all(np.isfinite(v)):
            raise ValueError("displacements must be finite")
        if not np.all(np.isin(status, (MEASURED, FLAGGED, INTERPOLATED))):
            raise ValueError("unknown node status code")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "status", status)

    def with_values(self, u=None, v=None, status=None) -> "VectorField":
        """Copy of this field with some arrays replaced."""
        return replace(
            self,
            u=self.u if u is None else u,
            v=self.v if v is None else v,
            status=self.status if status is None else status,
        )

    def count(self, code: int) -> int:
        return int(np.count_nonzero(self.status == code))

    @classmethod
    def zeros(cls, grid: GridSpec) -> "VectorField":
        z = np.zeros(grid.shape)
        return cls(grid=grid, u=z, v=z.copy())


def sample_node_values(grid: GridSpec, values: np.ndarray, x, y) -> np.ndarray:
    """Bilinearly sample per-node values at pixel coordinates (x, y).

    Queries beyond the outermost node centers clamp to them, i.e. the field
    extends outward as a constant. Accepts scalar or array coordinates.
    """
    gx = np.clip((np.asarray(x, dtype=np.float64) - grid.window / 2.0) / grid.step, 0.0, grid.nx - 1.0)
    gy = np.clip((np.asarray(y, dtype=np.float64) - grid.window / 2.0) / grid.step, 0.0, grid.ny - 1.0)
    x0 = gx.astype(np.int64)
    y0 = gy.astype(np.int64)
    x1 = np.minimum(x0 + 1, grid.nx - 1)
    y1 = np.minimum(y0 + 1, grid.ny - 1)
    fx = gx - x0
    fy = gy - y0
    return (
        (1 - fy) * (1 - fx) * values[y0, x0]
        + (1 - fy) * fx * values[y0, x1]
        + fy * (1 - fx) * values[y1, x0]
        + fy * fx * values[y1, x1]
    )


@dataclass(frozen=True)
class ScalarField:
    """One derived scalar per grid node, tagged with the quantity it holds."""

    grid: GridSpec
    values: np.ndarray
    quantity: Quantity

    def __post_init__(self):
        values = _frozen_f64(self.values)
        if values.shape != self.grid.shape:
            raise DimensionError(
                f"values shape {values.shape} does not match grid {self.grid.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar field values must be finite")
        if self.quantity not in QUANTITIES:
            raise ParameterError(f"unknown quantity {self.quantity!r}")
        object.__setattr__(self, "values", values)
