"""Derived flow quantities: magnitude, vorticity, divergence, shear, probes.

Spatial derivatives use second-order central differences on the node grid
with second-order one-sided stencils at the borders, so any field affine in
x and y differentiates exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    DimensionError,
    GridSpec,
    ParameterError,
    ScalarField,
    VectorField,
    sample_node_values,
)


@dataclass(frozen=True)
class TracerSpec:
    """Physical properties of a seeding particle and its carrier fluid (SI units)."""

    d_p: float
    rho_p: float
    rho: float
    mu: float
    a: float = 9.81

    def __post_init__(self):
        if not self.d_p > 0:
            raise ParameterError(f"particle diameter must be positive, got {self.d_p}")
        if not self.mu > 0:
            raise ParameterError(f"viscosity must be positive, got {self.mu}")
        if not (self.rho_p > 0 and self.rho > 0):
            raise ParameterError("densities must be positive")


@dataclass(frozen=True)
class LineProbe:
    """A sampling segment in pixel coordinates with equidistant sample points."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    samples: int = 64

    def __post_init__(self):
        if self.samples < 2:
            raise ParameterError(f"a line probe needs >= 2 samples, got {self.samples}")


def _gradients(values: np.ndarray, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """(d/dy, d/dx) of a node array; second order everywhere."""
    dy, dx = np.gradient(values, spacing, edge_order=2)
    return dy, dx


def _require_stencil(field: VectorField, spacing: float) -> None:
    if field.grid.nx < 3 or field.grid.ny < 3:
        raise DimensionError(
            f"derivatives need a grid of at least 3x3 nodes, got {field.grid.nx}x{field.grid.ny}"
        )
    if not spacing > 0:
        raise ParameterError(f"node spacing must be positive, got {spacing}")


def velocity_magnitude(field: VectorField) -> ScalarField:
    """Per-node speed sqrt(u^2 + v^2)."""
    return ScalarField(
        grid=field.grid, values=np.hypot(field.u, field.v), quantity="magnitude"
    )


def vorticity(field: VectorField, spacing: float) -> ScalarField:
    """Curl of the displacement field: dv/dx - du/dy.

    For rigid rotation this is twice the angular rate. ``spacing`` is the
    physical distance between adjacent nodes (grid step times any user scale).
    """
    _require_stencil(field, spacing)
    du_dy, _ = _gradients(field.u, spacing)
    _, dv_dx = _gradients(field.v, spacing)
    return ScalarField(grid=field.grid, values=dv_dx - du_dy, quantity="vorticity")


def divergence(field: VectorField, spacing: float) -> ScalarField:
    """du/dx + dv/dy on the node grid."""
    _require_stencil(field, spacing)
    _, du_dx = _gradients(field.u, spacing)
    dv_dy, _ = _gradients(field.v, spacing)
    return ScalarField(grid=field.grid, values=du_dx + dv_dy, quantity="divergence")


def shear_strain(field: VectorField, spacing: float) -> ScalarField:
    """du/dy + dv/dx on the node grid."""
    _require_stencil(field, spacing)
    du_dy, _ = _gradients(field.u, spacing)
    _, dv_dx = _gradients(field.v, spacing)
    return ScalarField(grid=field.grid, values=du_dy + dv_dx, quantity="shear")


def stokes_slip_velocity(t: TracerSpec) -> float:
    """Steady slip velocity of a tracer with a density mismatch, in m/s.

    ``d_p**2 * (rho_p - rho) / (18 * mu) * a``; the sign follows the density
    difference, so a neutrally buoyant tracer slips at exactly zero.
    """
    return t.d_p**2 * (t.rho_p - t.rho) / (18.0 * t.mu) * t.a


def _check_inside(grid: GridSpec, point: tuple[float, float]) -> None:
    x, y = point
    if not (grid.x_centers[0] <= x <= grid.x_centers[-1]):
        raise ParameterError(f"probe x={x} outside node extent "
                             f"[{grid.x_centers[0]}, {grid.x_centers[-1]}]")
    if not (grid.y_centers[0] <= y <= grid.y_centers[-1]):
        raise ParameterError(f"probe y={y} outside node extent "
                             f"[{grid.y_centers[0]}, {grid.y_centers[-1]}]")


def line_profile(s: ScalarField, probe: LineProbe) -> list[tuple[float, float]]:
    """Sample a scalar field along a segment.

    Returns (distance from p0 in pixels, bilinearly interpolated value) for
    ``probe.samples`` equidistant points including both endpoints.
    """
    _check_inside(s.grid, probe.p0)
    _check_inside(s.grid, probe.p1)
    t = np.linspace(0.0, 1.0, probe.samples)
    xs = probe.p0[0] + t * (probe.p1[0] - probe.p0[0])
    ys = probe.p0[1] + t * (probe.p1[1] - probe.p0[1])
    length = math.hypot(probe.p1[0] - probe.p0[0], probe.p1[1] - probe.p0[1])
    values = sample_node_values(s.grid, s.values, xs, ys)
    return [(float(d), float(val)) for d, val in zip(t * length, values)]


def area_mean_direction(
    field: VectorField, region: tuple[int, int, int, int]
) -> tuple[float, float]:
    """Mean flow direction and magnitude over a node-index rectangle.

    ``region`` is (x0, y0, x1, y1) in node indices, bounds inclusive. Returns
    (angle in degrees, magnitude of the mean vector); the angle lies in
    [0, 360) with 0 along +x and growth toward +y (downward in image axes).
    A zero mean vector has no direction and yields NaN for the angle.
    """
    x0, y0, x1, y1 = region
    if not (0 <= x0 <= x1 < field.grid.nx and 0 <= y0 <= y1 < field.grid.ny):
        raise ParameterError(f"region {region} outside grid {field.grid.nx}x{field.grid.ny}")
    mean_u = float(field.u[y0 : y1 + 1, x0 : x1 + 1].mean())
    mean_v = float(field.v[y0 : y1 + 1, x0 : x1 + 1].mean())
    magnitude = math.hypot(mean_u, mean_v)
    if magnitude == 0.0:
        return (math.nan, 0.0)
    angle = math.degrees(math.atan2(mean_v, mean_u)) % 360.0
    return (angle, magnitude)
