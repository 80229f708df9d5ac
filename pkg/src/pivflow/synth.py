"""Synthetic particle images with analytic ground-truth flows.

Frames are sums of Gaussian blobs at real-valued particle positions, advected
between frames by an analytic displacement function. Because the displacement
is known in closed form at every point, any grid can be given an exact
ground-truth field to score the correlation pipeline against.

Randomness comes from numpy's default generator (PCG64) seeded from
``SynthParams.seed``, so a parameter set fully determines both frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import GrayImage, GridSpec, ParameterError, VectorField

FLOW_KINDS = ("uniform", "rigid_rotation", "rankine", "shear")


@dataclass(frozen=True)
class FlowSpec:
    """An analytic displacement field d(x, y), one frame interval apart."""

    kind: str
    u: float = 0.0
    v: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0
    gamma: float = 0.0
    core_radius: float = 1.0
    rate: float = 0.0

    def __post_init__(self):
        if self.kind not in FLOW_KINDS:
            raise ParameterError(f"unknown flow kind {self.kind!r}; expected one of {FLOW_KINDS}")
        if self.kind == "rankine" and not self.core_radius > 0:
            raise ParameterError(f"core_radius must be positive, got {self.core_radius}")

    @classmethod
    def uniform(cls, u: float, v: float) -> "FlowSpec":
        return cls(kind="uniform", u=u, v=v)

    @classmethod
    def rigid_rotation(cls, center: tuple[float, float], omega: float) -> "FlowSpec":
        return cls(kind="rigid_rotation", center=center, omega=omega)

    @classmethod
    def rankine(cls, center: tuple[float, float], gamma: float, core_radius: float) -> "FlowSpec":
        return cls(kind="rankine", center=center, gamma=gamma, core_radius=core_radius)

    @classmethod
    def shear(cls, rate: float) -> "FlowSpec":
        return cls(kind="shear", rate=rate)

    def displacement(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Evaluate d(x, y); accepts scalars or arrays."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if self.kind == "uniform":
            return np.full_like(x, self.u), np.full_like(y, self.v)
        if self.kind == "shear":
            return self.rate * y, np.zeros_like(y)
        rx = x - self.center[0]
        ry = y - self.center[1]
        if self.kind == "rigid_rotation":
            # Exact rotation about the center, so radii are preserved.
            c, s = math.cos(self.omega), math.sin(self.omega)
            return (c - 1.0) * rx - s * ry, s * rx + (c - 1.0) * ry
        r = np.hypot(rx, ry)
        # Solid-body core, irrotational exterior; tangential speed is continuous
        # at the core radius.
        with np.errstate(invalid="ignore", divide="ignore"):
            v_theta = np.where(
                r <= self.core_radius,
                self.gamma * r / (2.0 * math.pi * self.core_radius**2),
                self.gamma / (2.0 * math.pi * np.maximum(r, 1e-300)),
            )
            tangent_x = np.where(r > 0, -ry / np.maximum(r, 1e-300), 0.0)
            tangent_y = np.where(r > 0, rx / np.maximum(r, 1e-300), 0.0)
        return v_theta * tangent_x, v_theta * tangent_y


@dataclass(frozen=True)
class SynthParams:
    width: int = 512
    height: int = 512
    particle_count: int = 2000
    particle_diameter: float = 3.0
    peak_intensity: float = 0.9
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ParameterError("image dimensions must be positive")
        if self.particle_count < 1:
            raise ParameterError(f"particle_count must be positive, got {self.particle_count}")
        if self.particle_diameter < 1:
            raise ParameterError(f"particle_diameter must be >= 1 px, got {self.particle_diameter}")
        if not 0.0 <= self.peak_intensity <= 1.0:
            raise ParameterError("peak_intensity must lie in [0, 1]")
        if not 0.0 <= self.noise_sigma <= 1.0:
            raise ParameterError("noise_sigma must lie in [0, 1]")


def render_particles(
    positions: np.ndarray, p: SynthParams, rng: np.random.Generator | None = None
) -> GrayImage:
    """Render particles as Gaussian blobs and clamp the sum to [0, 1].

    Each particle adds ``I * exp(-8 r^2 / d^2)`` around its real-valued
    position (d is the e^-2 intensity diameter). Blobs from nearby particles
    add up. When ``noise_sigma`` is nonzero, zero-mean Gaussian noise is drawn
    from ``rng`` (or a generator seeded with ``p.seed``).
    """
    canvas = np.zeros((p.height, p.width))
    d2 = p.particle_diameter**2
    # exp(-8 r^2 / d^2) < 4e-16 beyond this radius; omitted tails are invisible
    # even against 1e-9 tolerances.
    reach = int(math.ceil(2.1 * p.particle_diameter))
    for x, y in np.asarray(positions, dtype=np.float64).reshape(-1, 2):
        x0 = max(0, int(math.floor(x)) - reach)
        x1 = min(p.width, int(math.floor(x)) + reach + 2)
        y0 = max(0, int(math.floor(y)) - reach)
        y1 = min(p.height, int(math.floor(y)) + reach + 2)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        r2 = (xx - x) ** 2 + (yy - y) ** 2
        canvas[y0:y1, x0:x1] += p.peak_intensity * np.exp(-8.0 * r2 / d2)
    if p.noise_sigma > 0:
        if rng is None:
            rng = np.random.default_rng(p.seed)
        canvas += rng.normal(0.0, p.noise_sigma, size=canvas.shape)
    return GrayImage.from_array(np.clip(canvas, 0.0, 1.0))


def advect(positions: np.ndarray, flow: FlowSpec) -> np.ndarray:
    """Move each (x, y) position by the flow's displacement at that position."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    dx, dy = flow.displacement(positions[:, 0], positions[:, 1])
    return positions + np.column_stack([dx, dy])


def ground_truth(flow: FlowSpec, grid: GridSpec) -> VectorField:
    """The analytic displacement sampled at a grid's node centers."""
    xq, yq = np.meshgrid(grid.x_centers, grid.y_centers)
    u, v = flow.displacement(xq, yq)
    return VectorField(grid=grid, u=u, v=v)


def gen_pair(
    flow: FlowSpec, p: SynthParams, grid: GridSpec | None = None
) -> tuple[GrayImage, GrayImage, VectorField | None]:
    """Generate a frame pair and, if a grid is given, its ground-truth field.

    Frame A renders particles drawn uniformly over the image; frame B renders
    the advected positions. Particles that leave the frame are simply lost,
    which is a real error source the validator has to cope with. The whole
    pair is reproducible from (flow, params).
    """
    rng = np.random.default_rng(p.seed)
    starts = np.column_stack(
        [rng.uniform(0.0, p.width, p.particle_count), rng.uniform(0.0, p.height, p.particle_count)]
    )
    ends = advect(starts, flow)
    frame_a = render_particles(starts, p, rng)
    frame_b = render_particles(ends, p, rng)
    truth = ground_truth(flow, grid) if grid is not None else None
    return frame_a, frame_b, truth
