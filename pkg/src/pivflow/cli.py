"""Command-line pipeline runner and output writers.

Subcommands:

* ``analyze`` runs preprocess -> multipass correlation -> validation -> derived
  fields on a frame pair and writes CSVs, colormapped PPMs, and a JSON report.
* ``synth`` generates a synthetic frame pair with ground truth.
* ``derive`` recomputes scalar fields from an exported vector CSV.
* ``render`` colormaps a scalar CSV into a PPM/PNG image.

Exit codes are stable: 0 success, 1 configuration error, 2 I/O error,
3 numeric failure. Every output file is written under a ``.partial`` name and
renamed on completion, so an interrupted run never leaves a file that looks
finished.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, load_config
from .core import (
    INTERPOLATED,
    MEASURED,
    STATUS_CODES,
    STATUS_NAMES,
    DimensionError,
    GridSpec,
    ParameterError,
    ScalarField,
    VectorField,
    make_grid,
)
from .correlate import PassSpec, multipass
from .derive import divergence, shear_strain, velocity_magnitude, vorticity
from .imageio import ImageFormatError, load_image, save_image, write_ppm
from .postprocess import validate_pipeline
from .preprocess import apply_preprocess
from .synth import FlowSpec, SynthParams, gen_pair

THREADS_ENV = "PIVFLOW_THREADS"

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


@dataclass(frozen=True)
class ColorScale:
    """Piecewise-linear value-to-RGB mapping; out-of-range values clamp."""

    breakpoints: tuple[tuple[float, tuple[int, int, int]], ...]

    def __post_init__(self):
        if len(self.breakpoints) < 2:
            raise ParameterError("a color scale needs at least two breakpoints")
        values = [bp[0] for bp in self.breakpoints]
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ParameterError(f"breakpoint values must be strictly increasing: {values}")
        for _, rgb in self.breakpoints:
            if len(rgb) != 3 or any(not 0 <= c <= 255 for c in rgb):
                raise ParameterError(f"bad RGB triple {rgb}")

    def map(self, values: np.ndarray) -> np.ndarray:
        """Map an array of scalars to (..., 3) uint8 colors."""
        xs = np.array([bp[0] for bp in self.breakpoints])
        out = np.empty(values.shape + (3,), dtype=np.uint8)
        for ch in range(3):
            fs = np.array([bp[1][ch] for bp in self.breakpoints], dtype=np.float64)
            # np.interp clamps to the end colors outside the breakpoint range.
            out[..., ch] = np.floor(np.interp(values, xs, fs) + 0.5).astype(np.uint8)
        return out


# Vorticity anchors: dark blue at no spin through red at the strongest spin.
VORTICITY_SCALE = ColorScale(
    breakpoints=(
        (0.00, (0, 0, 128)),
        (0.10, (0, 128, 255)),
        (0.20, (0, 255, 0)),
        (0.30, (255, 255, 0)),
        (0.40, (255, 0, 0)),
    )
)


@dataclass
class RunReport:
    """Machine-readable summary of one analyze run."""

    nx: int = 0
    ny: int = 0
    nodes: int = 0
    measured: int = 0
    flagged: int = 0
    interpolated: int = 0
    mean_u: float = 0.0
    mean_v: float = 0.0
    timings: dict = dataclass_field(default_factory=dict)
    outputs: list = dataclass_field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


class StageError(Exception):
    """Wraps a failure with the pipeline stage it happened in."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


def _replace_into_place(partial: Path, final: Path) -> None:
    os.replace(partial, final)


def _write_text_atomic(path: Path, text: str) -> None:
    partial = path.with_name(path.name + ".partial")
    with open(partial, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    _replace_into_place(partial, path)


def export_vectors(field: VectorField, out: str | os.PathLike) -> None:
    """Write a vector field as CSV: header x,y,u,v,status, one row per node.

    Rows are in row-major node order; x and y are node-center pixel
    coordinates and floats carry 9 significant digits. The field must not
    contain flagged nodes (run hole interpolation first).
    """
    if np.any((field.status != MEASURED) & (field.status != INTERPOLATED)):
        raise ValueError("cannot export a field with flagged nodes; interpolate holes first")
    xs = field.grid.x_centers
    ys = field.grid.y_centers
    lines = ["x,y,u,v,status"]
    for j in range(field.grid.ny):
        for i in range(field.grid.nx):
            lines.append(
                f"{xs[i]:.9g},{ys[j]:.9g},{field.u[j, i]:.9g},{field.v[j, i]:.9g},"
                f"{STATUS_NAMES[int(field.status[j, i])]}"
            )
    _write_text_atomic(Path(out), "\n".join(lines) + "\n")


def _grid_from_centers(xs: np.ndarray, ys: np.ndarray) -> GridSpec:
    window = int(round(2 * xs[0]))
    step_candidates = np.diff(xs) if len(xs) > 1 else np.diff(ys)
    step = int(round(step_candidates[0])) if len(step_candidates) else window
    return GridSpec(window=window, step=max(1, step), nx=len(xs), ny=len(ys))


def import_vectors(path: str | os.PathLike) -> VectorField:
    """Read back a CSV produced by :func:`export_vectors`."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["x", "y", "u", "v", "status"]:
            raise ImageFormatError(f"not a vector CSV: header {header}")
        rows = [(float(x), float(y), float(u), float(v), s) for x, y, u, v, s in reader]
    if not rows:
        raise ImageFormatError("vector CSV has no rows")
    xs = sorted({r[0] for r in rows})
    ys = sorted({r[1] for r in rows})
    grid = _grid_from_centers(np.array(xs), np.array(ys))
    if grid.n_nodes != len(rows):
        raise ImageFormatError(
            f"vector CSV is not a full grid: {len(rows)} rows for {grid.nx}x{grid.ny} nodes"
        )
    xi = {x: i for i, x in enumerate(xs)}
    yi = {y: j for j, y in enumerate(ys)}
    u = np.zeros(grid.shape)
    v = np.zeros(grid.shape)
    status = np.zeros(grid.shape, dtype=np.uint8)
    for x, y, uu, vv, s in rows:
        j, i = yi[y], xi[x]
        u[j, i] = uu
        v[j, i] = vv
        if s not in STATUS_CODES:
            raise ImageFormatError(f"unknown node status {s!r}")
        status[j, i] = STATUS_CODES[s]
    return VectorField(grid=grid, u=u, v=v, status=status)


def export_scalar(s: ScalarField, out: str | os.PathLike) -> None:
    """Write a scalar field as CSV with header x,y,<quantity>."""
    xs = s.grid.x_centers
    ys = s.grid.y_centers
    lines = [f"x,y,{s.quantity}"]
    for j in range(s.grid.ny):
        for i in range(s.grid.nx):
            lines.append(f"{xs[i]:.9g},{ys[j]:.9g},{s.values[j, i]:.9g}")
    _write_text_atomic(Path(out), "\n".join(lines) + "\n")


def import_scalar(path: str | os.PathLike) -> ScalarField:
    """Read back a CSV produced by :func:`export_scalar`."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["x", "y"] or len(header) != 3:
            raise ImageFormatError(f"not a scalar CSV: header {header}")
        quantity = header[2]
        rows = [(float(x), float(y), float(val)) for x, y, val in reader]
    if not rows:
        raise ImageFormatError("scalar CSV has no rows")
    xs = sorted({r[0] for r in rows})
    ys = sorted({r[1] for r in rows})
    grid = _grid_from_centers(np.array(xs), np.array(ys))
    xi = {x: i for i, x in enumerate(xs)}
    yi = {y: j for j, y in enumerate(ys)}
    values = np.zeros(grid.shape)
    for x, y, val in rows:
        values[yi[y], xi[x]] = val
    return ScalarField(grid=grid, values=values, quantity=quantity)  # type: ignore[arg-type]


def render_colormap(s: ScalarField, scale: ColorScale, out: str | os.PathLike) -> None:
    """Colormap a scalar field, one pixel per node, and write PPM (or PNG)."""
    rgb = scale.map(s.values)
    out = Path(out)
    partial = out.with_name(out.name + ".partial")
    if out.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(rgb, mode="RGB").save(partial, format="PNG")
    else:
        write_ppm(partial, rgb)
    _replace_into_place(partial, out)


_DERIVERS = {
    "magnitude": lambda f, spacing: velocity_magnitude(f),
    "vorticity": vorticity,
    "divergence": divergence,
    "shear": shear_strain,
}


def _derive_one(name: str, field: VectorField, scale: float | None) -> ScalarField:
    spacing = float(field.grid.step)
    out = _DERIVERS[name](field, spacing)
    if name == "magnitude" and scale is not None:
        # Pixels per frame -> physical units per frame. Spatial-derivative
        # quantities are scale-free because length cancels.
        out = ScalarField(grid=out.grid, values=out.values / scale, quantity=out.quantity)
    return out


def run_pipeline(cfg: PipelineConfig, threads: int = 1) -> RunReport:
    """Execute the full pipeline and write all outputs into cfg.out_dir.

    Produces vectors.csv, one CSV and one PPM per requested scalar field, and
    report.json. Raises StageError with the offending stage name on failure.
    """
    report = RunReport()
    out_dir = Path(cfg.out_dir)

    def stage(name, fn):
        t0 = time.perf_counter()
        try:
            result = fn()
        except StageError:
            raise
        except BaseException as exc:
            raise StageError(name, exc) from exc
        report.timings[name] = round(time.perf_counter() - t0, 6)
        return result

    def load():
        out_dir.mkdir(parents=True, exist_ok=True)
        return load_image(cfg.frame_a), load_image(cfg.frame_b)

    frame_a, frame_b = stage("load", load)
    frame_a, frame_b = stage(
        "preprocess",
        lambda: (apply_preprocess(frame_a, cfg.preprocess), apply_preprocess(frame_b, cfg.preprocess)),
    )

    def check_grid():
        for p in cfg.passes:
            make_grid(frame_a.width, frame_a.height, p.window, p.step)

    stage("grid", check_grid)
    raw = stage(
        "correlate",
        lambda: multipass(frame_a, frame_b, list(cfg.passes), cfg.postprocess, threads=threads),
    )
    clean = stage("postprocess", lambda: validate_pipeline(raw, cfg.postprocess))

    report.nx, report.ny = clean.grid.nx, clean.grid.ny
    report.nodes = clean.grid.n_nodes
    report.measured = clean.count(MEASURED)
    report.interpolated = clean.count(INTERPOLATED)
    report.flagged = report.interpolated  # every flagged node was filled
    report.mean_u = float(clean.u.mean())
    report.mean_v = float(clean.v.mean())

    scalars = stage(
        "derive", lambda: [_derive_one(name, clean, cfg.scale) for name in cfg.derive_fields]
    )

    def export():
        vec_path = out_dir / "vectors.csv"
        export_vectors(clean, vec_path)
        report.outputs.append(str(vec_path))
        for s in scalars:
            csv_path = out_dir / f"{s.quantity}.csv"
            export_scalar(s, csv_path)
            report.outputs.append(str(csv_path))
            ppm_path = out_dir / f"{s.quantity}.ppm"
            render_colormap(s, VORTICITY_SCALE, ppm_path)
            report.outputs.append(str(ppm_path))

    stage("export", export)

    report_path = out_dir / "report.json"
    report.outputs.append(str(report_path))
    try:
        _write_text_atomic(report_path, report.to_json())
    except BaseException as exc:
        raise StageError("export", exc) from exc
    return report


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return _exit_code(exc.cause)
    if isinstance(exc, (ConfigError, ParameterError, DimensionError)):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, ImageFormatError)):
        return EXIT_IO
    return EXIT_NUMERIC


def _default_threads(value: int | None) -> int:
    if value is not None:
        return max(1, value)
    env = os.environ.get(THREADS_ENV, "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _parse_flow(spec: str) -> FlowSpec:
    kind, _, rest = spec.partition(":")
    args = [float(tok) for tok in rest.split(",") if tok.strip() != ""]
    if kind == "uniform" and len(args) == 2:
        return FlowSpec.uniform(args[0], args[1])
    if kind == "rotation" and len(args) == 3:
        return FlowSpec.rigid_rotation((args[0], args[1]), args[2])
    if kind == "rankine" and len(args) == 4:
        return FlowSpec.rankine((args[0], args[1]), args[2], args[3])
    if kind == "shear" and len(args) == 1:
        return FlowSpec.shear(args[0])
    raise ConfigError(
        f"bad flow spec {spec!r}; expected uniform:u,v | rotation:cx,cy,omega | "
        f"rankine:cx,cy,gamma,core | shear:rate"
    )


def _parse_anchors(spec: str) -> ColorScale:
    breakpoints = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        value, _, rgb = part.partition(":")
        channels = tuple(int(c) for c in rgb.split(","))
        if len(channels) != 3:
            raise ConfigError(f"bad color anchor {part!r}; expected value:r,g,b")
        breakpoints.append((float(value), channels))
    try:
        return ColorScale(breakpoints=tuple(breakpoints))
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def _cmd_analyze(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg = PipelineConfig(
            frame_a=cfg.frame_a, frame_b=cfg.frame_b, out_dir=args.out,
            preprocess=cfg.preprocess, passes=cfg.passes,
            postprocess=cfg.postprocess, derive_fields=cfg.derive_fields, scale=cfg.scale,
        )
    if args.method:
        passes = tuple(
            PassSpec(window=p.window, step=p.step, method=args.method,
                     deform=p.deform, half_width=p.half_width)
            for p in cfg.passes
        )
        cfg = PipelineConfig(
            frame_a=cfg.frame_a, frame_b=cfg.frame_b, out_dir=cfg.out_dir,
            preprocess=cfg.preprocess, passes=passes,
            postprocess=cfg.postprocess, derive_fields=cfg.derive_fields, scale=cfg.scale,
        )
    report = run_pipeline(cfg, threads=_default_threads(args.threads))
    total = sum(report.timings.values())
    print(
        f"analyze: {report.nx}x{report.ny} nodes, {report.flagged} flagged/interpolated, "
        f"mean displacement ({report.mean_u:.3f}, {report.mean_v:.3f}) px, {total:.2f}s"
    )
    for path in report.outputs:
        print(f"  wrote {path}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    params = SynthParams(
        width=args.width, height=args.height, particle_count=args.count,
        particle_diameter=args.diameter, peak_intensity=args.intensity,
        noise_sigma=args.noise, seed=args.seed,
    )
    flow = _parse_flow(args.flow)
    grid = make_grid(args.width, args.height, args.window, args.step)
    frame_a, frame_b, truth = gen_pair(flow, params, grid)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(frame_a, out / "frame_a.pgm", bits=args.bits)
    save_image(frame_b, out / "frame_b.pgm", bits=args.bits)
    export_vectors(truth, out / "truth.csv")
    print(f"synth: wrote frame_a.pgm, frame_b.pgm, truth.csv under {out}")
    return EXIT_OK


def _cmd_derive(args) -> int:
    field = import_vectors(args.vectors)
    names = tuple(tok.strip() for tok in args.fields.split(",") if tok.strip())
    for name in names:
        if name not in _DERIVERS:
            raise ConfigError(f"unknown derived field {name!r}; expected one of {tuple(_DERIVERS)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in names:
        s = _derive_one(name, field, args.scale)
        export_scalar(s, out / f"{s.quantity}.csv")
        print(f"derive: wrote {out / (s.quantity + '.csv')}")
    return EXIT_OK


def _cmd_render(args) -> int:
    s = import_scalar(args.scalar)
    scale = _parse_anchors(args.anchors) if args.anchors else VORTICITY_SCALE
    render_colormap(s, scale, args.out)
    print(f"render: wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pivflow", description="Particle image velocimetry pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full pipeline on a frame pair")
    p.add_argument("--config", required=True, help="pipeline config file (INI)")
    p.add_argument("--out", help="override the configured output directory")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads for correlation (default ${THREADS_ENV} or 1)")
    p.add_argument("--method", choices=("dcc", "fft"), help="override the correlation method")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("synth", help="generate a synthetic frame pair with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--flow", default="uniform:3.7,-2.1")
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--count", type=int, default=7800)
    p.add_argument("--diameter", type=float, default=3.0)
    p.add_argument("--intensity", type=float, default=0.9)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=int, default=16, help="truth grid window")
    p.add_argument("--step", type=int, default=8, help="truth grid step")
    p.add_argument("--bits", type=int, choices=(8, 16), default=8)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("derive", help="recompute scalar fields from a vector CSV")
    p.add_argument("--vectors", required=True)
    p.add_argument("--fields", default="magnitude,vorticity")
    p.add_argument("--scale", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_derive)

    p = sub.add_parser("render", help="colormap a scalar CSV")
    p.add_argument("--scalar", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--anchors", help="custom scale, e.g. '0:0,0,128;0.4:255,0,0'")
    p.set_defaults(func=_cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(f"pivflow {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (ConfigError, ParameterError, DimensionError, ImageFormatError, OSError) as exc:
        print(f"pivflow {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except (ValueError, ArithmeticError) as exc:
        print(f"pivflow {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())
