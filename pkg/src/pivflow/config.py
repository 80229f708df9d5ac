"""Pipeline configuration: a flat, sectioned INI file with strict key checking.

Every key has a default except the input frames and the output directory.
Unknown sections or keys are errors rather than silently ignored, so a typo
cannot quietly change an experiment. The full key reference lives in the
project README.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .core import QUANTITIES, ParameterError
from .correlate import DEFORM_MODES, METHODS, PassSpec
from .postprocess import PostprocessConfig
from .preprocess import PreprocessConfig


class ConfigError(ValueError):
    """The pipeline configuration is malformed or inconsistent."""


_SCHEMA: dict[str, tuple[str, ...]] = {
    "input": ("frame_a", "frame_b"),
    "output": ("dir",),
    "preprocess": (
        "clahe", "clahe_tile", "clahe_clip", "clahe_bins",
        "highpass", "highpass_sigma", "cap", "cap_n",
    ),
    "correlate": ("method", "windows", "steps", "deform", "half_width"),
    "postprocess": ("n_global", "local_radius", "n_local", "median_radius", "smoothing", "eps"),
    "derive": ("fields", "scale"),
}


@dataclass(frozen=True)
class PipelineConfig:
    frame_a: str
    frame_b: str
    out_dir: str
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    passes: tuple[PassSpec, ...] = ()
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    derive_fields: tuple[str, ...] = ("magnitude", "vorticity")
    scale: float | None = None

    def __post_init__(self):
        if not self.frame_a or not self.frame_b:
            raise ConfigError("both input frame paths are required")
        if not self.out_dir:
            raise ConfigError("an output directory is required")
        if not self.passes:
            object.__setattr__(self, "passes", default_passes())
        for name in self.derive_fields:
            if name not in QUANTITIES:
                raise ConfigError(f"unknown derived field {name!r}; expected one of {QUANTITIES}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")


def default_passes(method: str = "fft") -> tuple[PassSpec, ...]:
    """The shipped schedule: windows 64/32/16/16 at 50% overlap, linear deformation."""
    return tuple(
        PassSpec(window=w, step=w // 2, method=method, deform="linear")
        for w in (64, 32, 16, 16)
    )


def _check_schema(parser: configparser.ConfigParser) -> None:
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")


def _get(parser, section, key, conv, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        if conv is bool:
            return parser.getboolean(section, key)
        return conv(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc


def _int_list(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(tok) for tok in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"expected a list of integers, got {raw!r}") from exc


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(tok.strip() for tok in raw.split(",") if tok.strip())


def _build_passes(parser: configparser.ConfigParser) -> tuple[PassSpec, ...]:
    method = _get(parser, "correlate", "method", str, "fft")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    deform = _get(parser, "correlate", "deform", str, "linear")
    if deform not in DEFORM_MODES:
        raise ConfigError(f"deform must be one of {DEFORM_MODES}, got {deform!r}")
    windows = _get(parser, "correlate", "windows", _int_list, (64, 32, 16, 16))
    steps = _get(parser, "correlate", "steps", _int_list, None)
    if steps is None:
        steps = tuple(max(1, w // 2) for w in windows)
    if len(steps) != len(windows):
        raise ConfigError(
            f"steps has {len(steps)} entries but windows has {len(windows)}"
        )
    half_width = _get(parser, "correlate", "half_width", int, None)
    try:
        return tuple(
            PassSpec(window=w, step=s, method=method, deform=deform, half_width=half_width)
            for w, s in zip(windows, steps)
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str | os.PathLike) -> PipelineConfig:
    """Parse and validate a pipeline config file."""
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except OSError:
        raise
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    _check_schema(parser)

    frame_a = _get(parser, "input", "frame_a", str, "")
    frame_b = _get(parser, "input", "frame_b", str, "")
    out_dir = _get(parser, "output", "dir", str, "")

    try:
        pre = PreprocessConfig(
            clahe_enabled=_get(parser, "preprocess", "clahe", bool, True),
            clahe_tile=_get(parser, "preprocess", "clahe_tile", int, 32),
            clahe_clip=_get(parser, "preprocess", "clahe_clip", float, 4.0),
            clahe_bins=_get(parser, "preprocess", "clahe_bins", int, 256),
            hpf_enabled=_get(parser, "preprocess", "highpass", bool, False),
            hpf_sigma=_get(parser, "preprocess", "highpass_sigma", float, 3.0),
            cap_enabled=_get(parser, "preprocess", "cap", bool, True),
            cap_n=_get(parser, "preprocess", "cap_n", float, 2.0),
        )
        post = PostprocessConfig(
            n_global=_get(parser, "postprocess", "n_global", float, 3.0),
            local_radius=_get(parser, "postprocess", "local_radius", int, 1),
            n_local=_get(parser, "postprocess", "n_local", float, 2.0),
            median_radius=_get(parser, "postprocess", "median_radius", int, 1),
            smoothing_enabled=_get(parser, "postprocess", "smoothing", bool, True),
            eps=_get(parser, "postprocess", "eps", float, 0.1),
        )
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc

    return PipelineConfig(
        frame_a=frame_a,
        frame_b=frame_b,
        out_dir=out_dir,
        preprocess=pre,
        passes=_build_passes(parser),
        postprocess=post,
        derive_fields=_get(parser, "derive", "fields", _str_list, ("magnitude", "vorticity")),
        scale=_get(parser, "derive", "scale", float, None),
    )
