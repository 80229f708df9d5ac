"""pivflow: particle image velocimetry from frame pair to validated flow fields."""

from .core import (
    FLAGGED,
    INTERPOLATED,
    MEASURED,
    DimensionError,
    GrayImage,
    GridSpec,
    ParameterError,
    ScalarField,
    VectorField,
    make_grid,
)
from .correlate import (
    CorrelationPlane,
    Displacement,
    PassSpec,
    dcc,
    deform_window,
    fft_correlate,
    find_peak,
    multipass,
    single_pass,
    subpixel_gauss3,
)
from .derive import (
    LineProbe,
    TracerSpec,
    area_mean_direction,
    divergence,
    line_profile,
    shear_strain,
    stokes_slip_velocity,
    velocity_magnitude,
    vorticity,
)
from .imageio import load_image, save_image
from .postprocess import (
    PostprocessConfig,
    global_threshold_validate,
    interpolate_holes,
    local_stddev_validate,
    median_smooth,
    validate_pipeline,
)
from .preprocess import PreprocessConfig, apply_preprocess, clahe, highpass, intensity_cap
from .synth import FlowSpec, SynthParams, advect, gen_pair, ground_truth, render_particles

__version__ = "0.1.0"
