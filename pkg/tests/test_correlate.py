"""Correlation backend, peak finding, sub-pixel fitting, and multipass tests."""

import math

import numpy as np
import pytest

from pivflow.core import DimensionError, GrayImage, ParameterError, VectorField, make_grid
from pivflow.correlate import (
    CorrelationPlane,
    PassSpec,
    dcc,
    deform_window,
    fft_correlate,
    find_peak,
    multipass,
    resample_field,
    single_pass,
    subpixel_gauss3,
)
from pivflow.postprocess import PostprocessConfig
from pivflow.synth import FlowSpec, SynthParams, gen_pair, ground_truth


def literal_correlation_oracle(a, b, half_width):
    """Quadruple-loop evaluation of the correlation sum with mean subtraction
    and per-shift overlap normalization. Deliberately naive."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    a = a - a.mean()
    b = b - b.mean()
    w = a.shape[0]
    out = np.zeros((2 * half_width + 1, 2 * half_width + 1))
    for n in range(-half_width, half_width + 1):
        for m in range(-half_width, half_width + 1):
            total = 0.0
            count = 0
            for i in range(w):
                for j in range(w):
                    if 0 <= i + n < w and 0 <= j + m < w:
                        total += a[i, j] * b[i + n, j + m]
                        count += 1
            out[n + half_width, m + half_width] = total / count
    return out


def circular_correlation_oracle(a, b):
    """Direct circular correlation with modular indexing."""
    a = np.asarray(a, float) - np.asarray(a, float).mean()
    b = np.asarray(b, float) - np.asarray(b, float).mean()
    w = a.shape[0]
    out = np.zeros((w, w))
    for n in range(w):
        for m in range(w):
            total = 0.0
            for i in range(w):
                for j in range(w):
                    total += a[i, j] * b[(i + n) % w, (j + m) % w]
            out[n, m] = total / (w * w)
    return out


def gaussian_fit_oracle(samples):
    """Least-squares parabola through (x, ln c) at x = -1, 0, 1; peak at -b/2a."""
    coeffs = np.polyfit([-1.0, 0.0, 1.0], np.log(samples), 2)
    return -coeffs[1] / (2.0 * coeffs[0])


class TestDcc:
    def test_impulse_shift(self):
        a = np.zeros((5, 5))
        a[2, 2] = 1.0
        b = np.zeros((5, 5))
        b[2, 3] = 1.0  # one column to the right
        pk = find_peak(dcc(a, b, 2))
        assert (pk.ix, pk.iy) == (1, 0)

    def test_autocorrelation_peaks_at_zero(self):
        rng = np.random.default_rng(20)
        a = rng.random((12, 12))
        pk = find_peak(dcc(a, a, 5))
        assert (pk.ix, pk.iy) == (0, 0)

    def test_matches_literal_oracle(self):
        rng = np.random.default_rng(21)
        a = rng.random((8, 8))
        b = rng.random((8, 8))
        plane = dcc(a, b, 4)
        assert np.abs(plane.values - literal_correlation_oracle(a, b, 4)).max() < 1e-12

    def test_shape_checks(self):
        with pytest.raises(DimensionError):
            dcc(np.zeros((8, 8)), np.zeros((6, 6)), 2)
        with pytest.raises(ParameterError):
            dcc(np.zeros((8, 8)), np.zeros((8, 8)), 5)


class TestFftCorrelate:
    def test_zero_windows_zero_plane(self):
        plane = fft_correlate(np.zeros((16, 16)), np.zeros((16, 16)))
        assert np.all(plane.values == 0.0)

    @pytest.mark.parametrize("size", [8, 12, 16, 24, 32])
    def test_matches_dcc_on_shared_domain(self, size):
        rng = np.random.default_rng(22 + size)
        a = rng.random((size, size))
        b = rng.random((size, size))
        h = size // 2
        reference = dcc(a, b, h).values
        plane = fft_correlate(a, b)
        oy, ox = plane.origin
        shared = plane.values[oy - h : oy + h + 1, ox - h : ox + h + 1]
        rel = np.abs(shared - reference).max() / np.abs(reference).max()
        assert rel < 1e-6

    def test_circular_shift_without_padding(self):
        rng = np.random.default_rng(23)
        a = rng.random((16, 16))
        b = np.roll(a, shift=(3, 2), axis=(0, 1))  # +2 in x, +3 in y
        plane = fft_correlate(a, b, pad=False)
        pk = find_peak(plane)
        assert (pk.ix, pk.iy) == (2, 3)
        oracle = circular_correlation_oracle(a, b)
        rolled = np.fft.fftshift(oracle)
        assert np.abs(plane.values - rolled).max() < 1e-12

    def test_mean_subtraction_invariance(self):
        rng = np.random.default_rng(24)
        a = rng.random((16, 16)) * 0.5
        b = rng.random((16, 16)) * 0.5
        base = fft_correlate(a, b).values
        shifted = fft_correlate(a + 0.3, b + 0.17).values
        assert np.abs(base - shifted).max() < 1e-9
        base_d = dcc(a, b, 8).values
        shifted_d = dcc(a + 0.3, b + 0.17, 8).values
        assert np.abs(base_d - shifted_d).max() < 1e-9

    def test_rejects_non_square(self):
        with pytest.raises(DimensionError):
            fft_correlate(np.zeros((8, 10)), np.zeros((8, 10)))


class TestFindPeak:
    def _plane(self, values, half_width=None):
        values = np.asarray(values, float)
        h = values.shape[0] // 2
        return CorrelationPlane(values=values, origin=(h, h), half_width=half_width or h)

    def test_single_maximum(self):
        values = np.zeros((5, 5))
        values[2, 3] = 1.0  # x-shift +1
        pk = find_peak(self._plane(values))
        assert (pk.ix, pk.iy) == (1, 0)
        assert not pk.degenerate

    def test_constant_plane_degenerate(self):
        pk = find_peak(self._plane(np.ones((5, 5))))
        assert pk.degenerate
        assert (pk.ix, pk.iy) == (0, 0)

    def test_tie_breaks_toward_smaller_shift(self):
        values = np.zeros((9, 9))
        values[4, 2] = 1.0  # shift (-2, 0)
        values[4, 7] = 1.0  # shift (+3, 0)
        pk = find_peak(self._plane(values))
        assert (pk.ix, pk.iy) == (-2, 0)

    def test_peak_ratio(self):
        values = np.zeros((9, 9))
        values[4, 4] = 1.0
        values[0, 0] = 0.25  # outside the 3x3 neighborhood
        pk = find_peak(self._plane(values))
        assert pk.peak_ratio == pytest.approx(4.0)

    def test_search_restricted_to_half_width(self):
        values = np.zeros((9, 9))
        values[0, 0] = 5.0  # shift (-4, -4), outside half_width 2
        values[4, 5] = 1.0
        pk = find_peak(self._plane(values, half_width=2))
        assert (pk.ix, pk.iy) == (1, 0)


class TestSubpixel:
    def _plane_from(self, cm_x, c0, cp_x, cm_y=None, cp_y=None):
        values = np.full((5, 5), 1e-3)
        values[2, 2] = c0
        values[2, 1] = cm_x
        values[2, 3] = cp_x
        values[1, 2] = cm_x if cm_y is None else cm_y
        values[3, 2] = cp_x if cp_y is None else cp_y
        return CorrelationPlane(values=values, origin=(2, 2), half_width=2)

    def test_symmetric_samples_give_zero(self):
        d = subpixel_gauss3(self._plane_from(0.4, 1.0, 0.4), (0, 0))
        assert d.dx == 0.0 and d.dy == 0.0
        assert not d.degenerate

    def test_worked_example(self):
        # samples (e^-0.5, 1, e^-2) put the fitted center at -0.3
        plane = self._plane_from(math.exp(-0.5), 1.0, math.exp(-2.0))
        d = subpixel_gauss3(plane, (0, 0))
        assert d.dx == pytest.approx(-0.3, abs=1e-12)
        oracle = gaussian_fit_oracle([math.exp(-0.5), 1.0, math.exp(-2.0)])
        assert d.dx == pytest.approx(oracle, abs=1e-12)

    def test_zero_peak_degenerate(self):
        plane = self._plane_from(-0.1, 0.0, -0.1)
        d = subpixel_gauss3(plane, (0, 0))
        assert d.degenerate
        assert (d.dx, d.dy) == (0.0, 0.0)

    def test_border_peak_degenerate(self):
        values = np.zeros((5, 5))
        values[2, 4] = 1.0
        plane = CorrelationPlane(values=values, origin=(2, 2), half_width=2)
        d = subpixel_gauss3(plane, (2, 0))
        assert d.degenerate
        assert d.dx == 2.0

    def test_flat_after_lift_degenerate(self):
        # all three samples equal after the positivity lift: zero denominator
        values = np.zeros((5, 5))
        plane = CorrelationPlane(values=values + 0.0, origin=(2, 2), half_width=2)
        d = subpixel_gauss3(plane, (0, 0))
        assert d.degenerate

    def test_exact_recovery_of_sampled_gaussians(self):
        # the 3-point log fit is exact for exact Gaussians
        rng = np.random.default_rng(25)
        for _ in range(200):
            dx = rng.uniform(-0.45, 0.45)
            dy = rng.uniform(-0.45, 0.45)
            width = rng.uniform(0.8, 3.0)
            n = np.arange(-3, 4)
            col = np.exp(-((n - dy) ** 2) / (2 * width**2))
            row = np.exp(-((n - dx) ** 2) / (2 * width**2))
            values = np.outer(col, row)
            plane = CorrelationPlane(values=values, origin=(3, 3), half_width=3)
            pk = find_peak(plane)
            assert (pk.ix, pk.iy) == (0, 0)
            d = subpixel_gauss3(plane, (0, 0))
            assert abs(d.dx - dx) < 1e-6
            assert abs(d.dy - dy) < 1e-6


class TestDeformWindow:
    def _image(self, seed=26, size=64):
        rng = np.random.default_rng(seed)
        return GrayImage.from_array(rng.random((size, size)))

    def _uniform_field(self, size, u, v, window=16, step=8):
        grid = make_grid(size, size, window, step)
        return VectorField(
            grid=grid, u=np.full(grid.shape, float(u)), v=np.full(grid.shape, float(v))
        )

    def test_zero_field_is_identity(self):
        img = self._image()
        out = deform_window(img, self._uniform_field(64, 0.0, 0.0))
        assert np.array_equal(out.data, img.data)

    def test_integer_shift(self):
        img = self._image()
        out = deform_window(img, self._uniform_field(64, 2.0, 0.0))
        # sampling at x + 2 pulls columns 2.. onto columns 0..
        assert np.array_equal(out.data[:, :-2], img.data[:, 2:])

    def test_half_pixel_average(self):
        img = self._image()
        out = deform_window(img, self._uniform_field(64, 0.5, 0.0))
        expected = 0.5 * (img.data[:, :-1] + img.data[:, 1:])
        assert np.allclose(out.data[:, :-1], expected, atol=1e-12)


class TestSinglePass:
    def test_zero_motion(self):
        params = SynthParams(width=128, height=128, particle_count=800, seed=27)
        a, _, _ = gen_pair(FlowSpec.uniform(0, 0), params)
        for method in ("fft", "dcc"):
            field = single_pass(a, a, PassSpec(window=32, step=16, method=method))
            assert np.abs(field.u).max() < 1e-6
            assert np.abs(field.v).max() < 1e-6

    def test_uniform_shift_recovery(self):
        params = SynthParams(width=256, height=256, particle_count=2600, seed=28)
        a, b, _ = gen_pair(FlowSpec.uniform(3.7, -2.1), params)
        field = single_pass(a, b, PassSpec(window=32, step=16, method="fft"))
        assert abs(field.u.mean() - 3.7) < 0.1
        assert abs(field.v.mean() + 2.1) < 0.1

    def test_dcc_24_12_reference_setup(self):
        params = SynthParams(width=256, height=256, particle_count=2600, seed=29)
        a, b, _ = gen_pair(FlowSpec.uniform(2.4, 1.3), params)
        spec = PassSpec(window=24, step=12, method="dcc", half_width=8)
        field = single_pass(a, b, spec)
        assert field.grid.window == 24 and field.grid.step == 12
        assert field.count(0) == field.grid.n_nodes  # everything measured
        assert abs(field.u.mean() - 2.4) < 0.2
        assert abs(field.v.mean() - 1.3) < 0.2

    def test_shift_covariance(self):
        rng = np.random.default_rng(30)
        image = rng.random((64, 64))
        r0, c0, w = 24, 24, 16
        a = image[r0 : r0 + w, c0 : c0 + w]
        for p, q in ((1, 0), (0, 1), (3, -2), (-4, 4)):
            b = image[r0 - q : r0 - q + w, c0 - p : c0 - p + w]
            pk = find_peak(dcc(a, b, 6))
            assert (pk.ix, pk.iy) == (p, q)

    def test_mismatched_frames(self):
        a = GrayImage.from_array(np.zeros((64, 64)))
        b = GrayImage.from_array(np.zeros((64, 32)))
        with pytest.raises(DimensionError):
            single_pass(a, b, PassSpec(window=16, step=8))

    def test_thread_count_does_not_change_results(self):
        params = SynthParams(width=192, height=192, particle_count=1500, seed=31)
        a, b, _ = gen_pair(FlowSpec.uniform(1.5, -0.5), params)
        spec = PassSpec(window=32, step=16, method="fft")
        base = single_pass(a, b, spec, threads=1)
        for threads in (2, 4):
            again = single_pass(a, b, spec, threads=threads)
            assert np.array_equal(base.u, again.u)
            assert np.array_equal(base.v, again.v)


class TestResampleField:
    def test_exact_on_linear_fields(self):
        coarse = make_grid(256, 256, 64, 32)
        xs, ys = np.meshgrid(coarse.x_centers, coarse.y_centers)
        field = VectorField(grid=coarse, u=0.01 * xs + 0.02 * ys, v=0.03 * xs - 0.01 * ys)
        fine = make_grid(256, 256, 32, 16)
        out = resample_field(field, fine)
        fx, fy = np.meshgrid(fine.x_centers, fine.y_centers)
        inside = (
            (fx >= coarse.x_centers[0]) & (fx <= coarse.x_centers[-1])
            & (fy >= coarse.y_centers[0]) & (fy <= coarse.y_centers[-1])
        )
        assert np.allclose(out.u[inside], (0.01 * fx + 0.02 * fy)[inside], atol=1e-12)
        assert np.allclose(out.v[inside], (0.03 * fx - 0.01 * fy)[inside], atol=1e-12)


class TestMultipass:
    def test_zero_motion_gives_zero_field(self):
        params = SynthParams(width=160, height=160, particle_count=1100, seed=32)
        a, _, _ = gen_pair(FlowSpec.uniform(0, 0), params)
        passes = [PassSpec(window=w, step=w // 2) for w in (64, 32, 16)]
        field = multipass(a, a, passes, PostprocessConfig())
        assert np.abs(field.u).max() < 1e-6
        assert np.abs(field.v).max() < 1e-6

    def test_rotation_multipass_beats_single_pass(self):
        # The coarse pass smears its correlation peak by the in-window
        # displacement spread (rate x window); deformation unwinds that. The
        # rate here puts the coarse pass clearly past its accuracy crossover.
        flow = FlowSpec.rigid_rotation((128.0, 128.0), 0.05)
        params = SynthParams(width=256, height=256, particle_count=3900, seed=33)
        a, b, _ = gen_pair(flow, params)
        post = PostprocessConfig()

        single = single_pass(a, b, PassSpec(window=64, step=32))
        truth_single = ground_truth(flow, single.grid)
        rms_single = np.sqrt(
            np.mean((single.u - truth_single.u) ** 2 + (single.v - truth_single.v) ** 2)
        )

        passes = [PassSpec(window=w, step=w // 2) for w in (64, 32, 16, 16)]
        multi = multipass(a, b, passes, post)
        truth_multi = ground_truth(flow, multi.grid)
        rms_multi = np.sqrt(
            np.mean((multi.u - truth_multi.u) ** 2 + (multi.v - truth_multi.v) ** 2)
        )
        assert rms_multi < rms_single

    def test_window_order_enforced(self):
        params = SynthParams(width=128, height=128, particle_count=600, seed=34)
        a, b, _ = gen_pair(FlowSpec.uniform(1, 1), params)
        with pytest.raises(ParameterError):
            multipass(a, b, [PassSpec(window=16, step=8), PassSpec(window=32, step=16)],
                      PostprocessConfig())
        with pytest.raises(ParameterError):
            multipass(a, b, [], PostprocessConfig())


class TestPassSpec:
    def test_validation(self):
        with pytest.raises(ParameterError):
            PassSpec(window=16, step=0)
        with pytest.raises(ParameterError):
            PassSpec(window=16, step=8, method="phase")
        with pytest.raises(ParameterError):
            PassSpec(window=16, step=8, deform="cubic")
        with pytest.raises(ParameterError):
            PassSpec(window=16, step=8, half_width=9)

    def test_default_half_width_is_third_of_window(self):
        assert PassSpec(window=24, step=12, method="dcc").search_half_width == 8
        assert PassSpec(window=16, step=8).search_half_width == 5
