"""Grid, pulse and Hilbert-phase tests."""

import math

import numpy as np
import pytest

from afc_lib import (
    SpectralError, envelope_from_spectrum, gaussian_pulse, hilbert_phase, make_grid,
)


class TestGrid:
    def test_default_grid(self, grid):
        assert grid.resolution * 1e3 == pytest.approx(1.2207, abs=1e-4)
        assert grid.time_window == pytest.approx(819.2)
        assert grid.resolution * grid.time_window == pytest.approx(1.0, abs=1e-12)
        assert grid.dt == pytest.approx(0.05)

    def test_axes_are_centered(self, grid):
        freqs = grid.frequencies
        assert freqs.size == grid.n_points
        assert np.all(np.diff(freqs) > 0)
        assert freqs[grid.n_points // 2] == 0.0
        assert grid.times[grid.n_points // 2] == 0.0

    def test_supports_comb(self, grid):
        assert grid.supports_comb(1.0 / 6.0)
        assert not make_grid(20.0, 2 ** 10).supports_comb(1.0 / 6.0)

    @pytest.mark.parametrize("span, n_points", [(20.0, 1000), (20.0, 1), (0.0, 1024), (-5.0, 1024)])
    def test_invalid_grid(self, span, n_points):
        with pytest.raises(SpectralError):
            make_grid(span, n_points)


class TestGaussianPulse:
    def test_photon_number(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 2.5)
        assert pulse.mean_photon_number == pytest.approx(2.5, rel=1e-9)
        assert pulse.reference_photon_number == pytest.approx(2.5, rel=1e-9)

    def test_intensity_fwhm(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 1.0)
        above = grid.times[pulse.intensity >= 0.5 * pulse.intensity.max()]
        assert above.max() - above.min() == pytest.approx(2.0, abs=2 * grid.dt)

    def test_zero_photons(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 0.0)
        assert np.all(pulse.samples == 0)
        assert pulse.mean_photon_number == 0.0

    def test_carrier_detuning_shifts_spectrum(self):
        wide = make_grid(100.0, 2 ** 14)
        pulse = gaussian_pulse(wide, 0.0, 2.0, 1.0, carrier_detuning=35.4)
        peak = wide.frequencies[np.argmax(np.abs(pulse.spectrum()))]
        assert peak == pytest.approx(35.4, abs=wide.resolution)

    def test_carrier_outside_grid(self, grid):
        with pytest.raises(SpectralError):
            gaussian_pulse(grid, 0.0, 2.0, 1.0, carrier_detuning=35.4)

    def test_clipped_pulse(self, grid):
        with pytest.raises(SpectralError):
            gaussian_pulse(grid, grid.times[-1] - 1.0, 2.0, 1.0)

    @pytest.mark.parametrize("fwhm, n_bar", [(0.0, 1.0), (-1.0, 1.0), (2.0, -0.5)])
    def test_invalid_pulse(self, grid, fwhm, n_bar):
        with pytest.raises(SpectralError):
            gaussian_pulse(grid, 0.0, fwhm, n_bar)

    def test_samples_are_read_only(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 1.0)
        with pytest.raises(ValueError):
            pulse.samples[0] = 1.0


class TestSpectrum:
    def test_parseval(self, grid):
        pulse = gaussian_pulse(grid, 3.0, 2.0, 2.5)
        energy = np.sum(np.abs(pulse.spectrum()) ** 2) * grid.resolution
        assert energy == pytest.approx(2.5, rel=1e-9)

    def test_inverse_transform(self, grid):
        pulse = gaussian_pulse(grid, -4.0, 1.0, 3.0)
        restored = envelope_from_spectrum(grid, pulse.spectrum(), template=pulse)
        scale = np.abs(pulse.samples).max()
        assert np.max(np.abs(restored.samples - pulse.samples)) <= 1e-9 * scale
        assert restored.center == pulse.center

    def test_scaled_scales_reference(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 1.0)
        half = pulse.scaled(math.sqrt(0.5))
        assert half.mean_photon_number == pytest.approx(0.5)
        assert half.reference_photon_number == pytest.approx(0.5)
        assert half.center == pulse.center

    def test_scaled_by_phase_keeps_reference(self, grid):
        pulse = gaussian_pulse(grid, 0.0, 2.0, 1.0)
        rotated = pulse.scaled(1j)
        assert rotated.reference_photon_number == pytest.approx(1.0)


class TestHilbertPhase:
    def test_constant_depth_has_no_phase(self, grid):
        phase = hilbert_phase(np.full(grid.n_points, 1.7))
        assert np.max(np.abs(phase)) < 1e-12

    def test_even_depth_gives_odd_phase(self, grid):
        freqs = grid.frequencies
        depth = 2.0 * np.exp(-freqs ** 2 / (2 * 0.3 ** 2))
        phase = hilbert_phase(depth)
        assert np.allclose(phase[1:], -phase[1:][::-1], atol=1e-10)
        assert abs(phase[0]) < 1e-10
        assert abs(phase[grid.n_points // 2]) < 1e-10

    def test_lorentzian_line(self, grid):
        freqs = grid.frequencies
        gamma, peak = 0.05, 2.0
        depth = peak * gamma ** 2 / (freqs ** 2 + gamma ** 2)
        phase = hilbert_phase(depth)
        expected = peak / 2.0 * gamma * freqs / (freqs ** 2 + gamma ** 2)
        inner = np.abs(freqs) < 2.0
        assert np.max(np.abs(phase[inner] - expected[inner])) <= 0.01 * np.max(np.abs(expected))

    def test_linearity(self, grid):
        freqs = grid.frequencies
        first = np.exp(-freqs ** 2 / 0.5)
        second = np.exp(-(freqs - 1.0) ** 2 / 0.2)
        combined = hilbert_phase(2.0 * first + 0.5 * second)
        separate = 2.0 * hilbert_phase(first) + 0.5 * hilbert_phase(second)
        assert np.allclose(combined, separate, atol=1e-12)

    def test_negative_depth(self, grid):
        depth = np.zeros(grid.n_points)
        depth[grid.n_points // 2] = -0.1
        with pytest.raises(SpectralError):
            hilbert_phase(depth)

    def test_edges_must_be_flat(self, grid):
        with pytest.raises(SpectralError, match="not flat"):
            hilbert_phase(np.linspace(0.0, 1.0, grid.n_points))
