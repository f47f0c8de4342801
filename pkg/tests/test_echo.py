"""Transfer functions, propagation and echo extraction."""

import numpy as np
import pytest

from afc_lib import (
    CombParams, SpectralError, SpectralProfile, build_transfer, default_echo_halfwidth,
    delay_envelope, extract_echo, flat_profile, gaussian_pulse, make_grid, prepare_comb,
    propagate, window_energy,
)


@pytest.fixture(scope="module")
def comb_output(grid, square_comb, input_pulse):
    transfer = build_transfer(prepare_comb(square_comb, grid))
    return propagate(input_pulse, transfer)


class TestTransferFunction:
    def test_flat_depth(self, grid):
        transfer = build_transfer(flat_profile(grid, 1.2), pass_count=2)
        assert np.allclose(np.abs(transfer.response) ** 2, np.exp(-2.4))
        assert np.allclose(np.angle(transfer.response), 0.0, atol=1e-12)

    def test_zero_depth_is_identity(self, grid, input_pulse):
        transfer = build_transfer(flat_profile(grid, 0.0))
        assert np.allclose(transfer.response, 1.0)
        output = propagate(input_pulse, transfer)
        assert np.allclose(output.samples, input_pulse.samples, atol=1e-12)

    def test_passive(self, grid, square_comb):
        transfer = build_transfer(prepare_comb(square_comb, grid), pass_count=2, include_dispersion=True)
        assert np.all(np.abs(transfer.response) <= 1.0 + 1e-12)

    def test_magnitude_periodic_in_comb(self):
        grid = make_grid(16.0, 2 ** 14)
        params = CombParams(period=0.125, finesse=3.0, peak_depth=2.0)
        magnitude = np.abs(build_transfer(prepare_comb(params, grid)).response)
        step = 128
        inner = np.flatnonzero(np.abs(grid.frequencies) < 3.5)
        inner = inner[np.abs(grid.frequencies[inner + step]) < 3.5]
        assert np.allclose(magnitude[inner], magnitude[inner + step], atol=1e-9)

    def test_pass_count(self, grid):
        with pytest.raises(SpectralError):
            build_transfer(flat_profile(grid, 1.0), pass_count=3)

    def test_profile_must_match_grid(self, grid):
        with pytest.raises(SpectralError):
            SpectralProfile(grid=grid, depth=np.zeros(16))


class TestPropagation:
    def test_linear_in_input(self, grid, square_comb, input_pulse):
        transfer = build_transfer(prepare_comb(square_comb, grid))
        factor = 2.5 + 1.0j
        scaled = propagate(input_pulse.scaled(factor), transfer)
        assert np.allclose(scaled.samples, factor * propagate(input_pulse, transfer).samples, atol=1e-12)

    def test_grid_mismatch(self, grid, input_pulse):
        other = make_grid(40.0, 2 ** 14)
        with pytest.raises(SpectralError, match="grid mismatch"):
            propagate(input_pulse, build_transfer(flat_profile(other, 0.5)))

    def test_energy_never_grows(self, grid, input_pulse):
        rng = np.random.default_rng(11)
        for _ in range(5):
            params = CombParams.from_delay(
                6.0,
                finesse=rng.uniform(1.5, 6.0),
                peak_depth=rng.uniform(0.0, 2.0),
                background_depth=rng.uniform(0.0, 0.4),
            )
            output = propagate(input_pulse, build_transfer(prepare_comb(params, grid)))
            assert output.mean_photon_number <= input_pulse.mean_photon_number * (1 + 1e-12)

    def test_delay_envelope(self, grid, input_pulse):
        delayed = delay_envelope(input_pulse, 21.0)
        shift = round(21.0 / grid.dt)
        assert np.allclose(delayed.samples, np.roll(input_pulse.samples, shift), atol=1e-10)


class TestEchoExtraction:
    def test_echo_timing(self, comb_output):
        report = extract_echo(comb_output, 6.0, default_echo_halfwidth(2.0, 0.05))
        assert report.echo_time == pytest.approx(6.0, abs=0.1)
        assert report.window == (3.0, 9.0)

    def test_eight_microsecond_comb(self, grid, input_pulse):
        params = CombParams.from_delay(8.0, finesse=3.0, peak_depth=2.4)
        output = propagate(input_pulse, build_transfer(prepare_comb(params, grid)))
        assert extract_echo(output, 8.0, 3.0).echo_time == pytest.approx(8.0, abs=0.1)

    def test_energy_bookkeeping(self, comb_output):
        report = extract_echo(comb_output, 6.0, 3.0)
        assert 0.0 < report.echo_efficiency < 0.25
        assert report.echo_efficiency + report.transmitted_fraction <= 1.0 + 1e-6

    def test_second_echo_is_weaker(self, comb_output):
        first = window_energy(comb_output, 3.0, 9.0)
        second = window_energy(comb_output, 9.0, 15.0)
        assert 0.0 < second < first

    def test_dispersion_changes_efficiency(self, grid, input_pulse):
        for finesse in (2.0, 3.0, 4.0):
            profile = prepare_comb(CombParams.from_delay(6.0, finesse=finesse, peak_depth=2.4), grid)
            full = extract_echo(propagate(input_pulse, build_transfer(profile)), 6.0, 3.0)
            bare = extract_echo(
                propagate(input_pulse, build_transfer(profile, include_dispersion=False)), 6.0, 3.0,
            )
            assert abs(full.echo_efficiency - bare.echo_efficiency) > 0.1 * full.echo_efficiency

    def test_no_field_no_echo(self, grid):
        empty = gaussian_pulse(grid, 0.0, 2.0, 0.0)
        report = extract_echo(empty, 6.0, 3.0)
        assert report.echo_efficiency == 0.0
        assert report.echo_time == 6.0

    def test_window_overlaps_transmitted_pulse(self, comb_output):
        with pytest.raises(SpectralError, match="overlaps"):
            extract_echo(comb_output, 2.0, 3.0)

    def test_window_outside_grid(self, comb_output):
        with pytest.raises(SpectralError, match="outside"):
            extract_echo(comb_output, 500.0, 3.0)

    def test_default_halfwidth(self):
        assert default_echo_halfwidth(2.0, 0.05) == 3.0
        assert default_echo_halfwidth(0.01, 0.05) == pytest.approx(0.15)
