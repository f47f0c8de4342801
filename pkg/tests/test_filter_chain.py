"""Noise emission, filter stages and the noise budget."""

from dataclasses import replace

import numpy as np
import pytest

from afc_lib import schedule
from src.services.filter_chain import (
    FilterChainParams, FluxTimeline, NoiseFilterChain, NoiseModelError, NoiseSourceParams,
    aom_gate, apply_chain, broadband_fp_transmission, calibrate_noise_sources, emit_noise,
    fp_transmission, gate_window, grating_transmission, sum_fluxes,
)

WINDOW = (25.5, 28.5)
DARK = 5e-5


@pytest.fixture
def budget(grid, timeline, chain_params):
    fluxes = emit_noise(timeline, NoiseSourceParams(), grid.times)
    _, result = apply_chain(fluxes, chain_params, WINDOW, dark_equivalent=DARK)
    return result


class TestStages:
    def test_fp_transmission(self):
        assert fp_transmission(0.0, 7.5) == 1.0
        assert fp_transmission(35.4, 7.5) == pytest.approx(1.11e-2, rel=0.01)
        assert fp_transmission(3.75, 7.5) == pytest.approx(0.5)
        assert fp_transmission(35.4, 7.5, center=35.4) == 1.0

    def test_fp_vectorized(self):
        values = fp_transmission(np.array([-3.75, 0.0, 3.75]), 7.5)
        assert np.allclose(values, [0.5, 1.0, 0.5])

    def test_fp_invalid(self):
        with pytest.raises(NoiseModelError):
            fp_transmission(1.0, 0.0)

    def test_broadband_fp(self):
        assert broadband_fp_transmission(500.0, 7.5) == pytest.approx(0.015)
        assert broadband_fp_transmission(1.0, 7.5) == 1.0

    def test_grating(self):
        assert grating_transmission(35.4, 0.0, 1e5, 1e-3) == 1.0
        assert grating_transmission(2e5, 0.0, 1e5, 1e-3) == 1e-3
        assert grating_transmission(5e4, 100.0, 1e5, 1e-3) == pytest.approx(0.5 + 0.5e-3)

    def test_aom_gate(self):
        window = (25.5, 40.5)
        assert aom_gate(30.0, window) == 1.0
        assert aom_gate(20.0, window) == 1e-6
        assert aom_gate(25.5, window) == 1.0

    def test_aom_ramp(self):
        window = (25.5, 40.5)
        assert aom_gate(25.5, window, ramp=0.1) == pytest.approx(0.5)
        assert aom_gate(40.5, window, ramp=0.1) == pytest.approx(0.5)
        assert aom_gate(25.45, window, ramp=0.1) == 1e-6
        assert aom_gate(30.0, window, ramp=0.1) == 1.0

    def test_gate_window(self, timeline):
        assert gate_window(timeline, 0.5, 15.0) == (25.5, 40.5)

    @pytest.mark.parametrize("kwargs", [
        {"spatial_suppression": 1.5},
        {"fp_fwhm": 0.0},
        {"aom_window": (10.0, 5.0)},
        {"aom_ramp": -0.1},
    ])
    def test_invalid_chain(self, kwargs):
        with pytest.raises(NoiseModelError):
            FilterChainParams(**kwargs)

    @pytest.mark.parametrize("kwargs", [
        {"fid_photons_per_pulse": -1.0},
        {"fluor_lifetime": 0.0},
        {"oreo_gain_c1": 0.5},
    ])
    def test_invalid_sources(self, kwargs):
        with pytest.raises(NoiseModelError):
            NoiseSourceParams(**kwargs)


class TestFluxTimeline:
    def test_integral(self):
        flux = FluxTimeline("flat", np.linspace(0.0, 10.0, 101), np.full(101, 2.0))
        assert flux.integral(2.0, 5.0) == pytest.approx(6.0)
        assert flux.total() == pytest.approx(20.0)
        assert flux.scaled(0.5).total() == pytest.approx(10.0)

    def test_shape_mismatch(self):
        with pytest.raises(NoiseModelError):
            FluxTimeline("bad", np.arange(5.0), np.arange(4.0))

    def test_sum(self):
        times = np.linspace(0.0, 1.0, 11)
        total = sum_fluxes([FluxTimeline("a", times, np.ones(11)), FluxTimeline("b", times, np.ones(11))])
        assert np.allclose(total.flux, 2.0)
        assert total.in_detection_mode

    def test_sum_needs_shared_axis(self):
        first = FluxTimeline("a", np.linspace(0.0, 1.0, 11), np.ones(11))
        second = FluxTimeline("b", np.linspace(0.0, 2.0, 11), np.ones(11))
        with pytest.raises(NoiseModelError):
            sum_fluxes([first, second])
        with pytest.raises(NoiseModelError):
            sum_fluxes([])


class TestEmission:
    def test_no_control_pulses(self, grid, timeline):
        fluxes = emit_noise(timeline, NoiseSourceParams(), grid.times, include_c1=False, include_c2=False)
        assert [flux.label for flux in fluxes] == ["fluorescence", "fid", "oreo", "scatter"]
        assert all(flux.total() == 0.0 for flux in fluxes)

    def test_oreo_with_read_pulse_only(self, grid):
        timeline = schedule(6.0, 21.0, 3.0)
        sources = NoiseSourceParams(oreo_amplitude_c2=4.0)
        oreo = emit_noise(timeline, sources, grid.times, include_c1=False)[2]
        assert grid.times[np.argmax(oreo.flux)] == pytest.approx(30.0)
        assert oreo.total() == pytest.approx(4.0, rel=1e-3)

    def test_oreo_strengthened_by_write_pulse(self, grid, timeline):
        sources = NoiseSourceParams(oreo_amplitude_c2=4.0, oreo_gain_c1=2.0)
        oreo = emit_noise(timeline, sources, grid.times)[2]
        assert oreo.total() == pytest.approx(8.0, rel=1e-3)

    def test_no_oreo_without_read_pulse(self, grid, timeline):
        oreo = emit_noise(timeline, NoiseSourceParams(), grid.times, include_c2=False)[2]
        assert oreo.total() == 0.0

    def test_fid_starts_at_each_pulse(self, grid, timeline):
        fid = emit_noise(timeline, NoiseSourceParams(), grid.times)[1]
        assert fid.integral(-10.0, timeline.t_c1 - 0.05) == 0.0
        assert fid.integral(timeline.t_c1, timeline.t_c1 + 20.0) == pytest.approx(16.2, rel=0.01)
        assert fid.detuning == 35.4

    def test_oreo_outside_echo_window(self):
        rng = np.random.default_rng(5)
        halfwidth = 1.5
        for _ in range(200):
            delay = rng.uniform(4.0, 12.0)
            timeline = schedule(delay, rng.uniform(5.0, 40.0), rng.uniform(halfwidth + 0.01, delay - 0.01))
            start, end = timeline.echo_window(halfwidth)
            assert not start <= timeline.t_oreo <= end


class TestBudget:
    def test_fid_attenuated_by_cavity(self, budget):
        fid = budget.source("fid")
        assert fid.stages["fp"] == pytest.approx(1.11e-2, rel=0.01)
        assert fid.stages["spatial"] == 0.05
        assert fid.stages["aom"] == pytest.approx(1.0)
        assert budget.source("oreo").stages["fp"] == 1.0

    def test_fid_dominates(self, budget):
        fid = budget.source("fid").detector
        assert fid == pytest.approx(5.44e-3, rel=0.02)
        others = [budget.source(label).detector for label in ("fluorescence", "oreo", "scatter")]
        assert all(fid > value for value in others)

    def test_default_floor(self, budget):
        assert budget.total_noise_floor == pytest.approx(7.1e-3, abs=2.3e-3)
        assert budget.dark_equivalent == DARK

    def test_detector_never_exceeds_crystal(self, budget):
        for entry in budget.sources:
            assert entry.detector <= entry.crystal * (1 + 1e-12)

    def test_scatter_gated_out(self, grid, timeline, chain_params, budget):
        scatter = budget.source("scatter")
        assert scatter.crystal == 0.0
        crystal_total = emit_noise(timeline, NoiseSourceParams(), grid.times)[3].total()
        assert scatter.detector_cycle_total <= crystal_total * 0.05 * 1e-6 * (1 + 1e-9)
        assert scatter.detector_cycle_total > 0

    def test_removing_cavity(self, grid, timeline, chain_params, budget):
        fluxes = emit_noise(timeline, NoiseSourceParams(), grid.times)
        _, open_budget = NoiseFilterChain(chain_params).without_fp().apply(fluxes, WINDOW, dark_equivalent=DARK)
        ratio = open_budget.source("fid").detector / budget.source("fid").detector
        assert ratio == pytest.approx(1.0 / fp_transmission(35.4, 7.5), rel=1e-6)
        assert ratio == pytest.approx(90.0, rel=0.05)
        assert open_budget.total_noise_floor > 10 * budget.total_noise_floor

    def test_transmit_is_product_of_stages(self, grid, timeline, chain_params):
        chain = NoiseFilterChain(chain_params)
        fid = emit_noise(timeline, NoiseSourceParams(), grid.times)[1]
        factors = chain.stage_factors(fid)
        gate = aom_gate(fid.times, chain_params.aom_window)
        expected = fid.flux * gate * factors["fp"] * factors["grating"] * factors["spatial"]
        assert np.allclose(chain.transmit(fid).flux, expected)

    def test_spatial_stage_spares_detection_mode(self, grid, timeline, chain_params):
        chain = NoiseFilterChain(chain_params)
        fluxes = {flux.label: flux for flux in emit_noise(timeline, NoiseSourceParams(), grid.times)}
        oreo = fluxes["oreo"]
        assert oreo.in_detection_mode
        assert chain.stage_factors(oreo)["spatial"] == 1.0
        moved = replace(oreo, in_detection_mode=False)
        assert chain.stage_factors(moved)["spatial"] == chain_params.spatial_suppression
        ratio = chain.transmit(moved).total() / chain.transmit(oreo).total()
        assert ratio == pytest.approx(chain_params.spatial_suppression)

    def test_to_dict(self, budget):
        data = budget.to_dict()
        assert data["window_us"] == [25.5, 28.5]
        assert set(data["sources"]) == {"fluorescence", "fid", "oreo", "scatter"}
        assert data["total_noise_floor"] == pytest.approx(budget.total_noise_floor)


class TestCalibration:
    def test_hits_target(self, grid, timeline, chain_params):
        sources = calibrate_noise_sources(
            NoiseSourceParams(), timeline, chain_params, WINDOW, 7.1e-3, grid.times, dark_equivalent=DARK,
        )
        _, budget = apply_chain(emit_noise(timeline, sources, grid.times), chain_params, WINDOW, DARK)
        assert budget.total_noise_floor == pytest.approx(7.1e-3, rel=1e-9)
        assert sources.oreo_amplitude_c2 == NoiseSourceParams().oreo_amplitude_c2

    def test_single_run_floor(self, grid, timeline, chain_params):
        sources = calibrate_noise_sources(
            NoiseSourceParams(), timeline, chain_params, WINDOW, 5.1e-3, grid.times, dark_equivalent=DARK,
        )
        assert sources.fid_photons_per_pulse < NoiseSourceParams().fid_photons_per_pulse

    def test_target_below_other_sources(self, grid, timeline, chain_params):
        with pytest.raises(NoiseModelError, match="already exceeds"):
            calibrate_noise_sources(
                NoiseSourceParams(), timeline, chain_params, WINDOW, 1e-3, grid.times, dark_equivalent=DARK,
            )

    def test_needs_fid(self, grid, timeline, chain_params):
        silent = replace(NoiseSourceParams(), fid_photons_per_pulse=0.0)
        with pytest.raises(NoiseModelError, match="FID"):
            calibrate_noise_sources(silent, timeline, chain_params, WINDOW, 7.1e-3, grid.times)
