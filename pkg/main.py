"""
main.py - Entry point for the AFC spin-wave memory simulator

This file orchestrates the experiment presets:
1. fig2-storage: weak-pulse storage histograms, noise and dark references, OREO
2. fig2d-snr: SNR versus mean photon number with a linear fit
3. fig3-visibility: double-write time-bin interference and visibility fits
4. bright-characterization: comb, AFC echo, spin-wave echo and T_S decay

Usage:
    afcsim run fig2d-snr --config my.json --seed 7 --out results
    afcsim validate --config my.json
    afcsim list-presets
"""

from dataclasses import dataclass, replace
from typing import Any, Callable, Dict, List, Optional, Tuple
import argparse
import json
import logging
import math
import os
import sys

import numpy as np

import config
from afc_lib import (
    CombParams, ProtocolTimeline, SpectralGrid, SpectralProfile, TemporalEnvelope,
    analytic_afc_efficiency, apply_write_read, build_transfer, default_echo_halfwidth,
    extract_echo, fit_spin_linewidth, gaussian_pulse, memory_time, photon_counting_transfer_efficiency,
    prepare_comb, propagate, schedule, spin_dephasing, storage_time_scan, window_energy,
)
from src.services.detection import (
    DetectorParams, StorageCycle, block_rng, coherence_visibility, estimate_snr, expected_visibility,
    fit_visibility, simulate_counts, simulate_phase_jitter_visibility, simulate_visibility_scan, snr_scan,
)
from src.services.experiment_config import (
    ConfigError, ExperimentConfig, UnknownPresetError, canonical_json, content_hash, load_config,
)
from src.services.filter_chain import (
    FluxTimeline, NoiseBudget, NoiseFilterChain, calibrate_noise_sources, emit_noise, sum_fluxes,
)
from src.services.reporting import report_metadata, write_json, write_table


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INTERRUPTED = 1
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3


# =============================================================================
# Logging Setup
# =============================================================================

def setup_logging():
    """Configure the root logger (file + stdout)."""
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format=config.LOG_FORMAT,
        handlers=[
            logging.FileHandler(config.LOG_FILE),
            logging.StreamHandler(sys.stdout)
        ]
    )


# =============================================================================
# Simulation Pipeline
# =============================================================================

@dataclass(frozen=True)
class OpticalRun:
    """A unit-photon input propagated through the configured comb."""

    grid: SpectralGrid
    comb: CombParams
    profile: SpectralProfile
    pulse: TemporalEnvelope
    bare: TemporalEnvelope
    timeline: ProtocolTimeline
    window: Tuple[float, float]


def simulate_optics(cfg: ExperimentConfig, storage_time: Optional[float] = None) -> OpticalRun:
    """Prepare the comb and propagate a unit input pulse through it."""
    grid = cfg.spectral_grid()
    comb = cfg.comb_params()
    profile = prepare_comb(comb, grid, max_depth=cfg.max_depth_per_pass)
    transfer = build_transfer(profile, pass_count=cfg.comb.pass_count)
    pulse = gaussian_pulse(
        grid, cfg.input.center_us, cfg.input.fwhm_us, 1.0, cfg.input.carrier_detuning_mhz,
    )
    timeline = cfg.protocol_timeline(storage_time)
    return OpticalRun(
        grid=grid,
        comb=comb,
        profile=profile,
        pulse=pulse,
        bare=propagate(pulse, transfer),
        timeline=timeline,
        window=timeline.echo_window(cfg.detection.window_halfwidth_us),
    )


def dark_equivalent(detector: DetectorParams, window: Tuple[float, float]) -> float:
    """Dark counts in a window expressed as photons at the detector."""
    if detector.quantum_efficiency == 0:
        logger.warning("Quantum efficiency is zero; dark counts have no photon equivalent")
        return 0.0
    return detector.dark_rate * (window[1] - window[0]) / detector.quantum_efficiency


def build_noise(
    cfg: ExperimentConfig,
    run: OpticalRun,
    target_floor: Optional[float] = None,
    include_c1: bool = True
) -> Tuple[List[FluxTimeline], NoiseBudget, NoiseFilterChain]:
    """
    Detector-plane noise fluxes and their budget in the echo window.

    With a target floor, the FID magnitude is calibrated first so the
    budget total (dark counts included) equals the target.
    """
    filter_params = cfg.filter_params(run.timeline)
    chain = NoiseFilterChain(filter_params)
    times = run.grid.times
    dark = dark_equivalent(cfg.detector_params(), run.window)

    sources = cfg.noise_sources()
    if target_floor is not None:
        sources = calibrate_noise_sources(
            sources, run.timeline, filter_params, run.window, target_floor, times, dark_equivalent=dark,
        )
    fluxes = emit_noise(run.timeline, sources, times, include_c1=include_c1)
    detected, budget = chain.apply(fluxes, run.window, dark_equivalent=dark)
    return detected, budget, chain


def build_storage_cycle(
    cfg: ExperimentConfig,
    target_floor: Optional[float] = None
) -> Tuple[StorageCycle, NoiseBudget, Dict[str, float]]:
    """
    Detector-plane signal (per input photon) and noise of one storage cycle.

    The transfer efficiency is reduced to the photon-counting value so the
    in-window spin-wave echo efficiency equals the configured global figure.
    """
    run = simulate_optics(cfg)
    spin = cfg.spin_params()

    unit = apply_write_read(run.bare, run.timeline, replace(spin, transfer_efficiency=1.0))
    unit_efficiency = window_energy(unit, *run.window)
    transfer = photon_counting_transfer_efficiency(cfg.detection.photon_counting_efficiency, unit_efficiency)
    retrieved = apply_write_read(run.bare, run.timeline, replace(spin, transfer_efficiency=transfer))

    detected, budget, chain = build_noise(cfg, run, target_floor=target_floor)
    signal = chain.transmit(FluxTimeline(
        "signal", run.grid.times, retrieved.intensity,
        detuning=cfg.input.carrier_detuning_mhz, in_detection_mode=True,
    ))
    cycle = StorageCycle(
        signal_per_photon=signal,
        noise=sum_fluxes(detected, label="noise"),
        signal_window=run.window,
    )
    info = {
        "photon_counting_transfer_efficiency": transfer,
        "signal_efficiency_in_window": signal.integral(*run.window),
        "echo_time_us": run.timeline.t_echo,
        "oreo_time_us": run.timeline.t_oreo,
    }
    return cycle, budget, info


def preset_metadata(cfg: ExperimentConfig, preset: str) -> Dict[str, Any]:
    config_dict = json.loads(canonical_json(cfg.to_dict()))
    return report_metadata(config_dict, cfg.seed, content_hash(canonical_json(config_dict)), preset)


def _timeline_dict(timeline: ProtocolTimeline) -> Dict[str, float]:
    return {
        "t_input": timeline.t_input,
        "t_c1": timeline.t_c1,
        "t_c2": timeline.t_c2,
        "t_echo": timeline.t_echo,
        "t_oreo": timeline.t_oreo,
        "afc_delay": timeline.afc_delay,
        "storage_time": timeline.storage_time,
    }


# =============================================================================
# Preset 1: Weak-Pulse Storage (fig2-storage)
# =============================================================================

def preset_fig2_storage(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """
    Storage histograms for weak coherent inputs plus their references.

    Runs (one random stream each): every configured n-bar, the no-input
    noise, detector dark counts only, and the noise with C2 alone (OREO).
    """
    files = config.get_preset_config("fig2-storage")
    metadata = preset_metadata(cfg, "fig2-storage")
    detector = cfg.detector_params()

    cycle, budget, info = build_storage_cycle(cfg, target_floor=cfg.detection.single_run_noise_floor)
    logger.info(f"Noise floor in echo window: {budget.total_noise_floor:.3e} photons/mode")

    run = simulate_optics(cfg)
    oreo_fluxes, _, _ = build_noise(cfg, run, include_c1=False)
    oreo_flux = sum_fluxes(oreo_fluxes, label="c2-only")
    dark_flux = cycle.noise.with_flux(np.zeros_like(cycle.noise.flux))

    photon_numbers = cfg.detection.storage_photon_numbers
    runs = [cycle.detector_flux(n_bar) for n_bar in photon_numbers] + [cycle.noise, dark_flux, oreo_flux]
    hists = [simulate_counts(flux, detector, stream=index) for index, flux in enumerate(runs)]
    noise_hist = hists[len(photon_numbers)]

    columns = ["time_us"] + [f"signal_n{n:g}" for n in photon_numbers] + ["noise_no_input", "dark_only", "c2_only"]
    table = np.column_stack([hists[0].centers] + [h.counts for h in hists])
    paths = [write_table(os.path.join(out_dir, files["histogram_file"]), columns, table, metadata)]

    input_mask = (run.grid.times >= detector.histogram_range[0]) & (run.grid.times <= detector.histogram_range[1])
    input_table = np.column_stack([
        run.grid.times[input_mask],
        run.pulse.intensity[input_mask],
    ])
    paths.append(write_table(
        os.path.join(out_dir, files["input_trace_file"]),
        ["time_us", "input_flux_per_photon"], input_table, metadata,
    ))

    snr = {}
    for n_bar, hist in zip(photon_numbers, hists):
        estimate = estimate_snr(hist, cycle.signal_window, cycle.signal_window, reference=noise_hist)
        snr[f"{n_bar:g}"] = {"snr": estimate.snr, "error": estimate.error}
        logger.info(f"n={n_bar:g}: SNR {estimate.snr:.2f} +/- {estimate.error:.2f}")

    oreo_window_counts = hists[-1].window_counts((run.timeline.t_oreo - 1.5, run.timeline.t_oreo + 1.5))
    paths.append(write_json(
        os.path.join(out_dir, files["budget_file"]), {"metadata": metadata, "budget": budget.to_dict()},
    ))
    summary = {
        "preset": "fig2-storage",
        "metadata": metadata,
        "timeline": _timeline_dict(run.timeline),
        "noise_floor": budget.total_noise_floor,
        "snr": snr,
        "oreo_counts_c2_only": oreo_window_counts,
        **info,
    }
    paths.append(write_json(os.path.join(out_dir, files["summary_file"]), summary))
    summary["files"] = paths
    return summary


# =============================================================================
# Preset 2: SNR Scan (fig2d-snr)
# =============================================================================

def preset_fig2d_snr(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """SNR versus n-bar against the calibrated global noise floor."""
    files = config.get_preset_config("fig2d-snr")
    metadata = preset_metadata(cfg, "fig2d-snr")

    cycle, budget, info = build_storage_cycle(cfg, target_floor=cfg.detection.noise_floor_target)
    result = snr_scan(
        cfg.detection.snr_photon_numbers, cycle, cfg.detector_params(),
        reference_trials_factor=cfg.detection.reference_trials_factor,
    )
    expected_slope = info["signal_efficiency_in_window"] / budget.total_noise_floor
    logger.info(
        f"SNR slope {result.slope:.3f} +/- {result.slope_error:.3f} "
        f"(expected {expected_slope:.3f}), R^2 = {result.r_squared:.4f}"
    )

    table = np.array([[p.mean_photon_number, p.snr, p.error] for p in result.points])
    paths = [
        write_table(os.path.join(out_dir, files["scan_file"]), ["mean_photon_number", "snr", "snr_error"], table, metadata),
        write_json(os.path.join(out_dir, files["budget_file"]), {"metadata": metadata, "budget": budget.to_dict()}),
    ]
    summary = {
        "preset": "fig2d-snr",
        "metadata": metadata,
        "points": [
            {"mean_photon_number": p.mean_photon_number, "snr": p.snr, "error": p.error}
            for p in result.points
        ],
        "slope": result.slope,
        "slope_error": result.slope_error,
        "r_squared": result.r_squared,
        "expected_slope": expected_slope,
        "noise_floor": budget.total_noise_floor,
        **info,
    }
    paths.append(write_json(os.path.join(out_dir, files["summary_file"]), summary))
    summary["files"] = paths
    return summary


# =============================================================================
# Preset 3: Time-Bin Visibility (fig3-visibility)
# =============================================================================

def preset_fig3_visibility(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """Double-write interference scans and visibility fits per n-bar."""
    files = config.get_preset_config("fig3-visibility")
    metadata = preset_metadata(cfg, "fig3-visibility")
    timebin = cfg.timebin
    cycle = cfg.timebin_config()
    detector = cfg.detector_params()
    separation = timebin.bin_separation_us

    timeline = schedule(timebin.afc_delay_us, timebin.storage_time_us, cfg.timeline.c1_offset_us)
    phases = np.linspace(0.0, 2.0 * math.pi, timebin.phase_points)

    baseline = coherence_visibility(timebin.sigma_f_khz, separation)
    jitter = simulate_phase_jitter_visibility(
        timebin.sigma_f_khz, separation, timebin.jitter_samples, block_rng(cfg.seed, len(timebin.photon_numbers) + 1),
    )
    logger.info(f"Phase-noise baseline: V = {baseline:.4f} (closed form), {jitter:.4f} (Monte Carlo)")

    noise_equivalent = cycle.noise_per_bin + dark_equivalent(detector, (0.0, cycle.detection_window))
    paths = []
    fits = []
    for index, n_bar in enumerate(timebin.photon_numbers):
        scan = simulate_visibility_scan(
            phases, separation, n_bar, timebin.sigma_f_khz, cycle, detector, stream=index + 1,
        )
        fit = fit_visibility(phases, scan.middle_counts, timebin.bootstrap_resamples, seed=cfg.seed)
        expected = expected_visibility(
            timebin.sigma_f_khz, separation, cycle.storage_efficiency * n_bar, noise_equivalent,
        )
        logger.info(f"n={n_bar:g}: V = {fit.visibility:.3f} +/- {fit.visibility_error:.3f} (expected {expected:.3f})")

        table = np.column_stack([phases, scan.block_counts.sum(axis=1)])
        name = files["scan_file_pattern"].format(n_bar=n_bar)
        paths.append(write_table(
            os.path.join(out_dir, name), ["phase_rad", "early", "middle", "late"], table, metadata,
        ))
        fits.append({
            "mean_photon_number": n_bar,
            "visibility": fit.visibility,
            "visibility_error": fit.visibility_error,
            "phase_offset": fit.phase_offset,
            "expected_visibility": expected,
        })

    summary = {
        "preset": "fig3-visibility",
        "metadata": metadata,
        "timeline": _timeline_dict(timeline),
        "coherence_visibility": baseline,
        "jitter_visibility": jitter,
        "fits": fits,
    }
    paths.append(write_json(os.path.join(out_dir, files["summary_file"]), summary))
    summary["files"] = paths
    return summary


# =============================================================================
# Preset 4: Bright-Pulse Characterization
# =============================================================================

def preset_bright_characterization(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """AFC and spin-wave echo efficiencies, timing and the T_S decay."""
    files = config.get_preset_config("bright-characterization")
    metadata = preset_metadata(cfg, "bright-characterization")
    storage_time = cfg.characterization.storage_time_us

    run = simulate_optics(cfg, storage_time=storage_time)
    spin = cfg.spin_params()
    halfwidth = default_echo_halfwidth(cfg.input.fwhm_us, run.grid.dt)

    analytic = analytic_afc_efficiency(run.comb, pass_count=cfg.comb.pass_count)
    echo = extract_echo(run.bare, run.timeline.bare_echo_time, halfwidth, input_envelope=run.pulse)
    logger.info(
        f"AFC echo at {echo.echo_time:.2f} us: efficiency {echo.echo_efficiency:.4f} "
        f"(analytic {analytic:.4f}), finesse {run.comb.finesse:.3f}"
    )

    retrieved = apply_write_read(run.bare, run.timeline, spin)
    spinwave = window_energy(retrieved, run.timeline.t_echo - halfwidth, run.timeline.t_echo + halfwidth)
    logger.info(f"Spin-wave echo at {run.timeline.t_echo:.1f} us: efficiency {spinwave:.4f}")

    scan_times = cfg.characterization.storage_scan_us
    decay = storage_time_scan(echo.echo_efficiency, spin, scan_times)
    linewidth, linewidth_error, _ = fit_spin_linewidth(scan_times, decay)

    frequencies = run.grid.frequencies
    paths = [write_table(
        os.path.join(out_dir, files["comb_file"]),
        ["detuning_mhz", "optical_depth"],
        np.column_stack([frequencies, run.profile.depth]), metadata,
    )]
    lo, hi = cfg.detector.histogram_start_us, cfg.detector.histogram_end_us
    mask = (run.grid.times >= lo) & (run.grid.times <= hi)
    paths.append(write_table(
        os.path.join(out_dir, files["echo_file"]),
        ["time_us", "input", "afc_output", "spinwave_output"],
        np.column_stack([
            run.grid.times[mask], run.pulse.intensity[mask],
            run.bare.intensity[mask], retrieved.intensity[mask],
        ]),
        metadata,
    ))
    paths.append(write_table(
        os.path.join(out_dir, files["decay_file"]),
        ["storage_time_us", "efficiency"],
        np.column_stack([scan_times, decay]), metadata,
    ))

    summary = {
        "preset": "bright-characterization",
        "metadata": metadata,
        "finesse": run.comb.finesse,
        "afc_efficiency_analytic": analytic,
        "afc_efficiency_numeric": echo.echo_efficiency,
        "afc_echo_time_us": echo.echo_time,
        "transmitted_fraction": echo.transmitted_fraction,
        "spinwave_efficiency": spinwave,
        "spin_dephasing": spin_dephasing(spin.linewidth, storage_time),
        "memory_time_us": memory_time(spin.linewidth),
        "fitted_linewidth_khz": linewidth,
        "fitted_linewidth_error_khz": linewidth_error,
        "timeline": _timeline_dict(run.timeline),
        "echo_times_us": {
            f"{delay:g}": schedule(delay, cfg.timeline.storage_time_us, min(cfg.timeline.c1_offset_us, delay / 2)).t_echo
            for delay in (6.0, 8.0)
        },
    }
    paths.append(write_json(os.path.join(out_dir, files["summary_file"]), summary))
    summary["files"] = paths
    return summary


PRESET_RUNNERS: Dict[str, Callable[[ExperimentConfig, str], Dict[str, Any]]] = {
    "fig2-storage": preset_fig2_storage,
    "fig2d-snr": preset_fig2d_snr,
    "fig3-visibility": preset_fig3_visibility,
    "bright-characterization": preset_bright_characterization,
}


def run_preset(name: str, cfg: ExperimentConfig, out_dir: Optional[str] = None) -> Dict[str, Any]:
    """
    Run a named preset and write its report bundle.

    Args:
        name: Preset name (see config.PRESETS)
        cfg: Validated configuration
        out_dir: Output root; files go to <out_dir>/<name>/

    Returns:
        dict: The preset summary, including the list of files written

    Raises:
        UnknownPresetError: If the preset does not exist
    """
    if name not in PRESET_RUNNERS:
        raise UnknownPresetError(name)

    target = os.path.join(out_dir or cfg.output_dir, name)
    logger.info("=" * 80)
    logger.info(f"Starting preset {name} (seed {cfg.seed})")
    logger.info("=" * 80)

    summary = PRESET_RUNNERS[name](replace(cfg, preset=name), target)
    logger.info(f"Preset {name} completed: {len(summary['files'])} files in {target}")
    return summary


# =============================================================================
# Commands
# =============================================================================

def report_config_error(violations: List[str]):
    """Machine-readable config error report on stderr."""
    sys.stderr.write(json.dumps({"status": "config_error", "errors": violations}, indent=2) + "\n")


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError([f"seed outside [0, 2^64) (got {args.seed})"])
            cfg = cfg.with_seed(args.seed)
        run_preset(args.preset, cfg, args.out)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        report_config_error(e.violations)
        return EXIT_CONFIG_ERROR
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as e:
        report_config_error(e.violations)
        return EXIT_CONFIG_ERROR
    print(json.dumps({"status": "ok", "content_hash": cfg.content_hash()}))
    return EXIT_OK


def cmd_list_presets(args) -> int:
    for name, description in config.PRESETS.items():
        print(f"{name:<26}{description}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the simulator."""
    parser = argparse.ArgumentParser(
        prog="afcsim",
        description="AFC spin-wave quantum memory simulator",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Presets:
  fig2-storage             Weak-pulse storage histograms and noise references
  fig2d-snr                SNR versus mean photon number
  fig3-visibility          Time-bin interference visibility
  bright-characterization  Echo efficiencies, timing and spin-wave decay

Exit codes: 0 success, 2 configuration error, 3 runtime error
        """
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run an experiment preset")
    run_parser.add_argument("preset", help="Preset name (see list-presets)")
    run_parser.add_argument("--config", default=None, help="JSON config file (defaults if omitted)")
    run_parser.add_argument("--seed", type=int, default=None, help="Root seed, 0 <= seed < 2^64")
    run_parser.add_argument("--out", default=None, help="Output directory")
    run_parser.set_defaults(handler=cmd_run)

    validate_parser = subparsers.add_parser("validate", help="Validate a config file")
    validate_parser.add_argument("--config", required=True, help="JSON config file")
    validate_parser.set_defaults(handler=cmd_validate)

    list_parser = subparsers.add_parser("list-presets", help="List experiment presets")
    list_parser.set_defaults(handler=cmd_list_presets)

    args = parser.parse_args(argv)
    setup_logging()

    try:
        return args.handler(args)
    except KeyboardInterrupt:
        logger.info("Run interrupted by user")
        return EXIT_INTERRUPTED
    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        return EXIT_RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
