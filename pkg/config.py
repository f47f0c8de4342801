"""
config.py - Configuration for the AFC spin-wave memory simulator

This file contains all configuration data for the simulator:
- Run environment (log level and file, output directory, default seed)
- Physical defaults for every module (grid, comb, spin, noise, detector)
- Experiment presets and the parameters each preset owns

Contains NO simulation logic - purely configuration data.
"""

import copy
import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# =============================================================================
# Run Environment
# =============================================================================

LOG_LEVEL = os.getenv("AFCSIM_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("AFCSIM_LOG_FILE", "afcsim.log")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

OUTPUT_DIR = os.getenv("AFCSIM_OUTPUT_DIR", "results")
DEFAULT_SEED = int(os.getenv("AFCSIM_SEED", "2013"))

# =============================================================================
# Spectral Grid
# =============================================================================

# 20 MHz span, 2^14 points: 1.22 kHz resolution, 819.2 us time window
GRID_SPAN_MHZ = 20.0
GRID_POINTS = 2 ** 14

# =============================================================================
# Input Pulse
# =============================================================================

INPUT_FWHM_US = 2.0
INPUT_CENTER_US = 0.0
INPUT_CARRIER_DETUNING_MHZ = 0.0

# =============================================================================
# AFC Comb
# =============================================================================

AFC_DELAY_US = 6.0
# None selects the finesse that maximizes the analytic efficiency
COMB_FINESSE = None
# Per pass; two passes give the total optical depth of 2.4
COMB_PEAK_DEPTH = 1.2
COMB_BACKGROUND_DEPTH = 0.0
COMB_TOOTH_SHAPE = "square"
COMB_BANDWIDTH_MHZ = 8.0
COMB_BROADENING_SIGMA_KHZ = 30.0
MAX_OPTICAL_DEPTH = 2.4
PASS_COUNT = 2

# =============================================================================
# Spin Transition and Protocol Timing
# =============================================================================

SPIN_LINEWIDTH_KHZ = 8.0
SPIN_COHERENCE_TIME_MS = 15.0
TRANSFER_EFFICIENCY = 0.49

STORAGE_TIME_US = 21.0
C1_OFFSET_US = 4.0

# =============================================================================
# Noise Sources (crystal plane, per control pulse)
# =============================================================================

FLUOR_PHOTONS_PER_PULSE = 425.0
FLUOR_LIFETIME_US = 1900.0
FLUOR_SPECTRAL_WIDTH_MHZ = 500.0
# Detector-plane floor in the echo window comes out near 7.1e-3, FID dominant
FID_PHOTONS_PER_PULSE = 16.2
FID_DECAY_US = 2.0
CONTROL_DETUNING_MHZ = 35.4
OREO_AMPLITUDE_C2 = 0.2
OREO_GAIN_C1 = 2.0
OREO_FWHM_US = 2.0
SCATTER_PHOTONS_PER_PULSE = 1.0e8
CONTROL_DURATION_US = 0.6

# =============================================================================
# Filter Chain
# =============================================================================

SPATIAL_SUPPRESSION = 0.05
GRATING_PASSBAND_MHZ = 1.0e5
GRATING_STOP_TRANSMISSION = 1e-3
FP_FWHM_MHZ = 7.5
FP_CENTER_DETUNING_MHZ = 0.0
AOM_GUARD_US = 0.5
AOM_GATE_LENGTH_US = 15.0
AOM_OFF_TRANSMISSION = 1e-6
AOM_RAMP_US = 0.0

# =============================================================================
# Detector and Detection
# =============================================================================

QUANTUM_EFFICIENCY = 0.6
DARK_RATE_PER_US = 1e-5
TIME_BIN_US = 0.1
TRIALS = 100_000
BLOCK_SIZE = 1000
HISTOGRAM_RANGE_US = (-5.0, 45.0)

ECHO_WINDOW_HALFWIDTH_US = 1.5
PHOTON_COUNTING_EFFICIENCY = 3.8e-3
NOISE_FLOOR_TARGET = 7.1e-3
SINGLE_RUN_NOISE_FLOOR = 5.1e-3
SNR_PHOTON_NUMBERS = [2.5, 5.0, 11.2]
STORAGE_PHOTON_NUMBERS = [2.5, 11.2]
REFERENCE_TRIALS_FACTOR = 10

# =============================================================================
# Time-Bin Interference
# =============================================================================

TIMEBIN_AFC_DELAY_US = 8.0
TIMEBIN_STORAGE_TIME_US = 21.0
TIMEBIN_SEPARATION_US = 2.0
TIMEBIN_PULSE_FWHM_US = 0.8
TIMEBIN_STORAGE_EFFICIENCY = 6.3e-4
TIMEBIN_SIGMA_F_KHZ = 25.0
TIMEBIN_PHOTON_NUMBERS = [176.0, 51.0]
TIMEBIN_PHASE_POINTS = 13
TIMEBIN_NOISE_PER_BIN = 5.1e-3
BOOTSTRAP_RESAMPLES = 200
JITTER_SAMPLES = 200_000

# =============================================================================
# Bright-Pulse Characterization
# =============================================================================

CHARACTERIZATION_STORAGE_TIME_US = 18.0
STORAGE_SCAN_US = [5.0, 10.0, 18.0, 25.0, 35.0, 45.0, 60.0]


def default_config():
    """
    Build the nested default parameter tree.

    The tree mirrors the on-disk JSON config file; a partial file is
    deep-merged over it.

    Returns:
        dict: Fresh copy of the defaults (safe to mutate)
    """
    tree = {
        "grid": {
            "span_mhz": GRID_SPAN_MHZ,
            "n_points": GRID_POINTS,
        },
        "input": {
            "fwhm_us": INPUT_FWHM_US,
            "center_us": INPUT_CENTER_US,
            "carrier_detuning_mhz": INPUT_CARRIER_DETUNING_MHZ,
        },
        "comb": {
            "afc_delay_us": AFC_DELAY_US,
            "finesse": COMB_FINESSE,
            "peak_depth": COMB_PEAK_DEPTH,
            "background_depth": COMB_BACKGROUND_DEPTH,
            "tooth_shape": COMB_TOOTH_SHAPE,
            "bandwidth_mhz": COMB_BANDWIDTH_MHZ,
            "broadening_sigma_khz": COMB_BROADENING_SIGMA_KHZ,
            "max_depth": MAX_OPTICAL_DEPTH,
            "pass_count": PASS_COUNT,
        },
        "spin": {
            "linewidth_khz": SPIN_LINEWIDTH_KHZ,
            "coherence_time_ms": SPIN_COHERENCE_TIME_MS,
            "transfer_efficiency": TRANSFER_EFFICIENCY,
        },
        "timeline": {
            "storage_time_us": STORAGE_TIME_US,
            "c1_offset_us": C1_OFFSET_US,
        },
        "noise": {
            "fluor_photons_per_pulse": FLUOR_PHOTONS_PER_PULSE,
            "fluor_lifetime_us": FLUOR_LIFETIME_US,
            "fluor_spectral_width_mhz": FLUOR_SPECTRAL_WIDTH_MHZ,
            "fid_photons_per_pulse": FID_PHOTONS_PER_PULSE,
            "fid_decay_us": FID_DECAY_US,
            "control_detuning_mhz": CONTROL_DETUNING_MHZ,
            "oreo_amplitude_c2": OREO_AMPLITUDE_C2,
            "oreo_gain_c1": OREO_GAIN_C1,
            "oreo_fwhm_us": OREO_FWHM_US,
            "scatter_photons_per_pulse": SCATTER_PHOTONS_PER_PULSE,
            "control_duration_us": CONTROL_DURATION_US,
        },
        "filters": {
            "spatial_suppression": SPATIAL_SUPPRESSION,
            "grating_passband_mhz": GRATING_PASSBAND_MHZ,
            "grating_stop_transmission": GRATING_STOP_TRANSMISSION,
            "fp_fwhm_mhz": FP_FWHM_MHZ,
            "fp_center_detuning_mhz": FP_CENTER_DETUNING_MHZ,
            "aom_guard_us": AOM_GUARD_US,
            "aom_gate_length_us": AOM_GATE_LENGTH_US,
            "aom_off_transmission": AOM_OFF_TRANSMISSION,
            "aom_ramp_us": AOM_RAMP_US,
            "use_fp": True,
        },
        "detector": {
            "quantum_efficiency": QUANTUM_EFFICIENCY,
            "dark_rate_per_us": DARK_RATE_PER_US,
            "time_bin_us": TIME_BIN_US,
            "trials": TRIALS,
            "block_size": BLOCK_SIZE,
            "histogram_start_us": HISTOGRAM_RANGE_US[0],
            "histogram_end_us": HISTOGRAM_RANGE_US[1],
        },
        "detection": {
            "window_halfwidth_us": ECHO_WINDOW_HALFWIDTH_US,
            "photon_counting_efficiency": PHOTON_COUNTING_EFFICIENCY,
            "noise_floor_target": NOISE_FLOOR_TARGET,
            "single_run_noise_floor": SINGLE_RUN_NOISE_FLOOR,
            "snr_photon_numbers": list(SNR_PHOTON_NUMBERS),
            "storage_photon_numbers": list(STORAGE_PHOTON_NUMBERS),
            "reference_trials_factor": REFERENCE_TRIALS_FACTOR,
        },
        "timebin": {
            "afc_delay_us": TIMEBIN_AFC_DELAY_US,
            "storage_time_us": TIMEBIN_STORAGE_TIME_US,
            "bin_separation_us": TIMEBIN_SEPARATION_US,
            "pulse_fwhm_us": TIMEBIN_PULSE_FWHM_US,
            "storage_efficiency": TIMEBIN_STORAGE_EFFICIENCY,
            "sigma_f_khz": TIMEBIN_SIGMA_F_KHZ,
            "photon_numbers": list(TIMEBIN_PHOTON_NUMBERS),
            "phase_points": TIMEBIN_PHASE_POINTS,
            "noise_per_bin": TIMEBIN_NOISE_PER_BIN,
            "bootstrap_resamples": BOOTSTRAP_RESAMPLES,
            "jitter_samples": JITTER_SAMPLES,
        },
        "characterization": {
            "storage_time_us": CHARACTERIZATION_STORAGE_TIME_US,
            "storage_scan_us": list(STORAGE_SCAN_US),
        },
        "preset": "",
        "output_dir": OUTPUT_DIR,
        "seed": DEFAULT_SEED,
    }
    return copy.deepcopy(tree)


# =============================================================================
# Presets
# =============================================================================

PRESETS = {
    "fig2-storage": "Weak-pulse storage histograms at n=2.5 and 11.2, noise and dark references, OREO with C2 only",
    "fig2d-snr": "SNR versus mean photon number with a linear fit through SNR=1 at n=0",
    "fig3-visibility": "Double-write time-bin interference and visibility fits at n=176 and 51",
    "bright-characterization": "Comb, AFC echo, spin-wave echo and storage-time decay with bright pulses",
}


def get_preset_config(preset_name):
    """
    Get configuration specific to a preset.

    Args:
        preset_name: One of the PRESETS keys

    Returns:
        dict: Output file names and the config sections the preset reads
    """
    optical = ["grid", "input", "comb", "spin", "timeline"]
    configs = {
        "fig2-storage": {
            "sections": optical + ["noise", "filters", "detector", "detection"],
            "histogram_file": "storage_histograms.csv",
            "input_trace_file": "input_trace.csv",
            "budget_file": "noise_budget.json",
            "summary_file": "summary.json",
        },
        "fig2d-snr": {
            "sections": optical + ["noise", "filters", "detector", "detection"],
            "scan_file": "snr_scan.csv",
            "budget_file": "noise_budget.json",
            "summary_file": "summary.json",
        },
        "fig3-visibility": {
            "sections": ["timebin", "detector"],
            "scan_file_pattern": "visibility_scan_n{n_bar:g}.csv",
            "summary_file": "summary.json",
        },
        "bright-characterization": {
            "sections": optical + ["characterization"],
            "comb_file": "comb_profile.csv",
            "echo_file": "echo_trace.csv",
            "decay_file": "storage_scan.csv",
            "summary_file": "summary.json",
        },
    }

    return copy.deepcopy(configs.get(preset_name, {}))
