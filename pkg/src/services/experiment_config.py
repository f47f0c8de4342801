"""
experiment_config.py - Validated, immutable experiment configuration

The on-disk config is a JSON document, deep-merged over config.default_config().
validate_config() collects every violation (unknown keys, wrong types and
physical range errors) before anything runs, and builds a frozen
ExperimentConfig whose builders hand each module its parameter record.

Reports identify their inputs with canonical_json() and content_hash().
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, List, Optional, Tuple
import hashlib
import json
import logging
import math

import config
from afc_lib import (
    TOOTH_SHAPES, CombParams, SpectralError, SpectralGrid, SpinParams, make_grid, optimal_finesse, schedule,
)
from src.services.detection import DetectorParams, TimeBinConfig
from src.services.filter_chain import FilterChainParams, NoiseSourceParams, gate_window

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Raised when a configuration is invalid; carries every violation."""

    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid configuration")


class UnknownPresetError(ConfigError):
    """Raised when a preset name is not in config.PRESETS."""

    def __init__(self, name: str):
        super().__init__([f"unknown preset '{name}' (known: {', '.join(sorted(config.PRESETS))})"])
        self.name = name


# =============================================================================
# Sections
# =============================================================================

@dataclass(frozen=True)
class GridSection:
    span_mhz: float
    n_points: int


@dataclass(frozen=True)
class InputSection:
    fwhm_us: float
    center_us: float
    carrier_detuning_mhz: float


@dataclass(frozen=True)
class CombSection:
    afc_delay_us: float
    finesse: Optional[float]
    peak_depth: float
    background_depth: float
    tooth_shape: str
    bandwidth_mhz: float
    broadening_sigma_khz: float
    max_depth: float
    pass_count: int


@dataclass(frozen=True)
class SpinSection:
    linewidth_khz: float
    coherence_time_ms: float
    transfer_efficiency: float


@dataclass(frozen=True)
class TimelineSection:
    storage_time_us: float
    c1_offset_us: float


@dataclass(frozen=True)
class NoiseSection:
    fluor_photons_per_pulse: float
    fluor_lifetime_us: float
    fluor_spectral_width_mhz: float
    fid_photons_per_pulse: float
    fid_decay_us: float
    control_detuning_mhz: float
    oreo_amplitude_c2: float
    oreo_gain_c1: float
    oreo_fwhm_us: float
    scatter_photons_per_pulse: float
    control_duration_us: float


@dataclass(frozen=True)
class FilterSection:
    spatial_suppression: float
    grating_passband_mhz: float
    grating_stop_transmission: float
    fp_fwhm_mhz: float
    fp_center_detuning_mhz: float
    aom_guard_us: float
    aom_gate_length_us: float
    aom_off_transmission: float
    aom_ramp_us: float
    use_fp: bool


@dataclass(frozen=True)
class DetectorSection:
    quantum_efficiency: float
    dark_rate_per_us: float
    time_bin_us: float
    trials: int
    block_size: int
    histogram_start_us: float
    histogram_end_us: float


@dataclass(frozen=True)
class DetectionSection:
    window_halfwidth_us: float
    photon_counting_efficiency: float
    noise_floor_target: float
    single_run_noise_floor: float
    snr_photon_numbers: Tuple[float, ...]
    storage_photon_numbers: Tuple[float, ...]
    reference_trials_factor: int


@dataclass(frozen=True)
class TimeBinSection:
    afc_delay_us: float
    storage_time_us: float
    bin_separation_us: float
    pulse_fwhm_us: float
    storage_efficiency: float
    sigma_f_khz: float
    photon_numbers: Tuple[float, ...]
    phase_points: int
    noise_per_bin: float
    bootstrap_resamples: int
    jitter_samples: int


@dataclass(frozen=True)
class CharacterizationSection:
    storage_time_us: float
    storage_scan_us: Tuple[float, ...]


SECTIONS = {
    "grid": GridSection,
    "input": InputSection,
    "comb": CombSection,
    "spin": SpinSection,
    "timeline": TimelineSection,
    "noise": NoiseSection,
    "filters": FilterSection,
    "detector": DetectorSection,
    "detection": DetectionSection,
    "timebin": TimeBinSection,
    "characterization": CharacterizationSection,
}


@dataclass(frozen=True)
class ExperimentConfig:
    """Complete, validated simulator configuration."""

    grid: GridSection
    input: InputSection
    comb: CombSection
    spin: SpinSection
    timeline: TimelineSection
    noise: NoiseSection
    filters: FilterSection
    detector: DetectorSection
    detection: DetectionSection
    timebin: TimeBinSection
    characterization: CharacterizationSection
    preset: str
    output_dir: str
    seed: int

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        return json.loads(json.dumps(data))

    def canonical(self) -> str:
        return canonical_json(self.to_dict())

    def content_hash(self) -> str:
        return content_hash(self.canonical())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    # Builders -----------------------------------------------------------

    def spectral_grid(self) -> SpectralGrid:
        return make_grid(self.grid.span_mhz, self.grid.n_points)

    def comb_params(self, afc_delay: Optional[float] = None) -> CombParams:
        """Comb record; a null finesse is replaced by the analytic optimum."""
        comb = self.comb
        finesse = comb.finesse
        if finesse is None:
            finesse = optimal_finesse(
                comb.peak_depth, comb.tooth_shape, comb.background_depth, pass_count=comb.pass_count,
            )
        return CombParams.from_delay(
            comb.afc_delay_us if afc_delay is None else afc_delay,
            finesse=finesse,
            peak_depth=comb.peak_depth,
            background_depth=comb.background_depth,
            tooth_shape=comb.tooth_shape,
            bandwidth=comb.bandwidth_mhz,
            broadening_sigma=comb.broadening_sigma_khz,
        )

    @property
    def max_depth_per_pass(self) -> float:
        return self.comb.max_depth / self.comb.pass_count

    def spin_params(self) -> SpinParams:
        return SpinParams(
            linewidth=self.spin.linewidth_khz,
            coherence_time=self.spin.coherence_time_ms,
            transfer_efficiency=self.spin.transfer_efficiency,
        )

    def protocol_timeline(self, storage_time: Optional[float] = None):
        return schedule(
            self.comb.afc_delay_us,
            self.timeline.storage_time_us if storage_time is None else storage_time,
            self.timeline.c1_offset_us,
            t_input=self.input.center_us,
        )

    def noise_sources(self) -> NoiseSourceParams:
        noise = self.noise
        return NoiseSourceParams(
            fluor_photons_per_pulse=noise.fluor_photons_per_pulse,
            fluor_lifetime=noise.fluor_lifetime_us,
            fluor_spectral_width=noise.fluor_spectral_width_mhz,
            fid_photons_per_pulse=noise.fid_photons_per_pulse,
            fid_decay=noise.fid_decay_us,
            control_detuning=noise.control_detuning_mhz,
            oreo_amplitude_c2=noise.oreo_amplitude_c2,
            oreo_gain_c1=noise.oreo_gain_c1,
            oreo_fwhm=noise.oreo_fwhm_us,
            scatter_photons_per_pulse=noise.scatter_photons_per_pulse,
            control_duration=noise.control_duration_us,
        )

    def filter_params(self, timeline) -> FilterChainParams:
        filters = self.filters
        return FilterChainParams(
            spatial_suppression=filters.spatial_suppression,
            grating_passband=filters.grating_passband_mhz,
            grating_stop_transmission=filters.grating_stop_transmission,
            fp_fwhm=filters.fp_fwhm_mhz,
            fp_center_detuning=filters.fp_center_detuning_mhz,
            aom_window=gate_window(timeline, filters.aom_guard_us, filters.aom_gate_length_us),
            aom_off_transmission=filters.aom_off_transmission,
            aom_ramp=filters.aom_ramp_us,
            use_fp=filters.use_fp,
        )

    def detector_params(self) -> DetectorParams:
        detector = self.detector
        return DetectorParams(
            quantum_efficiency=detector.quantum_efficiency,
            dark_rate=detector.dark_rate_per_us,
            time_bin=detector.time_bin_us,
            trials=detector.trials,
            seed=self.seed,
            block_size=detector.block_size,
            histogram_range=(detector.histogram_start_us, detector.histogram_end_us),
        )

    def timebin_config(self) -> TimeBinConfig:
        timebin = self.timebin
        return TimeBinConfig(
            afc_delay=timebin.afc_delay_us,
            pulse_fwhm=timebin.pulse_fwhm_us,
            storage_efficiency=timebin.storage_efficiency,
            noise_per_bin=timebin.noise_per_bin,
            detection_window=timebin.bin_separation_us,
        )


# =============================================================================
# Canonical serialization
# =============================================================================

def _canonical(value: Any) -> Any:
    if isinstance(value, bool) or value is None or isinstance(value, (int, float, str)):
        return value
    if isinstance(value, dict):
        return {str(key): _canonical(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_canonical(item) for item in value]
    raise TypeError(f"cannot serialize {type(value).__name__}")


def canonical_json(data: Any) -> str:
    """JSON with sorted keys and compact separators; floats keep their shortest exact repr."""
    return json.dumps(_canonical(data), sort_keys=True, separators=(",", ":"))


def content_hash(text: str) -> str:
    """Git-style blob hash (sha1 of 'blob <len>\\0' + bytes)."""
    payload = text.encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


# =============================================================================
# Validation
# =============================================================================

def _merge(defaults: Dict, overrides: Dict, errors: List[str], path: str = "") -> Dict:
    merged = dict(defaults)
    for key, value in overrides.items():
        dotted = f"{path}{key}"
        if key not in defaults:
            errors.append(f"unknown key '{dotted}'")
        elif isinstance(defaults[key], dict):
            if isinstance(value, dict):
                merged[key] = _merge(defaults[key], value, errors, path=f"{dotted}.")
            else:
                errors.append(f"'{dotted}' must be an object")
        else:
            merged[key] = value
    return merged


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _coerce(value: Any, default: Any, dotted: str, errors: List[str]) -> Any:
    # The default's type defines the schema
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        errors.append(f"'{dotted}' must be true or false (got {value!r})")
    elif isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        errors.append(f"'{dotted}' must be an integer (got {value!r})")
    elif isinstance(default, float) or default is None:
        if default is None and value is None:
            return None
        if _is_number(value):
            return float(value)
        errors.append(f"'{dotted}' must be a number (got {value!r})")
    elif isinstance(default, str):
        if isinstance(value, str):
            return value
        errors.append(f"'{dotted}' must be a string (got {value!r})")
    elif isinstance(default, list):
        if isinstance(value, list) and all(_is_number(item) for item in value):
            return tuple(float(item) for item in value)
        errors.append(f"'{dotted}' must be a list of numbers (got {value!r})")
        return tuple(default)
    return default


def _build(merged: Dict, defaults: Dict, errors: List[str]) -> ExperimentConfig:
    sections = {}
    for name, section_type in SECTIONS.items():
        values = {
            item.name: _coerce(merged[name][item.name], defaults[name][item.name], f"{name}.{item.name}", errors)
            for item in fields(section_type)
        }
        sections[name] = section_type(**values)
    top = {key: _coerce(merged[key], defaults[key], key, errors) for key in ("preset", "output_dir", "seed")}
    return ExperimentConfig(**sections, **top)


def _in_unit(value: float) -> bool:
    return 0.0 <= value <= 1.0


def _check_comb_on_grid(cfg: ExperimentConfig) -> List[str]:
    """Grid and pulse preconditions of prepare_comb, checked on the built records."""
    try:
        grid = cfg.spectral_grid()
        comb = cfg.comb_params()
    except SpectralError:
        # field checks already name the bad value
        return []

    errors = []
    if not grid.supports_comb(comb.period):
        errors.append(
            f"grid resolution {grid.resolution * 1e3:.3f} kHz exceeds comb period/10 = {comb.period * 1e2:.3f} kHz"
        )
    if not comb.resolved_by(grid.resolution):
        errors.append(
            f"grid resolution {grid.resolution * 1e3:.3f} kHz exceeds tooth FWHM/5 = "
            f"{comb.tooth_width * 2e2:.3f} kHz"
        )
    if cfg.input.fwhm_us > 0 and not comb.covers_pulse(cfg.input.fwhm_us):
        errors.append(
            f"comb bandwidth {comb.bandwidth:g} MHz does not cover the input pulse spectrum "
            f"(needs >= {5.0 / cfg.input.fwhm_us:g} MHz)"
        )
    return errors


def _check_ranges(cfg: ExperimentConfig) -> List[str]:
    errors = []
    grid, comb, inp = cfg.grid, cfg.comb, cfg.input

    if grid.n_points < 2 or grid.n_points & (grid.n_points - 1):
        errors.append(f"grid.n_points must be a power of two (got {grid.n_points})")
    if grid.span_mhz <= 0:
        errors.append(f"grid.span_mhz must be positive (got {grid.span_mhz})")
    if inp.fwhm_us <= 0:
        errors.append(f"input.fwhm_us must be positive (got {inp.fwhm_us})")

    if comb.afc_delay_us <= 0:
        errors.append(f"comb.afc_delay_us must be positive (got {comb.afc_delay_us})")
    if comb.finesse is not None and comb.finesse <= 1:
        errors.append(f"comb.finesse must exceed 1 (got {comb.finesse})")
    if comb.finesse is None and comb.peak_depth <= 0:
        errors.append("comb.finesse null (optimal) needs a positive comb.peak_depth")
    if comb.peak_depth < 0 or comb.background_depth < 0:
        errors.append("comb depths must be non-negative")
    if comb.tooth_shape not in TOOTH_SHAPES:
        errors.append(f"comb.tooth_shape must be one of {list(TOOTH_SHAPES)} (got {comb.tooth_shape!r})")
    if comb.pass_count not in (1, 2):
        errors.append(f"comb.pass_count must be 1 or 2 (got {comb.pass_count})")
    elif (comb.peak_depth + comb.background_depth) * comb.pass_count > comb.max_depth + 1e-12:
        errors.append(
            f"comb depth {(comb.peak_depth + comb.background_depth) * comb.pass_count:g} "
            f"exceeds the maximum optical depth {comb.max_depth:g}"
        )
    if comb.broadening_sigma_khz < 0:
        errors.append(f"comb.broadening_sigma_khz must be >= 0 (got {comb.broadening_sigma_khz})")
    if comb.afc_delay_us > 0 and comb.bandwidth_mhz < 2.0 / comb.afc_delay_us:
        errors.append(f"comb bandwidth {comb.bandwidth_mhz:g} MHz holds fewer than two comb periods")
    # the tooth blur spreads 4 sigma past each comb edge
    if grid.span_mhz > 0 and comb.bandwidth_mhz + 8e-3 * max(comb.broadening_sigma_khz, 0.0) > 0.9 * grid.span_mhz:
        errors.append(f"comb bandwidth {comb.bandwidth_mhz:g} MHz does not fit in the {grid.span_mhz:g} MHz grid")
    errors.extend(_check_comb_on_grid(cfg))

    spin = cfg.spin
    if not _in_unit(spin.transfer_efficiency):
        errors.append(f"transfer efficiency outside [0,1] (got {spin.transfer_efficiency})")
    if spin.linewidth_khz <= 0:
        errors.append(f"spin.linewidth_khz must be positive (got {spin.linewidth_khz})")
    if spin.coherence_time_ms <= 0:
        errors.append(f"spin.coherence_time_ms must be positive (got {spin.coherence_time_ms})")

    timeline = cfg.timeline
    if timeline.storage_time_us <= 0:
        errors.append(f"timeline.storage_time_us must be positive (got {timeline.storage_time_us})")
    if not 0 < timeline.c1_offset_us < comb.afc_delay_us:
        errors.append(
            f"C1 offset {timeline.c1_offset_us:g} us outside (0, {comb.afc_delay_us:g}) us"
        )
    if cfg.timebin.afc_delay_us > 0 and timeline.c1_offset_us >= cfg.timebin.afc_delay_us:
        errors.append(
            f"C1 offset {timeline.c1_offset_us:g} us must be shorter than the time-bin AFC delay "
            f"{cfg.timebin.afc_delay_us:g} us"
        )

    noise = cfg.noise
    for name in ("fluor_photons_per_pulse", "fid_photons_per_pulse", "oreo_amplitude_c2", "scatter_photons_per_pulse"):
        if getattr(noise, name) < 0:
            errors.append(f"noise.{name} must be >= 0 (got {getattr(noise, name)})")
    for name in ("fluor_lifetime_us", "fid_decay_us", "oreo_fwhm_us", "control_duration_us", "fluor_spectral_width_mhz"):
        if getattr(noise, name) <= 0:
            errors.append(f"noise.{name} must be positive (got {getattr(noise, name)})")
    if noise.oreo_gain_c1 < 1:
        errors.append(f"noise.oreo_gain_c1 must be >= 1 (got {noise.oreo_gain_c1})")

    filters = cfg.filters
    for name in ("spatial_suppression", "grating_stop_transmission", "aom_off_transmission"):
        if not _in_unit(getattr(filters, name)):
            errors.append(f"filters.{name} outside [0,1] (got {getattr(filters, name)})")
    for name in ("fp_fwhm_mhz", "grating_passband_mhz", "aom_gate_length_us"):
        if getattr(filters, name) <= 0:
            errors.append(f"filters.{name} must be positive (got {getattr(filters, name)})")
    if filters.aom_ramp_us < 0:
        errors.append(f"filters.aom_ramp_us must be >= 0 (got {filters.aom_ramp_us})")

    detector = cfg.detector
    if not _in_unit(detector.quantum_efficiency):
        errors.append(f"detector quantum efficiency outside [0,1] (got {detector.quantum_efficiency})")
    if detector.dark_rate_per_us < 0:
        errors.append(f"detector.dark_rate_per_us must be >= 0 (got {detector.dark_rate_per_us})")
    if detector.trials < 1:
        errors.append(f"detector.trials must be at least 1 (got {detector.trials})")
    if detector.block_size < 1:
        errors.append(f"detector.block_size must be at least 1 (got {detector.block_size})")
    if detector.time_bin_us <= 0:
        errors.append(f"detector.time_bin_us must be positive (got {detector.time_bin_us})")
    elif detector.histogram_end_us <= detector.histogram_start_us:
        errors.append("detector histogram range is empty")
    else:
        n_bins = (detector.histogram_end_us - detector.histogram_start_us) / detector.time_bin_us
        if abs(n_bins - round(n_bins)) > 1e-6:
            errors.append("detector histogram range is not a whole number of time bins")

    detection = cfg.detection
    if detection.window_halfwidth_us <= 0:
        errors.append(f"detection.window_halfwidth_us must be positive (got {detection.window_halfwidth_us})")
    if not _in_unit(detection.photon_counting_efficiency):
        errors.append(f"detection.photon_counting_efficiency outside [0,1] (got {detection.photon_counting_efficiency})")
    for name in ("noise_floor_target", "single_run_noise_floor"):
        if getattr(detection, name) <= 0:
            errors.append(f"detection.{name} must be positive (got {getattr(detection, name)})")
    for name in ("snr_photon_numbers", "storage_photon_numbers"):
        values = getattr(detection, name)
        if not values or any(v < 0 for v in values):
            errors.append(f"detection.{name} must be a non-empty list of non-negative numbers")
    if detection.reference_trials_factor < 1:
        errors.append(f"detection.reference_trials_factor must be at least 1 (got {detection.reference_trials_factor})")

    timebin = cfg.timebin
    if timebin.afc_delay_us <= 0 or timebin.storage_time_us <= 0 or timebin.pulse_fwhm_us <= 0:
        errors.append("timebin delays and pulse width must be positive")
    elif not 1.5 * timebin.pulse_fwhm_us <= timebin.bin_separation_us < timebin.afc_delay_us / 2.0:
        errors.append(
            f"time-bin separation {timebin.bin_separation_us:g} us must lie in "
            f"[{1.5 * timebin.pulse_fwhm_us:g}, {timebin.afc_delay_us / 2.0:g}) us"
        )
    if not _in_unit(timebin.storage_efficiency):
        errors.append(f"timebin.storage_efficiency outside [0,1] (got {timebin.storage_efficiency})")
    if timebin.sigma_f_khz < 0 or timebin.noise_per_bin < 0:
        errors.append("timebin.sigma_f_khz and timebin.noise_per_bin must be >= 0")
    if not timebin.photon_numbers or any(v < 0 for v in timebin.photon_numbers):
        errors.append("timebin.photon_numbers must be a non-empty list of non-negative numbers")
    if timebin.phase_points < 5:
        errors.append(f"timebin.phase_points must be at least 5 (got {timebin.phase_points})")
    if timebin.bootstrap_resamples < 2:
        errors.append(f"timebin.bootstrap_resamples must be at least 2 (got {timebin.bootstrap_resamples})")
    if timebin.jitter_samples < 1:
        errors.append(f"timebin.jitter_samples must be at least 1 (got {timebin.jitter_samples})")

    characterization = cfg.characterization
    if characterization.storage_time_us <= 0:
        errors.append(f"characterization.storage_time_us must be positive (got {characterization.storage_time_us})")
    if len(characterization.storage_scan_us) < 3 or any(v < 0 for v in characterization.storage_scan_us):
        errors.append("characterization.storage_scan_us needs at least three non-negative storage times")

    if cfg.preset and cfg.preset not in config.PRESETS:
        errors.append(f"unknown preset '{cfg.preset}'")
    if not 0 <= cfg.seed < 2 ** 64:
        errors.append(f"seed outside [0, 2^64) (got {cfg.seed})")

    return errors


def validate_config(raw_text: str) -> Tuple[Optional[ExperimentConfig], List[str]]:
    """
    Parse and validate a JSON config.

    Args:
        raw_text: Config file contents; an empty document means all defaults

    Returns:
        tuple: (ExperimentConfig, []) when valid, otherwise (None, violations)
               with every violation found
    """
    errors: List[str] = []
    try:
        raw = json.loads(raw_text) if raw_text.strip() else {}
    except json.JSONDecodeError as e:
        return None, [f"config is not valid JSON: {e}"]
    if not isinstance(raw, dict):
        return None, ["config root must be a JSON object"]

    defaults = config.default_config()
    merged = _merge(defaults, raw, errors)
    cfg = _build(merged, defaults, errors)
    errors.extend(_check_ranges(cfg))

    if errors:
        logger.debug(f"Config rejected with {len(errors)} violations")
        return None, errors
    return cfg, []


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    """
    Load a config file (or the defaults when path is None).

    Raises:
        ConfigError: With the full violation list
    """
    if path is None:
        text = ""
    else:
        try:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
        except OSError as e:
            raise ConfigError([f"cannot read config file {path}: {e}"])

    cfg, errors = validate_config(text)
    if cfg is None:
        raise ConfigError(errors)
    return cfg


def default_experiment_config() -> ExperimentConfig:
    """Validated defaults."""
    return load_config(None)
