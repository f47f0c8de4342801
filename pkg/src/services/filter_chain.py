"""
filter_chain.py - Control-pulse noise and the filter chain for the AFC memory

This module generates the photons the strong control pulses leave in the
detection mode and attenuates them on their way to the detector:
- Fluorescence: broadband, slow exponential decay after each control pulse
- FID: narrowband emission near the control frequency (35.4 MHz away)
- OREO: an echo-like pulse at the input frequency, 1/Delta after C2
- Scatter: control light leaking into the detection path during the pulses

The filter stages are spatial separation, a diffraction grating, a
Fabry-Perot cavity and an AOM used as a time gate. Every stage is a
transmission in [0, 1] per time-frequency point, so the chain is just a
product and its order does not matter.
"""

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
from scipy.integrate import cumulative_trapezoid

from afc_lib import FWHM_TO_SIGMA, ProtocolTimeline

logger = logging.getLogger(__name__)


class NoiseModelError(ValueError):
    """Raised for invalid noise sources, filter parameters or calibrations."""


NOISE_LABELS = ("fluorescence", "fid", "oreo", "scatter")


# =============================================================================
# Parameter records
# =============================================================================

@dataclass(frozen=True)
class NoiseSourceParams:
    """
    Noise emitted into the detection mode at the crystal.

    Photon numbers are means per control pulse (OREO: per cycle). The OREO
    brightness and the FID magnitude are calibration knobs.
    """

    fluor_photons_per_pulse: float = 425.0
    fluor_lifetime: float = 1900.0
    fluor_spectral_width: float = 500.0
    fid_photons_per_pulse: float = 16.2
    fid_decay: float = 2.0
    control_detuning: float = 35.4
    oreo_amplitude_c2: float = 0.2
    oreo_gain_c1: float = 2.0
    oreo_fwhm: float = 2.0
    scatter_photons_per_pulse: float = 1.0e8
    control_duration: float = 0.6

    def __post_init__(self):
        for name in (
            "fluor_photons_per_pulse", "fid_photons_per_pulse",
            "oreo_amplitude_c2", "scatter_photons_per_pulse",
        ):
            if getattr(self, name) < 0:
                raise NoiseModelError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("fluor_lifetime", "fid_decay", "oreo_fwhm", "control_duration", "fluor_spectral_width"):
            if getattr(self, name) <= 0:
                raise NoiseModelError(f"{name} must be positive, got {getattr(self, name)}")
        if self.oreo_gain_c1 < 1:
            raise NoiseModelError(f"oreo_gain_c1 must be >= 1, got {self.oreo_gain_c1}")


@dataclass(frozen=True)
class FilterChainParams:
    """
    Filter stages between the crystal and the detector.

    Attributes:
        spatial_suppression: Transmission of light not in the detection mode
        grating_passband: Width of the grating passband in MHz
        grating_stop_transmission: Grating transmission outside the passband
        fp_fwhm: Fabry-Perot linewidth in MHz
        fp_center_detuning: Fabry-Perot resonance relative to the input, MHz
        aom_window: (open, close) times of the AOM gate in microseconds
        aom_off_transmission: Gate transmission while closed
        aom_ramp: Duration of the linear gate edges in microseconds
        use_fp: False removes the Fabry-Perot stage
    """

    spatial_suppression: float = 0.05
    grating_passband: float = 1.0e5
    grating_stop_transmission: float = 1e-3
    fp_fwhm: float = 7.5
    fp_center_detuning: float = 0.0
    aom_window: Tuple[float, float] = (float("-inf"), float("inf"))
    aom_off_transmission: float = 1e-6
    aom_ramp: float = 0.0
    use_fp: bool = True

    def __post_init__(self):
        for name in ("spatial_suppression", "grating_stop_transmission", "aom_off_transmission"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise NoiseModelError(f"{name} outside [0,1] (got {value})")
        if self.fp_fwhm <= 0:
            raise NoiseModelError(f"fp_fwhm must be positive, got {self.fp_fwhm}")
        if self.grating_passband <= 0:
            raise NoiseModelError(f"grating_passband must be positive, got {self.grating_passband}")
        if self.aom_window[0] > self.aom_window[1]:
            raise NoiseModelError(f"AOM window {self.aom_window} is not ordered")
        if self.aom_ramp < 0:
            raise NoiseModelError(f"aom_ramp must be >= 0, got {self.aom_ramp}")


def gate_window(timeline: ProtocolTimeline, guard: float, length: float) -> Tuple[float, float]:
    """AOM window opening ``guard`` us after C2 and staying open ``length`` us."""
    start = timeline.t_c2 + guard
    return (start, start + length)


# =============================================================================
# Flux timelines
# =============================================================================

@dataclass(frozen=True)
class FluxTimeline:
    """
    Photon flux (photons/us) on a time axis, with its spectral character.

    ``spectral_width`` 0 means narrowband at ``detuning``; a positive value
    means a flat band of that width. ``in_detection_mode`` marks light that
    is spatially in the detected mode (signal, OREO) and so not removed by
    the spatial filter.
    """

    label: str
    times: np.ndarray
    flux: np.ndarray
    detuning: float = 0.0
    spectral_width: float = 0.0
    in_detection_mode: bool = False

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        flux = np.array(self.flux, dtype=float)
        if times.shape != flux.shape or times.ndim != 1:
            raise NoiseModelError(f"flux '{self.label}' does not match its time axis")
        times.setflags(write=False)
        flux.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "flux", flux)

    def integral(self, start: float, end: float) -> float:
        """Photons between start and end (trapezoidal, linear interpolation)."""
        cumulative = cumulative_trapezoid(self.flux, self.times, initial=0.0)
        lo, hi = np.interp([start, end], self.times, cumulative)
        return float(hi - lo)

    def total(self) -> float:
        return self.integral(self.times[0], self.times[-1])

    def scaled(self, factor: float) -> "FluxTimeline":
        return replace(self, flux=self.flux * factor)

    def with_flux(self, flux: np.ndarray) -> "FluxTimeline":
        return replace(self, flux=flux)


def sum_fluxes(fluxes: Sequence[FluxTimeline], label: str = "total") -> FluxTimeline:
    """Add fluxes sampled on the same time axis."""
    if not fluxes:
        raise NoiseModelError("cannot sum an empty set of fluxes")
    times = fluxes[0].times
    for flux in fluxes[1:]:
        if flux.times.shape != times.shape or not np.allclose(flux.times, times):
            raise NoiseModelError(f"flux '{flux.label}' uses a different time axis")
    total = np.sum([flux.flux for flux in fluxes], axis=0)
    return FluxTimeline(label=label, times=times, flux=total, in_detection_mode=True)


def _decay_after(times: np.ndarray, start: float, photons: float, lifetime: float) -> np.ndarray:
    elapsed = times - start
    flux = np.zeros_like(times)
    after = elapsed >= 0
    flux[after] = photons / lifetime * np.exp(-elapsed[after] / lifetime)
    return flux


def emit_noise(
    timeline: ProtocolTimeline,
    sources: NoiseSourceParams,
    times: np.ndarray,
    include_c1: bool = True,
    include_c2: bool = True
) -> List[FluxTimeline]:
    """
    Noise fluxes at the crystal for one memory cycle.

    Args:
        timeline: Protocol schedule (C1, C2 and OREO times)
        sources: Noise magnitudes
        times: Time axis in microseconds
        include_c1: Apply the write pulse
        include_c2: Apply the read pulse

    Returns:
        Fluxes labelled fluorescence, fid, oreo and scatter. The OREO carries
        oreo_amplitude_c2 photons, times oreo_gain_c1 when C1 is present, and
        only exists when C2 is applied.

    Example:
        >>> fluxes = emit_noise(timeline, NoiseSourceParams(), grid.times,
        ...                     include_c1=False, include_c2=False)
        >>> [f.total() for f in fluxes]
        [0.0, 0.0, 0.0, 0.0]
    """
    times = np.asarray(times, dtype=float)
    pulses = [
        t for t, applied in ((timeline.t_c1, include_c1), (timeline.t_c2, include_c2)) if applied
    ]

    fluorescence = np.zeros_like(times)
    fid = np.zeros_like(times)
    scatter = np.zeros_like(times)
    for t_pulse in pulses:
        fluorescence += _decay_after(times, t_pulse, sources.fluor_photons_per_pulse, sources.fluor_lifetime)
        fid += _decay_after(times, t_pulse, sources.fid_photons_per_pulse, sources.fid_decay)
        during = np.abs(times - t_pulse) < sources.control_duration / 2.0
        scatter[during] += sources.scatter_photons_per_pulse / sources.control_duration

    oreo = np.zeros_like(times)
    if include_c2:
        photons = sources.oreo_amplitude_c2 * (sources.oreo_gain_c1 if include_c1 else 1.0)
        sigma = sources.oreo_fwhm * FWHM_TO_SIGMA
        oreo = photons / (sigma * np.sqrt(2.0 * np.pi)) * np.exp(
            -((times - timeline.t_oreo) ** 2) / (2.0 * sigma ** 2)
        )

    return [
        FluxTimeline(
            "fluorescence", times, fluorescence,
            detuning=0.0, spectral_width=sources.fluor_spectral_width,
        ),
        FluxTimeline("fid", times, fid, detuning=sources.control_detuning),
        FluxTimeline("oreo", times, oreo, detuning=0.0, in_detection_mode=True),
        FluxTimeline("scatter", times, scatter, detuning=sources.control_detuning),
    ]


# =============================================================================
# Filter stages
# =============================================================================

def fp_transmission(detuning, fp_fwhm: float, center: float = 0.0):
    """
    Lorentzian Fabry-Perot intensity transmission 1 / (1 + (2 delta / FWHM)^2).

    Example:
        >>> round(fp_transmission(35.4, 7.5), 5)
        0.0111
    """
    if fp_fwhm <= 0:
        raise NoiseModelError(f"fp_fwhm must be positive, got {fp_fwhm}")
    offset = np.asarray(detuning, dtype=float) - center
    transmission = 1.0 / (1.0 + (2.0 * offset / fp_fwhm) ** 2)
    return float(transmission) if transmission.ndim == 0 else transmission


def broadband_fp_transmission(spectral_width: float, fp_fwhm: float) -> float:
    """FP transmission of a flat band much wider than the cavity line."""
    return min(1.0, fp_fwhm / spectral_width)


def grating_transmission(detuning: float, spectral_width: float, passband: float, stop: float) -> float:
    """
    Grating transmission: 1 inside the passband, ``stop`` outside.

    A broadband source is transmitted in proportion to the part of its band
    that falls inside the passband.
    """
    half = passband / 2.0
    if spectral_width <= 0:
        return 1.0 if abs(detuning) <= half else stop
    lo = detuning - spectral_width / 2.0
    hi = detuning + spectral_width / 2.0
    inside = min(max((min(hi, half) - max(lo, -half)) / spectral_width, 0.0), 1.0)
    return inside + (1.0 - inside) * stop


def aom_gate(t, window: Tuple[float, float], off_transmission: float = 1e-6, ramp: float = 0.0):
    """
    AOM time gate.

    1 inside the window, ``off_transmission`` outside. With ramp > 0 the
    edges are linear over ``ramp`` microseconds centered on the window
    edges, so the transmission is 0.5 exactly at an edge.
    """
    start, end = window
    if start > end:
        raise NoiseModelError(f"AOM window {window} is not ordered")
    t = np.asarray(t, dtype=float)

    if ramp == 0:
        gate = np.where((t >= start) & (t <= end), 1.0, off_transmission)
    else:
        with np.errstate(invalid="ignore"):
            rise = np.clip((t - start) / ramp + 0.5, 0.0, 1.0)
            fall = np.clip((end - t) / ramp + 0.5, 0.0, 1.0)
        gate = np.maximum(np.nan_to_num(rise * fall, nan=1.0), off_transmission)

    return float(gate) if gate.ndim == 0 else gate


# =============================================================================
# Budget
# =============================================================================

@dataclass(frozen=True)
class SourceBudget:
    """One noise source: photons in the detection window per stage."""

    label: str
    crystal: float
    detector: float
    stages: Dict[str, float] = field(default_factory=dict)
    detector_cycle_total: float = 0.0


@dataclass(frozen=True)
class NoiseBudget:
    """Per-source noise in the detection window plus the dark-count term."""

    sources: Tuple[SourceBudget, ...]
    window: Tuple[float, float]
    dark_equivalent: float = 0.0

    @property
    def total_noise_floor(self) -> float:
        """Noise photons per detection mode at the detector plane."""
        return sum(source.detector for source in self.sources) + self.dark_equivalent

    def source(self, label: str) -> SourceBudget:
        for entry in self.sources:
            if entry.label == label:
                return entry
        raise KeyError(label)

    def to_dict(self) -> Dict:
        return {
            "window_us": list(self.window),
            "dark_equivalent": self.dark_equivalent,
            "total_noise_floor": self.total_noise_floor,
            "sources": {
                entry.label: {
                    "crystal": entry.crystal,
                    "detector": entry.detector,
                    "detector_cycle_total": entry.detector_cycle_total,
                    "stages": dict(entry.stages),
                }
                for entry in self.sources
            },
        }


class NoiseFilterChain:
    """
    Spatial, spectral and temporal filtering between crystal and detector.

    Each stage multiplies the flux by a transmission; the budget reports how
    much of each source is left in the detection window.
    """

    def __init__(self, params: FilterChainParams):
        """
        Initialize the chain.

        Args:
            params: Filter stage parameters (AOM window included)
        """
        self.params = params

    def stage_factors(self, flux: FluxTimeline) -> Dict[str, float]:
        """Time-independent transmissions of one flux, per stage."""
        params = self.params
        spatial = 1.0 if flux.in_detection_mode else params.spatial_suppression
        grating = grating_transmission(
            flux.detuning, flux.spectral_width,
            params.grating_passband, params.grating_stop_transmission,
        )
        if not params.use_fp:
            fp = 1.0
        elif flux.spectral_width > 0:
            fp = broadband_fp_transmission(flux.spectral_width, params.fp_fwhm)
        else:
            fp = fp_transmission(flux.detuning, params.fp_fwhm, params.fp_center_detuning)
        return {"spatial": spatial, "grating": grating, "fp": fp}

    def transmit(self, flux: FluxTimeline) -> FluxTimeline:
        """Detector-plane flux for one crystal flux."""
        factors = self.stage_factors(flux)
        gate = aom_gate(
            flux.times, self.params.aom_window,
            self.params.aom_off_transmission, self.params.aom_ramp,
        )
        scale = factors["spatial"] * factors["grating"] * factors["fp"]
        return flux.with_flux(flux.flux * scale * gate)

    def apply(
        self,
        fluxes: Sequence[FluxTimeline],
        window: Tuple[float, float],
        dark_equivalent: float = 0.0
    ) -> Tuple[List[FluxTimeline], NoiseBudget]:
        """
        Filter every flux and build the budget for a detection window.

        Args:
            fluxes: Crystal-plane fluxes
            window: Detection window (start, end) in microseconds
            dark_equivalent: Dark counts in the window expressed as photons
                             (dark counts divided by the quantum efficiency)

        Returns:
            Tuple of (detector-plane fluxes, NoiseBudget)
        """
        start, end = window
        detected = []
        entries = []
        for flux in fluxes:
            out = self.transmit(flux)
            detected.append(out)

            crystal = flux.integral(start, end)
            detector = out.integral(start, end)
            stages = self.stage_factors(flux)
            static = stages["spatial"] * stages["grating"] * stages["fp"]
            if crystal > 0 and static > 0:
                stages["aom"] = detector / (crystal * static)
            else:
                stages["aom"] = float(aom_gate(
                    0.5 * (start + end), self.params.aom_window,
                    self.params.aom_off_transmission, self.params.aom_ramp,
                ))

            entries.append(SourceBudget(
                label=flux.label,
                crystal=crystal,
                detector=detector,
                stages=stages,
                detector_cycle_total=out.total(),
            ))
            logger.debug(f"{flux.label}: {crystal:.4g} at crystal, {detector:.4g} at detector")

        return detected, NoiseBudget(sources=tuple(entries), window=(start, end), dark_equivalent=dark_equivalent)

    def without_fp(self) -> "NoiseFilterChain":
        return NoiseFilterChain(replace(self.params, use_fp=False))


def apply_chain(
    fluxes: Sequence[FluxTimeline],
    params: FilterChainParams,
    window: Tuple[float, float],
    dark_equivalent: float = 0.0
) -> Tuple[List[FluxTimeline], NoiseBudget]:
    """Filter fluxes through a chain built from ``params``."""
    return NoiseFilterChain(params).apply(fluxes, window, dark_equivalent=dark_equivalent)


def calibrate_noise_sources(
    sources: NoiseSourceParams,
    timeline: ProtocolTimeline,
    chain_params: FilterChainParams,
    window: Tuple[float, float],
    target_floor: float,
    times: np.ndarray,
    dark_equivalent: float = 0.0
) -> NoiseSourceParams:
    """
    Rescale the FID magnitude so the budget total hits a target floor.

    The FID dominates the in-window residue, so it absorbs the calibration;
    the other sources keep their configured magnitudes.

    Raises:
        NoiseModelError: If the FID contributes nothing in the window, or the
                         other sources alone already exceed the target
    """
    fluxes = emit_noise(timeline, sources, times)
    _, budget = apply_chain(fluxes, chain_params, window, dark_equivalent=dark_equivalent)

    fid = budget.source("fid").detector
    rest = budget.total_noise_floor - fid
    if fid <= 0:
        raise NoiseModelError("FID contributes nothing in the detection window; cannot calibrate")
    if rest >= target_floor:
        raise NoiseModelError(
            f"noise without FID ({rest:.3g}) already exceeds the target floor {target_floor:.3g}"
        )

    scale = (target_floor - rest) / fid
    logger.debug(f"Calibrated FID by x{scale:.4f} to reach floor {target_floor:.3g}")
    return replace(sources, fid_photons_per_pulse=sources.fid_photons_per_pulse * scale)
