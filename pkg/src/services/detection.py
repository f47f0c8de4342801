"""
detection.py - Photon counting, SNR and time-bin visibility for the AFC memory

This module turns detector-plane photon fluxes into seeded Poisson count
histograms, estimates signal-to-noise ratios against no-input reference
runs, scans SNR versus mean photon number, and simulates the double-write
time-bin interference with its visibility fit.

Random numbers are drawn per block of trials. Block b of run stream s uses
its own generator seeded from SeedSequence(seed, spawn_key=(s, b)), and a
block's counts are a single Poisson draw of the block-summed mean (a sum of
independent Poisson variables is Poisson). Results therefore do not depend
on the order in which blocks are evaluated.
"""

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple, Union
import logging
import math
import warnings

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import OptimizeWarning, curve_fit

from src.services.filter_chain import FluxTimeline

logger = logging.getLogger(__name__)


class DetectionError(ValueError):
    """Raised for invalid counting, SNR, scan or visibility inputs."""


# =============================================================================
# Detector and histograms
# =============================================================================

@dataclass(frozen=True)
class DetectorParams:
    """
    Single-photon detector and run length.

    Attributes:
        quantum_efficiency: Detection probability per photon, in [0, 1]
        dark_rate: Dark counts per microsecond
        time_bin: Histogram bin width in microseconds
        trials: Number of memory cycles
        seed: Root seed (0 <= seed < 2**64)
        block_size: Trials per random-number block
        histogram_range: (start, end) of the histogram in microseconds
    """

    quantum_efficiency: float = 0.6
    dark_rate: float = 1e-5
    time_bin: float = 0.1
    trials: int = 100_000
    seed: int = 2013
    block_size: int = 1000
    histogram_range: Tuple[float, float] = (-5.0, 45.0)

    def __post_init__(self):
        if not 0.0 <= self.quantum_efficiency <= 1.0:
            raise DetectionError(f"quantum efficiency outside [0,1] (got {self.quantum_efficiency})")
        if self.dark_rate < 0:
            raise DetectionError(f"dark rate must be >= 0, got {self.dark_rate}")
        if self.time_bin <= 0:
            raise DetectionError(f"time bin must be positive, got {self.time_bin}")
        if self.trials < 1 or self.block_size < 1:
            raise DetectionError("trials and block_size must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise DetectionError(f"seed outside [0, 2^64) (got {self.seed})")
        start, end = self.histogram_range
        if end <= start:
            raise DetectionError(f"histogram range {self.histogram_range} is empty")

    @property
    def bin_edges(self) -> np.ndarray:
        start, end = self.histogram_range
        n_bins = int(round((end - start) / self.time_bin))
        if n_bins < 1 or not math.isclose(n_bins * self.time_bin, end - start, rel_tol=1e-9):
            raise DetectionError(
                f"histogram range {self.histogram_range} is not a whole number of "
                f"{self.time_bin} us bins"
            )
        return start + np.arange(n_bins + 1) * self.time_bin

    def block_sizes(self) -> List[int]:
        full, rest = divmod(self.trials, self.block_size)
        return [self.block_size] * full + ([rest] if rest else [])


def block_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for a (stream, ..., block) key under a root seed."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


@dataclass(frozen=True)
class CountHistogram:
    """
    Detector counts per time bin, kept per block of trials.

    ``block_counts`` has shape (n_blocks, n_bins); ``block_trials`` holds
    the number of trials in each block.
    """

    edges: np.ndarray
    block_counts: np.ndarray
    block_trials: np.ndarray

    @property
    def counts(self) -> np.ndarray:
        return self.block_counts.sum(axis=0)

    @property
    def trials(self) -> int:
        return int(self.block_trials.sum())

    @property
    def bin_width(self) -> float:
        return float(self.edges[1] - self.edges[0])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def window_mask(self, window: Tuple[float, float]) -> np.ndarray:
        start, end = window
        if start < self.edges[0] or end > self.edges[-1] or end <= start:
            raise DetectionError(
                f"window {window} is outside the histogram [{self.edges[0]}, {self.edges[-1]}]"
            )
        centers = self.centers
        return (centers >= start) & (centers < end)

    def window_counts(self, window: Tuple[float, float]) -> int:
        return int(self.counts[self.window_mask(window)].sum())

    def window_duration(self, window: Tuple[float, float]) -> float:
        return float(self.window_mask(window).sum() * self.bin_width)

    def rate(self) -> np.ndarray:
        """Counts per trial per microsecond in each bin."""
        return self.counts / (self.trials * self.bin_width)


def expected_bin_counts(flux: FluxTimeline, params: DetectorParams) -> np.ndarray:
    """Mean counts per bin for a single trial: QE * photons + dark counts."""
    edges = params.bin_edges
    times = flux.times
    if edges[0] < times[0] or edges[-1] > times[-1]:
        raise DetectionError(
            f"histogram range {params.histogram_range} is not covered by the flux time axis"
        )
    cumulative = cumulative_trapezoid(flux.flux, times, initial=0.0)
    photons = np.diff(np.interp(edges, times, cumulative))
    return params.quantum_efficiency * np.clip(photons, 0.0, None) + params.dark_rate * params.time_bin


def simulate_counts(flux: FluxTimeline, params: DetectorParams, stream: int = 0) -> CountHistogram:
    """
    Poisson-sample detector counts for ``params.trials`` memory cycles.

    Args:
        flux: Detector-plane photon flux for one cycle (photons/us)
        params: Detector and run parameters
        stream: Run index; different runs under one seed use different streams

    Returns:
        CountHistogram, bit-exactly reproducible for a fixed seed and stream

    Raises:
        DetectionError: If the flux is negative anywhere
    """
    if np.any(flux.flux < 0):
        raise DetectionError(f"flux '{flux.label}' is negative")

    mean_counts = expected_bin_counts(flux, params)
    sizes = params.block_sizes()
    counts = np.empty((len(sizes), mean_counts.size), dtype=np.int64)
    for block, size in enumerate(sizes):
        counts[block] = block_rng(params.seed, stream, block).poisson(mean_counts * size)

    logger.debug(
        f"Simulated {params.trials} trials of '{flux.label}' on stream {stream}: "
        f"{int(counts.sum())} counts"
    )
    return CountHistogram(edges=params.bin_edges, block_counts=counts, block_trials=np.array(sizes))


# =============================================================================
# Signal-to-noise
# =============================================================================

@dataclass(frozen=True)
class SnrEstimate:
    snr: float
    error: float
    signal_counts: int
    noise_counts: int


def _overlap(a: Tuple[float, float], b: Tuple[float, float]) -> bool:
    return a[0] < b[1] and b[0] < a[1]


def estimate_snr(
    hist: CountHistogram,
    signal_window: Tuple[float, float],
    noise_window: Tuple[float, float],
    reference: Optional[CountHistogram] = None
) -> SnrEstimate:
    """
    Signal-to-noise ratio of a window against a noise reference.

    Counts are normalized per trial and per microsecond, so SNR tends to 1
    as the input vanishes. The reference is a separate no-input run when
    given; otherwise the noise window is taken from the same histogram and
    must not overlap the signal window (unless it is the same window).

    Raises:
        DetectionError: If windows overlap partially, leave the histogram,
                        or the noise reference has no counts
    """
    noise_hist = hist if reference is None else reference
    if reference is None and signal_window != noise_window and _overlap(signal_window, noise_window):
        raise DetectionError(f"signal window {signal_window} overlaps noise window {noise_window}")

    signal = hist.window_counts(signal_window)
    noise = noise_hist.window_counts(noise_window)
    if noise == 0:
        raise DetectionError("empty noise reference: no counts in the noise window")

    signal_norm = hist.trials * hist.window_duration(signal_window)
    noise_norm = noise_hist.trials * noise_hist.window_duration(noise_window)
    signal_rate = signal / signal_norm
    noise_rate = noise / noise_norm

    snr = signal_rate / noise_rate
    error = math.sqrt(
        (math.sqrt(signal) / signal_norm / noise_rate) ** 2
        + (snr * math.sqrt(noise) / noise_norm / noise_rate) ** 2
    )
    return SnrEstimate(snr=snr, error=error, signal_counts=signal, noise_counts=noise)


@dataclass(frozen=True)
class StorageCycle:
    """
    Detector-plane fluxes of one storage cycle.

    ``signal_per_photon`` is the retrieved signal for n-bar = 1; the signal
    scales linearly with n-bar. ``noise`` is everything the cycle emits
    without an input pulse.
    """

    signal_per_photon: FluxTimeline
    noise: FluxTimeline
    signal_window: Tuple[float, float]

    def detector_flux(self, mean_photon_number: float) -> FluxTimeline:
        flux = self.noise.flux + mean_photon_number * self.signal_per_photon.flux
        return replace(self.noise, label=f"nbar={mean_photon_number:g}", flux=flux)


@dataclass(frozen=True)
class SnrPoint:
    mean_photon_number: float
    snr: float
    error: float


@dataclass(frozen=True)
class SnrScanResult:
    points: Tuple[SnrPoint, ...]
    slope: float
    slope_error: float
    r_squared: float


def snr_scan(
    photon_numbers: Sequence[float],
    cycle: StorageCycle,
    detector: DetectorParams,
    reference_trials_factor: int = 10
) -> SnrScanResult:
    """
    SNR versus mean photon number with a linear fit through (0, 1).

    Run 0 is the no-input reference with ``reference_trials_factor`` times
    the trials; run i + 1 is the i-th photon number. The fit is weighted
    least squares of SNR - 1 = k * n-bar; R^2 is unweighted.

    Args:
        photon_numbers: Mean photon numbers (non-empty, >= 0)
        cycle: Storage-cycle fluxes
        detector: Detector and run parameters
        reference_trials_factor: Trial multiplier for the noise reference

    Returns:
        SnrScanResult with points, slope k, its error and R^2

    Raises:
        DetectionError: If the list is empty or negative, or no counts at all
    """
    photon_numbers = [float(n) for n in photon_numbers]
    if not photon_numbers:
        raise DetectionError("SNR scan needs at least one photon number")
    if any(n < 0 for n in photon_numbers):
        raise DetectionError("mean photon numbers must be >= 0")

    reference_params = replace(detector, trials=detector.trials * reference_trials_factor)
    reference = simulate_counts(cycle.noise, reference_params, stream=0)
    hists = [
        simulate_counts(cycle.detector_flux(n_bar), detector, stream=index + 1)
        for index, n_bar in enumerate(photon_numbers)
    ]
    if reference.counts.sum() == 0 and all(h.counts.sum() == 0 for h in hists):
        raise DetectionError("all-zero counts: nothing was detected in the scan")

    window = cycle.signal_window
    points = []
    for n_bar, hist in zip(photon_numbers, hists):
        estimate = estimate_snr(hist, window, window, reference=reference)
        points.append(SnrPoint(n_bar, estimate.snr, estimate.error))
        logger.debug(f"n={n_bar:g}: SNR {estimate.snr:.3f} +/- {estimate.error:.3f}")

    x = np.array([p.mean_photon_number for p in points])
    y = np.array([p.snr for p in points])
    errors = np.array([p.error for p in points])
    weights = np.where(errors > 0, 1.0 / np.maximum(errors, 1e-300) ** 2, 1.0)

    denominator = float(np.sum(weights * x ** 2))
    if denominator == 0:
        slope, slope_error = 0.0, 0.0
    else:
        slope = float(np.sum(weights * x * (y - 1.0)) / denominator)
        slope_error = float(1.0 / math.sqrt(denominator))

    residual = float(np.sum((y - (1.0 + slope * x)) ** 2))
    spread = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 - residual / spread if spread > 0 else 1.0

    return SnrScanResult(points=tuple(points), slope=slope, slope_error=slope_error, r_squared=r_squared)


# =============================================================================
# Time-bin interference
# =============================================================================

@dataclass(frozen=True)
class TimeBinConfig:
    """
    Double-write time-bin cycle.

    Attributes:
        afc_delay: 1/Delta of the comb used for the double write (us)
        pulse_fwhm: FWHM of each time-bin pulse (us)
        storage_efficiency: Retrieval efficiency per mode (eta_s)
        noise_per_bin: Noise photons per output bin
        detection_window: Width of each output detection bin (us)
    """

    afc_delay: float = 8.0
    pulse_fwhm: float = 0.8
    storage_efficiency: float = 6.3e-4
    noise_per_bin: float = 5.1e-3
    detection_window: float = 2.0

    def check_separation(self, bin_separation: float) -> None:
        """Raise DetectionError unless the three output bins are resolvable."""
        if bin_separation <= 0:
            raise DetectionError(f"time-bin separation must be positive, got {bin_separation}")
        if bin_separation < 1.5 * self.pulse_fwhm:
            raise DetectionError(
                f"time-bin separation {bin_separation} us does not resolve "
                f"{self.pulse_fwhm} us pulses"
            )
        if 2.0 * bin_separation >= self.afc_delay:
            raise DetectionError(
                f"time-bin separation {bin_separation} us exceeds the AFC window "
                f"(2T must stay below {self.afc_delay} us)"
            )


def coherence_visibility(sigma_f: float, bin_separation: float) -> float:
    """
    Fringe visibility left by laser frequency noise.

        exp(-(2 pi sigma_f T)^2 / 2), sigma_f in kHz, T in us

    Example:
        >>> round(coherence_visibility(25.0, 2.0), 3)
        0.952
    """
    argument = 2.0 * math.pi * sigma_f * 1e-3 * bin_separation
    return math.exp(-argument ** 2 / 2.0)


def expected_visibility(sigma_f: float, bin_separation: float, signal: float, noise: float) -> float:
    """Fringe visibility with S signal and N noise photons per bin: V_coh * S / (S + 2N)."""
    if signal + 2.0 * noise <= 0:
        return 0.0
    return coherence_visibility(sigma_f, bin_separation) * signal / (signal + 2.0 * noise)


def simulate_phase_jitter_visibility(
    sigma_f: float,
    bin_separation: float,
    samples: int,
    rng: np.random.Generator
) -> float:
    """Monte Carlo estimate of <cos(eps)> for Gaussian phase jitter."""
    sigma_phase = 2.0 * math.pi * sigma_f * 1e-3 * bin_separation
    return float(np.mean(np.cos(rng.normal(0.0, sigma_phase, size=samples))))


def timebin_cycle(
    phase: Union[float, np.ndarray],
    bin_separation: float,
    mean_photon_number: float,
    sigma_f: float,
    cycle: TimeBinConfig
) -> np.ndarray:
    """
    Expected photons in the early, middle and late output bins.

    Each input bin (n-bar/2) is retrieved with efficiency eta_s, split over
    two output times. The outer bins carry eta_s n-bar / 4; the middle bin
    carries (eta_s n-bar / 2)(1 + V_coh cos phase). Every bin gets the noise
    floor on top.

    ``phase`` may be an array (one phase per trial); the result then has
    shape (3, n). With sigma_f = 0 the fringe is the jitter-free one.

    Raises:
        DetectionError: If the separation does not fit the AFC window
    """
    cycle.check_separation(bin_separation)
    signal = cycle.storage_efficiency * mean_photon_number
    visibility = coherence_visibility(sigma_f, bin_separation)
    phase = np.asarray(phase, dtype=float)
    outer = np.full_like(phase, signal / 4.0 + cycle.noise_per_bin)
    middle = signal / 2.0 * (1.0 + visibility * np.cos(phase)) + cycle.noise_per_bin
    return np.stack([outer, middle, outer])


@dataclass(frozen=True)
class TimeBinScan:
    """Counts per phase point: shape (n_phases, n_blocks, 3) for early/middle/late."""

    phases: np.ndarray
    block_counts: np.ndarray
    trials: int

    @property
    def middle_counts(self) -> np.ndarray:
        return self.block_counts[:, :, 1]


def simulate_visibility_scan(
    phases: Sequence[float],
    bin_separation: float,
    mean_photon_number: float,
    sigma_f: float,
    cycle: TimeBinConfig,
    detector: DetectorParams,
    stream: int = 0
) -> TimeBinScan:
    """
    Monte Carlo phase scan of the double-write interference.

    Each trial draws its own laser phase error with standard deviation
    2 pi sigma_f T; the middle-bin mean is summed over the block and one
    Poisson draw per bin gives the block's counts.
    """
    cycle.check_separation(bin_separation)
    phases = np.asarray(phases, dtype=float)
    sigma_phase = 2.0 * math.pi * sigma_f * 1e-3 * bin_separation
    qe = detector.quantum_efficiency
    dark = detector.dark_rate * cycle.detection_window

    sizes = detector.block_sizes()
    counts = np.empty((phases.size, len(sizes), 3), dtype=np.int64)
    for index, phase in enumerate(phases):
        for block, size in enumerate(sizes):
            rng = block_rng(detector.seed, stream, index, block)
            jitter = rng.normal(0.0, sigma_phase, size=size)
            bins = timebin_cycle(phase + jitter, bin_separation, mean_photon_number, 0.0, cycle)
            means = qe * bins.sum(axis=1) + size * dark
            counts[index, block] = rng.poisson(means)

    return TimeBinScan(phases=phases, block_counts=counts, trials=detector.trials)


# =============================================================================
# Visibility fit
# =============================================================================

@dataclass(frozen=True)
class VisibilityResult:
    """Fitted fringe A (1 + V cos(phase - phase_offset))."""

    visibility: float
    visibility_error: float
    amplitude: float
    phase_offset: float
    phases: np.ndarray
    counts: np.ndarray


def _fringe(phase, amplitude, visibility, offset):
    return amplitude * (1.0 + visibility * np.cos(phase - offset))


def _fit_fringe(phases: np.ndarray, values: np.ndarray, sigma: Optional[np.ndarray] = None) -> Tuple[float, float, float, float]:
    design = np.column_stack([np.ones_like(phases), np.cos(phases), np.sin(phases)])
    (a, b, c), *_ = np.linalg.lstsq(design, values, rcond=None)
    if a <= 0:
        raise DetectionError("all-zero counts: fringe has no positive mean")
    p0 = [a, math.hypot(b, c) / a, math.atan2(c, b)]

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        try:
            popt, pcov = curve_fit(_fringe, phases, values, p0=p0, sigma=sigma, maxfev=10000)
        except RuntimeError:
            popt, pcov = np.array(p0), np.full((3, 3), np.nan)

    amplitude, visibility, offset = (float(v) for v in popt)
    if visibility < 0:
        visibility, offset = -visibility, offset + math.pi
    error = float(np.sqrt(pcov[1, 1])) if np.isfinite(pcov[1, 1]) else math.nan
    offset = math.remainder(offset, 2.0 * math.pi)
    return amplitude, min(max(visibility, 0.0), 1.0), offset, error


def fit_visibility(
    phases: Sequence[float],
    counts: np.ndarray,
    bootstrap_resamples: int = 200,
    seed: int = 0
) -> VisibilityResult:
    """
    Fit A (1 + V cos(phase - phase0)) to a phase scan.

    Args:
        phases: Phase points in radians (>= 5, spanning >= 2 pi)
        counts: Either one value per phase, or an (n_phases, n_blocks)
                array of per-block counts
        bootstrap_resamples: Resamples over blocks for the error bar
        seed: Seed of the bootstrap generator

    Returns:
        VisibilityResult with V clamped to [0, 1]. With per-block counts the
        error is the bootstrap standard deviation; otherwise it comes from
        the fit covariance.

    Raises:
        DetectionError: If the scan is degenerate or too short
    """
    phases = np.asarray(phases, dtype=float)
    counts = np.asarray(counts, dtype=float)
    if phases.size < 5:
        raise DetectionError(f"visibility fit needs at least 5 phase points, got {phases.size}")
    if np.ptp(phases) == 0:
        raise DetectionError("degenerate phase scan: all phases are equal")
    if np.ptp(phases) < 2.0 * math.pi - 1e-9:
        raise DetectionError("phase scan must span at least 2 pi")
    if counts.shape[0] != phases.size or counts.ndim not in (1, 2):
        raise DetectionError("counts do not match the phase points")

    if counts.ndim == 1:
        amplitude, visibility, offset, error = _fit_fringe(phases, counts)
        return VisibilityResult(visibility, error, amplitude, offset, phases, counts)

    totals = counts.sum(axis=1)
    sigma = np.sqrt(np.maximum(totals, 1.0))
    amplitude, visibility, offset, error = _fit_fringe(phases, totals, sigma=sigma)

    n_blocks = counts.shape[1]
    if n_blocks >= 2 and bootstrap_resamples >= 2:
        rng = np.random.default_rng(seed)
        samples = []
        for _ in range(bootstrap_resamples):
            picks = rng.integers(0, n_blocks, size=counts.shape)
            resampled = np.take_along_axis(counts, picks, axis=1).sum(axis=1)
            try:
                samples.append(_fit_fringe(phases, resampled, sigma=np.sqrt(np.maximum(resampled, 1.0)))[1])
            except DetectionError:
                continue
        if len(samples) >= 2:
            error = float(np.std(samples, ddof=1))

    return VisibilityResult(visibility, error, amplitude, offset, phases, totals)
