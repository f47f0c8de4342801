"""
afc_lib.py - Core physics library for the AFC spin-wave memory simulator

This module contains the stateless functions that move a weak optical pulse
through an atomic frequency comb (AFC) memory:
- Frequency/time grids and transform-limited pulse envelopes
- The absorption-to-dispersion (Hilbert) transform
- AFC comb preparation and the analytic echo-efficiency oracle
- Linear propagation through the comb and echo extraction
- Spin-wave write/read, spin dephasing and efficiency composition

Design Principles:
- All functions are stateless (no global variables)
- Data records are frozen dataclasses holding read-only numpy arrays
- Frequencies are in MHz, times in microseconds, so that f * t is a number
  of cycles and a grid of span S MHz has a time step of 1/S microseconds
- numpy FFT sign convention throughout: a spectral factor exp(-2j*pi*f*tau)
  delays a field by tau

The noise sources, filter stages and photon counting live in src/services/.
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple
import logging
import math

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.optimize import curve_fit, minimize_scalar
from scipy.signal import hilbert
from scipy.special import erfc

logger = logging.getLogger(__name__)


class SpectralError(ValueError):
    """Raised for invalid grids, pulses, spectral profiles or echo windows."""


class TimelineError(ValueError):
    """Raised for invalid protocol schedules or spin-wave parameters."""


# Intensity FWHM -> standard deviation of a Gaussian intensity profile
FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))

# Profiles must be flat over this fraction of the grid at each edge
EDGE_FRACTION = 0.05
EDGE_FLATNESS_TOLERANCE = 1e-3

# Largest pulse energy fraction that may fall outside the time window
PULSE_TRUNCATION_TOLERANCE = 1e-6

TOOTH_SHAPES = ("square", "gaussian")


# =============================================================================
# Spectral Core: grids, envelopes and the Hilbert transform
# =============================================================================

@dataclass(frozen=True)
class SpectralGrid:
    """
    Uniform frequency grid (MHz) and its conjugate time grid (microseconds).

    Frequencies are ``fftshift(fftfreq(n_points, dt))``: ascending, with zero
    detuning at index ``n_points // 2``. Times are ``(k - n_points/2) * dt``,
    so t = 0 sits at the same index.
    """

    span: float
    n_points: int

    @property
    def resolution(self) -> float:
        """Frequency step in MHz."""
        return self.span / self.n_points

    @property
    def dt(self) -> float:
        """Time step in microseconds."""
        return 1.0 / self.span

    @property
    def time_window(self) -> float:
        """Length of the time grid in microseconds."""
        return self.n_points / self.span

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.fftshift(np.fft.fftfreq(self.n_points, d=self.dt))

    @property
    def times(self) -> np.ndarray:
        return (np.arange(self.n_points) - self.n_points // 2) * self.dt

    def supports_comb(self, period: float) -> bool:
        """True when the grid resolves a comb of the given period (MHz)."""
        return self.resolution <= period / 10.0


def make_grid(span: float, n_points: int) -> SpectralGrid:
    """
    Build a symmetric spectral grid.

    Args:
        span: Total frequency width in MHz (must be positive)
        n_points: Number of grid points (must be a power of two)

    Returns:
        SpectralGrid with resolution span/n_points

    Raises:
        SpectralError: If n_points is not a power of two or span <= 0

    Example:
        >>> grid = make_grid(20.0, 2 ** 14)
        >>> round(grid.resolution * 1e3, 3)
        1.221
        >>> grid.time_window
        819.2
    """
    if isinstance(n_points, bool) or not isinstance(n_points, (int, np.integer)):
        raise SpectralError(f"n_points must be an integer, got {n_points!r}")
    if n_points < 2 or (n_points & (n_points - 1)) != 0:
        raise SpectralError(f"n_points must be a power of two, got {n_points}")
    if not math.isfinite(span) or span <= 0:
        raise SpectralError(f"span must be positive, got {span}")

    return SpectralGrid(span=float(span), n_points=int(n_points))


def _readonly(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


def _to_spectrum(samples: np.ndarray, dt: float) -> np.ndarray:
    # Time origin at index n/2, frequencies ascending
    return np.fft.fftshift(np.fft.fft(np.fft.ifftshift(samples))) * dt


def _from_spectrum(spectrum: np.ndarray, dt: float) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(spectrum))) / dt


@dataclass(frozen=True)
class TemporalEnvelope:
    """
    Complex field amplitude on the time grid of a SpectralGrid.

    The amplitude is normalized so that sum(|a|^2) * dt is the mean photon
    number. ``center`` is the nominal time of the originating input pulse and
    ``reference_photon_number`` is the photon number of that input; both are
    carried through propagation so echoes can be measured against the input.
    """

    grid: SpectralGrid
    samples: np.ndarray
    carrier_detuning: float = 0.0
    center: float = 0.0
    reference_photon_number: Optional[float] = None

    def __post_init__(self):
        samples = np.array(self.samples, dtype=complex)
        if samples.shape != (self.grid.n_points,):
            raise SpectralError(
                f"envelope has {samples.shape} samples, grid expects {self.grid.n_points}"
            )
        object.__setattr__(self, "samples", _readonly(samples))
        if self.reference_photon_number is None:
            object.__setattr__(self, "reference_photon_number", self.mean_photon_number)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    @property
    def intensity(self) -> np.ndarray:
        """Photon flux in photons per microsecond."""
        return np.abs(self.samples) ** 2

    @property
    def mean_photon_number(self) -> float:
        return float(np.sum(self.intensity) * self.grid.dt)

    def spectrum(self) -> np.ndarray:
        """Field spectrum on ``grid.frequencies`` (ascending order)."""
        return _to_spectrum(self.samples, self.grid.dt)

    def scaled(self, factor: complex) -> "TemporalEnvelope":
        """Multiply the field by a scalar; the reference input scales with it."""
        return replace(
            self,
            samples=self.samples * factor,
            reference_photon_number=self.reference_photon_number * abs(factor) ** 2,
        )


def envelope_from_spectrum(
    grid: SpectralGrid,
    spectrum: np.ndarray,
    template: Optional[TemporalEnvelope] = None
) -> TemporalEnvelope:
    """
    Inverse of TemporalEnvelope.spectrum().

    Args:
        grid: Grid the spectrum is sampled on
        spectrum: Complex spectrum in ascending-frequency order
        template: Envelope whose carrier, center and reference photon number
                  are carried over (optional)

    Returns:
        TemporalEnvelope on the grid's time axis
    """
    samples = _from_spectrum(np.asarray(spectrum, dtype=complex), grid.dt)
    if template is None:
        return TemporalEnvelope(grid=grid, samples=samples)
    return TemporalEnvelope(
        grid=grid,
        samples=samples,
        carrier_detuning=template.carrier_detuning,
        center=template.center,
        reference_photon_number=template.reference_photon_number,
    )


def gaussian_pulse(
    grid: SpectralGrid,
    center: float,
    fwhm: float,
    mean_photon_number: float,
    carrier_detuning: float = 0.0
) -> TemporalEnvelope:
    """
    Transform-limited Gaussian input pulse normalized to a mean photon number.

    The intensity profile |a(t)|^2 has full width at half maximum ``fwhm``.
    The carrier detuning shifts the spectrum by ``carrier_detuning`` MHz.

    Args:
        grid: Spectral grid whose conjugate time grid hosts the pulse
        center: Pulse center in microseconds
        fwhm: Intensity FWHM in microseconds (the "2 us" input pulse)
        mean_photon_number: Mean photon number n-bar (>= 0)
        carrier_detuning: Carrier offset in MHz

    Returns:
        TemporalEnvelope whose integrated intensity equals mean_photon_number

    Raises:
        SpectralError: If fwhm <= 0, n-bar < 0, the carrier falls outside the
                       grid bandwidth, or more than 1e-6 of the pulse energy
                       would be clipped by the time window

    Example:
        >>> grid = make_grid(20.0, 2 ** 14)
        >>> pulse = gaussian_pulse(grid, 0.0, 2.0, 2.5)
        >>> round(pulse.mean_photon_number, 9)
        2.5
    """
    if fwhm <= 0:
        raise SpectralError(f"pulse FWHM must be positive, got {fwhm}")
    if mean_photon_number < 0:
        raise SpectralError(f"mean photon number must be >= 0, got {mean_photon_number}")

    spectral_fwhm = 4.0 * math.log(2.0) / (math.pi * fwhm)
    if abs(carrier_detuning) + 2.0 * spectral_fwhm >= grid.span / 2.0:
        raise SpectralError(
            f"carrier detuning {carrier_detuning} MHz does not fit in a "
            f"{grid.span} MHz grid"
        )

    times = grid.times
    sigma = fwhm * FWHM_TO_SIGMA
    scale = sigma * math.sqrt(2.0)
    clipped = 0.5 * erfc((center - times[0]) / scale) + 0.5 * erfc((times[-1] - center) / scale)
    if clipped > PULSE_TRUNCATION_TOLERANCE:
        raise SpectralError(
            f"pulse at {center} us (FWHM {fwhm} us) is clipped by the "
            f"time window [{times[0]}, {times[-1]}] us"
        )

    if mean_photon_number == 0:
        samples = np.zeros(grid.n_points, dtype=complex)
    else:
        amplitude = np.exp(-((times - center) ** 2) / (4.0 * sigma ** 2))
        samples = amplitude * np.exp(2j * np.pi * carrier_detuning * (times - center))
        energy = np.sum(np.abs(samples) ** 2) * grid.dt
        samples = samples * math.sqrt(mean_photon_number / energy)

    return TemporalEnvelope(
        grid=grid,
        samples=samples,
        carrier_detuning=float(carrier_detuning),
        center=float(center),
    )


def _check_flat_edges(depth: np.ndarray) -> None:
    n_edge = max(1, int(EDGE_FRACTION * depth.size))
    edges = np.concatenate([depth[:n_edge], depth[-n_edge:]])
    spread = float(edges.max() - edges.min())
    scale = float(depth.max() - depth.min())
    if scale > 0 and spread > EDGE_FLATNESS_TOLERANCE * scale:
        raise SpectralError(
            "depth profile is not flat over the outer 5% of the grid "
            f"(edge variation {spread:.3g}, profile range {scale:.3g})"
        )


def hilbert_phase(depth: np.ndarray) -> np.ndarray:
    """
    Dispersion phase that accompanies an absorption profile.

    Returns the discrete Hilbert transform of depth/2 along the frequency
    axis. With numpy's FFT convention, exp(-depth/2 + 1j*phase) is then the
    transfer function of a causal medium.

    Args:
        depth: Optical depth per grid point (real, >= 0, flat at the edges)

    Returns:
        Phase in radians, same shape as depth

    Raises:
        SpectralError: If depth is negative somewhere or not flat at the
                       outer 5% of the grid (wrap-around would corrupt phase)
    """
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 1 or depth.size < 8:
        raise SpectralError("depth profile must be a 1-D array of at least 8 points")
    if np.any(depth < 0):
        raise SpectralError("optical depth must be non-negative")
    _check_flat_edges(depth)

    return np.imag(hilbert(depth / 2.0))


@dataclass(frozen=True)
class SpectralProfile:
    """
    Optical depth (single trip) on a spectral grid, plus its Hilbert phase.

    The phase is derived in __post_init__; profiles are immutable, so a new
    depth means a new profile.
    """

    grid: SpectralGrid
    depth: np.ndarray
    phase: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        depth = np.array(self.depth, dtype=float)
        if depth.shape != (self.grid.n_points,):
            raise SpectralError(
                f"profile has {depth.shape} points, grid expects {self.grid.n_points}"
            )
        object.__setattr__(self, "depth", _readonly(depth))
        object.__setattr__(self, "phase", _readonly(hilbert_phase(depth)))

    @property
    def frequencies(self) -> np.ndarray:
        return self.grid.frequencies

    @property
    def peak_depth(self) -> float:
        return float(self.depth.max())


def flat_profile(grid: SpectralGrid, depth: float) -> SpectralProfile:
    """Uniform optical depth over the whole grid."""
    return SpectralProfile(grid=grid, depth=np.full(grid.n_points, float(depth)))


# =============================================================================
# Comb Preparation: AFC profiles and the analytic efficiency oracle
# =============================================================================

@dataclass(frozen=True)
class CombParams:
    """
    AFC comb description.

    Attributes:
        period: Comb period Delta in MHz (the AFC delay is 1/period us)
        finesse: Period divided by tooth FWHM (> 1)
        peak_depth: Tooth depth d1 above the background, per pass
        background_depth: Uniform background depth d0, per pass
        tooth_shape: "square" or "gaussian"
        bandwidth: Width of the prepared comb in MHz
        broadening_sigma: Gaussian blur of the teeth in kHz (laser linewidth,
                          comb imperfection); 0 disables it
    """

    period: float
    finesse: float
    peak_depth: float
    background_depth: float = 0.0
    tooth_shape: str = "square"
    bandwidth: float = 8.0
    broadening_sigma: float = 0.0

    def __post_init__(self):
        if self.period <= 0:
            raise SpectralError(f"comb period must be positive, got {self.period}")
        if self.finesse <= 1:
            raise SpectralError(f"comb finesse must exceed 1, got {self.finesse}")
        if self.peak_depth < 0 or self.background_depth < 0:
            raise SpectralError("comb depths must be non-negative")
        if self.tooth_shape not in TOOTH_SHAPES:
            raise SpectralError(
                f"tooth shape must be one of {TOOTH_SHAPES}, got {self.tooth_shape!r}"
            )
        if self.bandwidth < 2 * self.period:
            raise SpectralError(
                f"comb bandwidth {self.bandwidth} MHz holds fewer than two periods"
            )
        if self.broadening_sigma < 0:
            raise SpectralError("tooth broadening must be non-negative")

    @classmethod
    def from_delay(cls, afc_delay: float, **kwargs) -> "CombParams":
        """Build comb parameters from the AFC delay 1/Delta in microseconds."""
        if afc_delay <= 0:
            raise SpectralError(f"AFC delay must be positive, got {afc_delay}")
        return cls(period=1.0 / afc_delay, **kwargs)

    @property
    def tooth_width(self) -> float:
        """Tooth FWHM in MHz."""
        return self.period / self.finesse

    @property
    def afc_delay(self) -> float:
        """Echo delay 1/Delta in microseconds."""
        return 1.0 / self.period

    def covers_pulse(self, pulse_fwhm: float) -> bool:
        """True when the comb is at least 5/FWHM wide."""
        return self.bandwidth >= 5.0 / pulse_fwhm

    def resolved_by(self, resolution: float) -> bool:
        """True when a grid step (MHz) samples each tooth at least five times."""
        return resolution <= self.tooth_width / 5.0


def tooth_centers(params: CombParams) -> np.ndarray:
    """
    Centers of the comb teeth in MHz.

    Teeth sit at (m + 1/2) * Delta and only teeth lying fully inside the comb
    bandwidth are kept, so the profile is even in detuning.
    """
    half = params.bandwidth / 2.0
    m_max = int(math.floor((half - params.tooth_width / 2.0) / params.period - 0.5 + 1e-9))
    m = np.arange(-m_max - 1, m_max + 1)
    return (m + 0.5) * params.period


def _square_teeth(frequencies: np.ndarray, centers: np.ndarray, width: float, step: float) -> np.ndarray:
    # Fraction of each grid cell covered by a tooth
    lo = frequencies - step / 2.0
    hi = frequencies + step / 2.0
    left = centers - width / 2.0
    right = centers + width / 2.0
    overlap = np.minimum(hi[None, :], right[:, None]) - np.maximum(lo[None, :], left[:, None])
    coverage = np.clip(overlap, 0.0, None).sum(axis=0) / step
    return np.round(np.clip(coverage, 0.0, 1.0), 12)


def _gaussian_teeth(frequencies: np.ndarray, centers: np.ndarray, width: float) -> np.ndarray:
    offsets = frequencies[None, :] - centers[:, None]
    return np.exp(-4.0 * math.log(2.0) * offsets ** 2 / width ** 2).sum(axis=0)


def prepare_comb(
    params: CombParams,
    grid: SpectralGrid,
    max_depth: float = 2.4
) -> SpectralProfile:
    """
    Build the AFC optical-depth profile.

    The comb is modeled at the spectral-profile level: periodic teeth of
    depth d0 + d1 on a background d0, zero tooth depth outside the comb
    bandwidth. Square teeth are area-weighted per grid cell, so the mean
    depth and the low comb harmonics are exact even when Delta is not a
    multiple of the grid step. An optional Gaussian blur models comb
    imperfection and laser linewidth.

    Args:
        params: Comb description (depths are per pass)
        grid: Spectral grid; its resolution must be <= tooth FWHM / 5
        max_depth: Largest allowed per-pass depth d0 + d1

    Returns:
        SpectralProfile with the dispersion phase already computed

    Raises:
        SpectralError: If the grid is too coarse, the comb is deeper than
                       max_depth, or the comb does not fit inside the grid

    Example:
        >>> grid = make_grid(20.0, 2 ** 14)
        >>> comb = CombParams.from_delay(6.0, finesse=3.0, peak_depth=2.4)
        >>> profile = prepare_comb(comb, grid)
        >>> round(comb.tooth_width * 1e3, 1)
        55.6
    """
    if not params.resolved_by(grid.resolution):
        raise SpectralError(
            f"grid resolution {grid.resolution * 1e3:.3f} kHz is too coarse for "
            f"{params.tooth_width * 1e3:.3f} kHz teeth (needs <= FWHM/5)"
        )
    if params.peak_depth + params.background_depth > max_depth + 1e-12:
        raise SpectralError(
            f"comb depth {params.peak_depth + params.background_depth} exceeds the "
            f"maximum optical depth {max_depth}"
        )
    blur = 4.0 * params.broadening_sigma * 1e-3
    if params.bandwidth + 2.0 * blur > (1.0 - 2.0 * EDGE_FRACTION) * grid.span:
        raise SpectralError(
            f"comb bandwidth {params.bandwidth} MHz does not fit inside the "
            f"{grid.span} MHz grid"
        )

    frequencies = grid.frequencies
    centers = tooth_centers(params)
    if params.tooth_shape == "square":
        teeth = _square_teeth(frequencies, centers, params.tooth_width, grid.resolution)
    else:
        teeth = _gaussian_teeth(frequencies, centers, params.tooth_width)
    teeth = teeth * params.peak_depth

    if params.broadening_sigma > 0:
        sigma_points = params.broadening_sigma * 1e-3 / grid.resolution
        teeth = gaussian_filter1d(teeth, sigma=sigma_points, mode="constant")

    depth = np.clip(teeth, 0.0, None) + params.background_depth
    logger.debug(
        f"Prepared comb: {centers.size} teeth, period {params.period:.4f} MHz, "
        f"peak depth {depth.max():.3f}"
    )
    return SpectralProfile(grid=grid, depth=depth)


def analytic_afc_efficiency(params: CombParams, pass_count: int = 1) -> float:
    """
    Closed-form first-echo efficiency of an AFC.

    For square teeth:
        eta = (d1/F)^2 * sinc^2(pi/F) * exp(-d1/F) * exp(-d0)
    For Gaussian teeth, with mean depth dm = d1 * sqrt(pi / (4 ln 2)) / F:
        eta = dm^2 * exp(-pi^2 / (2 ln 2 F^2)) * exp(-dm) * exp(-d0)
    A tooth blur of standard deviation sigma multiplies eta by
    exp(-4 pi^2 sigma^2 / Delta^2). Depths are multiplied by pass_count.

    Args:
        params: Comb description
        pass_count: Number of passes through the crystal (1 or 2)

    Returns:
        Efficiency in [0, 1]

    Example:
        >>> comb = CombParams.from_delay(6.0, finesse=3.0, peak_depth=2.4)
        >>> round(analytic_afc_efficiency(comb), 3)
        0.197
    """
    peak = params.peak_depth * pass_count
    background = params.background_depth * pass_count
    if peak == 0:
        return 0.0

    finesse = params.finesse
    if params.tooth_shape == "square":
        mean_depth = peak / finesse
        harmonic = mean_depth * np.sinc(1.0 / finesse)
    else:
        mean_depth = peak * math.sqrt(math.pi / (4.0 * math.log(2.0))) / finesse
        harmonic = mean_depth * math.exp(-math.pi ** 2 / (4.0 * math.log(2.0) * finesse ** 2))

    if params.broadening_sigma > 0:
        sigma = params.broadening_sigma * 1e-3
        harmonic *= math.exp(-2.0 * math.pi ** 2 * sigma ** 2 / params.period ** 2)

    efficiency = harmonic ** 2 * math.exp(-mean_depth) * math.exp(-background)
    return float(min(max(efficiency, 0.0), 1.0))


def optimal_finesse(
    peak_depth: float,
    tooth_shape: str = "square",
    background_depth: float = 0.0,
    pass_count: int = 1
) -> float:
    """
    Finesse that maximizes the analytic echo efficiency at fixed peak depth.

    About 2.6 for square teeth at a total depth of 2.4.
    """
    if peak_depth <= 0:
        raise SpectralError("optimal finesse needs a positive peak depth")

    def loss(finesse: float) -> float:
        params = CombParams(
            period=1.0,
            finesse=finesse,
            peak_depth=peak_depth,
            background_depth=background_depth,
            tooth_shape=tooth_shape,
        )
        return -analytic_afc_efficiency(params, pass_count=pass_count)

    result = minimize_scalar(loss, bounds=(1.01, 20.0), method="bounded", options={"xatol": 1e-6})
    return float(result.x)


# =============================================================================
# Echo Engine: linear propagation and echo extraction
# =============================================================================

@dataclass(frozen=True)
class TransferFunction:
    """Complex amplitude response H on the grid (ascending frequencies)."""

    grid: SpectralGrid
    response: np.ndarray
    pass_count: int = 1

    def __post_init__(self):
        response = np.array(self.response, dtype=complex)
        if response.shape != (self.grid.n_points,):
            raise SpectralError("transfer function does not match its grid")
        object.__setattr__(self, "response", _readonly(response))


@dataclass(frozen=True)
class EchoReport:
    """Echo timing and energy bookkeeping for one propagation."""

    echo_time: float
    echo_efficiency: float
    transmitted_fraction: float
    window: Tuple[float, float]


def build_transfer(
    profile: SpectralProfile,
    pass_count: int = 1,
    include_dispersion: bool = True
) -> TransferFunction:
    """
    Linear-response transfer function of the comb.

    H = exp(-D/2 + 1j*phi), with D = pass_count * depth and phi the Hilbert
    phase of D/2. A double pass is one traversal at doubled depth.

    Args:
        profile: Single-trip depth profile
        pass_count: 1 or 2
        include_dispersion: Set False to drop the phase (diagnostics only)

    Returns:
        TransferFunction with |H| <= 1 everywhere

    Raises:
        SpectralError: If pass_count is not 1 or 2
    """
    if pass_count not in (1, 2):
        raise SpectralError(f"pass_count must be 1 or 2, got {pass_count}")

    total_depth = profile.depth * pass_count
    phase = profile.phase * pass_count if include_dispersion else np.zeros_like(total_depth)
    response = np.exp(-total_depth / 2.0 + 1j * phase)
    return TransferFunction(grid=profile.grid, response=response, pass_count=pass_count)


def propagate(envelope: TemporalEnvelope, transfer: TransferFunction) -> TemporalEnvelope:
    """
    Propagate an envelope through a transfer function.

    The output spectrum is H times the input spectrum; the output keeps the
    input's center and reference photon number so echoes can be measured
    against the input.

    Raises:
        SpectralError: If envelope and transfer function use different grids
    """
    if envelope.grid != transfer.grid:
        raise SpectralError(
            f"grid mismatch: envelope on {envelope.grid}, transfer on {transfer.grid}"
        )
    spectrum = envelope.spectrum() * transfer.response
    return envelope_from_spectrum(envelope.grid, spectrum, template=envelope)


def delay_envelope(envelope: TemporalEnvelope, delay: float) -> TemporalEnvelope:
    """Delay an envelope by an arbitrary time using a spectral phase ramp."""
    ramp = np.exp(-2j * np.pi * envelope.grid.frequencies * delay)
    return envelope_from_spectrum(envelope.grid, envelope.spectrum() * ramp, template=envelope)


def default_echo_halfwidth(input_fwhm: float, dt: float) -> float:
    """Echo window half-width: max(1.5 x input FWHM, 3 time steps)."""
    return max(1.5 * input_fwhm, 3.0 * dt)


def _window_mask(times: np.ndarray, start: float, end: float) -> np.ndarray:
    return (times >= start) & (times < end)


def window_energy(envelope: TemporalEnvelope, start: float, end: float) -> float:
    """Photon number of an envelope inside [start, end)."""
    mask = _window_mask(envelope.times, start, end)
    return float(np.sum(envelope.intensity[mask]) * envelope.grid.dt)


def extract_echo(
    output: TemporalEnvelope,
    expected_time: float,
    window_halfwidth: float,
    input_photon_number: Optional[float] = None,
    transmitted_halfwidth: Optional[float] = None,
    input_envelope: Optional[TemporalEnvelope] = None
) -> EchoReport:
    """
    Measure the echo inside a window around its expected time.

    Args:
        output: Propagated envelope
        expected_time: Expected echo time in microseconds (t_input + 1/Delta)
        window_halfwidth: Half-width of the echo window in microseconds
        input_photon_number: Input energy (defaults to the envelope's
                             reference photon number)
        transmitted_halfwidth: Half-width of the transmitted-pulse window
                               around ``output.center`` (defaults to
                               window_halfwidth)
        input_envelope: The input pulse. When given, the directly transmitted
                        copy of it (the projection of the output on the input)
                        is removed before the echo is measured, so the tail of
                        the transmitted pulse does not count as echo

    Returns:
        EchoReport with the intensity-weighted echo centroid, the echo
        efficiency and the transmitted fraction

    Raises:
        SpectralError: If the window leaves the time grid or overlaps the
                       transmitted pulse, or the input envelope
                       lives on another grid
    """
    reference = output.reference_photon_number if input_photon_number is None else input_photon_number
    times = output.times
    start, end = expected_time - window_halfwidth, expected_time + window_halfwidth
    if window_halfwidth <= 0 or start < times[0] or end > times[-1]:
        raise SpectralError(f"echo window [{start}, {end}] us is outside the time grid")

    transmitted_hw = window_halfwidth if transmitted_halfwidth is None else transmitted_halfwidth
    t_start, t_end = output.center - transmitted_hw, output.center + transmitted_hw
    if start < t_end and end > t_start:
        raise SpectralError(
            f"echo window [{start}, {end}] us overlaps the transmitted pulse "
            f"[{t_start}, {t_end}] us"
        )

    echo_field = output.samples
    if input_envelope is not None:
        if input_envelope.grid != output.grid:
            raise SpectralError("input envelope and output are on different grids")
        norm = float(np.vdot(input_envelope.samples, input_envelope.samples).real)
        if norm > 0:
            direct = np.vdot(input_envelope.samples, echo_field) / norm
            echo_field = echo_field - direct * input_envelope.samples

    mask = _window_mask(times, start, end)
    intensity = np.abs(echo_field[mask]) ** 2
    weight = float(np.sum(intensity))
    echo_time = float(np.sum(times[mask] * intensity) / weight) if weight > 0 else float(expected_time)

    echo_energy = weight * output.grid.dt
    transmitted_energy = window_energy(output, t_start, t_end)
    if reference > 0:
        efficiency = echo_energy / reference
        transmitted = transmitted_energy / reference
    else:
        efficiency = transmitted = 0.0

    return EchoReport(
        echo_time=echo_time,
        echo_efficiency=float(efficiency),
        transmitted_fraction=float(transmitted),
        window=(start, end),
    )


# =============================================================================
# Spin-Wave Stage: control pulses, dephasing and efficiency composition
# =============================================================================

@dataclass(frozen=True)
class SpinParams:
    """
    Spin transition parameters.

    Attributes:
        linewidth: Inhomogeneous spin linewidth FWHM in kHz
        coherence_time: Spin coherence time T2 in ms
        transfer_efficiency: Transfer efficiency per control pulse, in [0, 1]
    """

    linewidth: float = 8.0
    coherence_time: float = 15.0
    transfer_efficiency: float = 0.49

    def __post_init__(self):
        if self.linewidth <= 0:
            raise TimelineError(f"spin linewidth must be positive, got {self.linewidth}")
        if self.coherence_time <= 0:
            raise TimelineError(f"spin coherence time must be positive, got {self.coherence_time}")
        if not 0.0 <= self.transfer_efficiency <= 1.0:
            raise TimelineError(
                f"transfer efficiency outside [0,1] (got {self.transfer_efficiency})"
            )


@dataclass(frozen=True)
class ProtocolTimeline:
    """Event schedule of one memory cycle (all times in microseconds)."""

    t_input: float
    t_c1: float
    t_c2: float
    t_echo: float
    t_oreo: float
    afc_delay: float
    storage_time: float

    @property
    def c1_offset(self) -> float:
        return self.t_c1 - self.t_input

    @property
    def bare_echo_time(self) -> float:
        return self.t_input + self.afc_delay

    def echo_window(self, halfwidth: float) -> Tuple[float, float]:
        return (self.t_echo - halfwidth, self.t_echo + halfwidth)


def schedule(
    afc_delay: float,
    storage_time: float,
    c1_offset: float,
    t_input: float = 0.0
) -> ProtocolTimeline:
    """
    Schedule input, write (C1), read (C2), spin-wave echo and OREO.

    Args:
        afc_delay: AFC delay 1/Delta in microseconds
        storage_time: Spin-wave storage time T_S = t_C2 - t_C1
        c1_offset: Time from the input to C1; must lie in (0, 1/Delta)
        t_input: Input pulse time

    Returns:
        ProtocolTimeline with t_echo = t_input + 1/Delta + T_S and
        t_oreo = t_C2 + 1/Delta

    Raises:
        TimelineError: If C1 would come after the AFC echo, or T_S <= 0

    Example:
        >>> schedule(6.0, 21.0, 3.0).t_echo
        27.0
    """
    if afc_delay <= 0:
        raise TimelineError(f"AFC delay must be positive, got {afc_delay}")
    if storage_time <= 0:
        raise TimelineError(f"storage time must be positive, got {storage_time}")
    if not 0 < c1_offset < afc_delay:
        raise TimelineError(
            f"C1 offset {c1_offset} us must lie between the input and the AFC echo "
            f"(0, {afc_delay}) us"
        )

    t_c1 = t_input + c1_offset
    t_c2 = t_c1 + storage_time
    return ProtocolTimeline(
        t_input=float(t_input),
        t_c1=float(t_c1),
        t_c2=float(t_c2),
        t_echo=float(t_input + afc_delay + storage_time),
        t_oreo=float(t_c2 + afc_delay),
        afc_delay=float(afc_delay),
        storage_time=float(storage_time),
    )


def spin_dephasing(linewidth: float, storage_time: float) -> float:
    """
    Spin-wave rephasing factor after storage time T_S (Gaussian spin line).

        exp(-(pi * gamma * T_S)^2 / (2 ln 2))

    Args:
        linewidth: Inhomogeneous spin linewidth FWHM in kHz
        storage_time: T_S in microseconds (>= 0)

    Returns:
        Factor in (0, 1]

    Example:
        >>> round(spin_dephasing(8.0, 18.0), 3)
        0.863
    """
    if storage_time < 0:
        raise TimelineError(f"storage time must be >= 0, got {storage_time}")
    if linewidth < 0:
        raise TimelineError(f"spin linewidth must be >= 0, got {linewidth}")
    argument = math.pi * linewidth * 1e-3 * storage_time
    return math.exp(-argument ** 2 / (2.0 * math.log(2.0)))


def coherence_decay(coherence_time: float, storage_time: float) -> float:
    """Homogeneous spin decay exp(-2 T_S / T2); T2 in ms, T_S in us."""
    return math.exp(-2.0 * storage_time / (coherence_time * 1e3))


def memory_time(linewidth: float) -> float:
    """Storage time (us) at which spin_dephasing falls to exp(-1)."""
    if linewidth <= 0:
        raise TimelineError(f"spin linewidth must be positive, got {linewidth}")
    return math.sqrt(2.0 * math.log(2.0)) / (math.pi * linewidth * 1e-3)


def end_to_end_efficiency(
    afc_efficiency: float,
    transfer_efficiency: float,
    linewidth: float,
    storage_time: float,
    coherence_time: Optional[float] = None
) -> float:
    """
    Spin-wave echo efficiency from its factors.

        eta_total = eta_afc * eta_T^2 * spin_dephasing(gamma, T_S)

    times exp(-2 T_S / T2) when a coherence time (ms) is given.

    Example:
        >>> round(end_to_end_efficiency(0.05, 0.49, 8.0, 18.0), 4)
        0.0104
    """
    for name, value in (("AFC efficiency", afc_efficiency), ("transfer efficiency", transfer_efficiency)):
        if not 0.0 <= value <= 1.0:
            raise TimelineError(f"{name} outside [0,1] (got {value})")

    efficiency = afc_efficiency * transfer_efficiency ** 2 * spin_dephasing(linewidth, storage_time)
    if coherence_time is not None:
        efficiency *= coherence_decay(coherence_time, storage_time)
    return efficiency


def apply_write_read(
    optical_state: TemporalEnvelope,
    timeline: ProtocolTimeline,
    spin: SpinParams
) -> TemporalEnvelope:
    """
    Apply the write (C1) and read (C2) control pulses to a propagated field.

    Everything the comb would re-emit after C1 is the stored optical
    coherence. A fraction eta_T is transferred to the spin; what stays
    optical is re-emitted as usual with intensity reduced by (1 - eta_T).
    The spin wave is read out T_S later with field amplitude
    eta_T * sqrt(dephasing * T2 decay), pulse shape preserved.

    Args:
        optical_state: Output of propagate() for the input pulse
        timeline: Protocol schedule
        spin: Spin parameters

    Returns:
        Envelope with the suppressed AFC echo and the spin-wave echo at
        timeline.t_echo
    """
    transfer = spin.transfer_efficiency
    after_c1 = optical_state.times >= timeline.t_c1
    samples = optical_state.samples

    stored = replace(optical_state, samples=np.where(after_c1, samples, 0.0))
    kept = np.where(after_c1, samples * math.sqrt(1.0 - transfer), samples)

    retention = spin_dephasing(spin.linewidth, timeline.storage_time)
    retention *= coherence_decay(spin.coherence_time, timeline.storage_time)
    retrieved = delay_envelope(stored, timeline.storage_time).samples * transfer * math.sqrt(retention)

    return replace(optical_state, samples=kept + retrieved)


def storage_time_scan(
    afc_efficiency: float,
    spin: SpinParams,
    storage_times: Sequence[float]
) -> np.ndarray:
    """Spin-wave echo efficiency for each storage time (T2 decay included)."""
    return np.array([
        end_to_end_efficiency(
            afc_efficiency,
            spin.transfer_efficiency,
            spin.linewidth,
            storage_time,
            coherence_time=spin.coherence_time,
        )
        for storage_time in storage_times
    ])


def _gaussian_decay(storage_time, amplitude, linewidth):
    argument = np.pi * linewidth * 1e-3 * storage_time
    return amplitude * np.exp(-argument ** 2 / (2.0 * np.log(2.0)))


def fit_spin_linewidth(
    storage_times: Sequence[float],
    efficiencies: Sequence[float]
) -> Tuple[float, float, float]:
    """
    Fit the Gaussian spin-dephasing law to a storage-time scan.

    Args:
        storage_times: T_S values in microseconds
        efficiencies: Spin-wave echo efficiencies at those T_S

    Returns:
        Tuple of (linewidth_khz, linewidth_error_khz, efficiency_at_zero)

    Raises:
        TimelineError: If fewer than three points are given
    """
    storage_times = np.asarray(storage_times, dtype=float)
    efficiencies = np.asarray(efficiencies, dtype=float)
    if storage_times.size < 3 or storage_times.size != efficiencies.size:
        raise TimelineError("linewidth fit needs at least three (T_S, efficiency) pairs")

    p0 = [float(efficiencies.max()), 5.0]
    popt, pcov = curve_fit(_gaussian_decay, storage_times, efficiencies, p0=p0, maxfev=10000)
    error = float(np.sqrt(pcov[1, 1])) if np.all(np.isfinite(pcov)) else float("nan")
    return abs(float(popt[1])), error, float(popt[0])


def photon_counting_transfer_efficiency(
    target_efficiency: float,
    unit_transfer_efficiency: float
) -> float:
    """
    Per-pulse transfer efficiency that yields a target in-window efficiency.

    Args:
        target_efficiency: Desired spin-wave echo efficiency in the detection
                           window (e.g. the 3.8e-3 photon-counting figure)
        unit_transfer_efficiency: In-window efficiency simulated with eta_T = 1

    Returns:
        eta_T in [0, 1]; the in-window efficiency scales as eta_T^2
    """
    if unit_transfer_efficiency <= 0:
        raise TimelineError("cannot rescale a spin-wave echo with zero efficiency")
    return float(min(1.0, math.sqrt(max(target_efficiency, 0.0) / unit_transfer_efficiency)))
