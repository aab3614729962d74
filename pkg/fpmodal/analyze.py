"""Fourier-domain analysis of broadband Fabry-Perot transmission spectra.

A mode with group index n_g in a resonator of length L contributes fringes
cos(2 m n_g L beta) for passes m = 1, 2, ... The transform over beta with
kernel exp(-i x beta) therefore peaks at x = 2 m n_g L. The conjugate axis is
halved and reported in mm, so the fundamental of every mode lands at its
optical length n_g L and the harmonics at integer multiples of it.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.signal import find_peaks

from .config import AnalysisConfig
from .errors import ConfigurationError, DataError, ResolutionError, UncorrectableBiasError
from .model import ModeDetection, wavelength_to_wavenumber, wavenumber_to_wavelength

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0"
AXIS_CONVENTION = "optical_length = x/2 for kernel exp(-i x beta); fundamental at n_g*L"
MIN_SAMPLES = 16

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fpmodal analysis report",
    "type": "object",
    "required": ["schema_version", "band_nm", "n_samples", "resolution_mm", "modes", "warnings"],
    "properties": {
        "schema_version": {"const": REPORT_SCHEMA_VERSION},
        "band_nm": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "n_samples": {"type": "integer", "minimum": MIN_SAMPLES},
        "length_mm": {"type": ["number", "null"]},
        "resolution_mm": {"type": "number", "exclusiveMinimum": 0},
        "n_fringes": {"type": "number"},
        "window": {"type": "string"},
        "fractions_truncated": {"type": "boolean"},
        "warnings": {"type": "array", "items": {"type": "string"}},
        "modes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["label", "optical_length_mm", "harmonic_amplitudes", "r_tilde",
                             "confirmed", "excitation_fraction"],
                "properties": {
                    "label": {"type": "string"},
                    "optical_length_mm": {"type": "number", "exclusiveMinimum": 0},
                    "group_index": {"type": "number", "exclusiveMinimum": 0},
                    "group_velocity_um_per_ps": {"type": "number", "exclusiveMinimum": 0},
                    "harmonic_amplitudes": {"type": "array", "items": {"type": "number"},
                                            "minItems": 1},
                    "r_tilde": {"type": ["number", "null"]},
                    "r_tilde_sigma": {"type": ["number", "null"]},
                    "bias_factor": {"type": ["number", "null"]},
                    "r_tilde_corrected": {"type": ["number", "null"]},
                    "excitation_fraction": {"type": "number", "minimum": 0, "maximum": 1},
                    "confirmed": {"type": "boolean"},
                    "unresolvable": {"type": "boolean"},
                    "flags": {"type": "array", "items": {"type": "string"}},
                },
            },
        },
    },
}


@dataclass(frozen=True, eq=False)
class WavenumberSignal:
    """Samples on a uniform, increasing wavenumber grid (rad/m)."""

    beta: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        values = np.asarray(self.values)
        if beta.ndim != 1 or beta.shape != values.shape:
            raise DataError("wavenumber grid and values must be 1-D arrays of equal length")
        if beta.size < 2 or np.any(np.diff(beta) <= 0):
            raise DataError("wavenumber grid must be strictly increasing")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.beta.size

    @property
    def step(self):
        return float((self.beta[-1] - self.beta[0]) / (self.beta.size - 1))

    def with_values(self, values, **metadata):
        meta = dict(self.metadata)
        meta.update(metadata)
        return WavenumberSignal(self.beta, values, meta)

    def slice(self, start, stop):
        return WavenumberSignal(self.beta[start:stop], self.values[start:stop], self.metadata)


@dataclass(frozen=True, eq=False)
class FourierSpectrum:
    """Modulus of the windowed transform against optical length (mm)."""

    optical_length_mm: np.ndarray
    amplitude: np.ndarray
    metadata: dict = field(default_factory=dict)

    @property
    def bin_mm(self):
        return float(self.optical_length_mm[1] - self.optical_length_mm[0])

    @property
    def resolution_mm(self):
        return float(self.metadata["resolution_mm"])

    @property
    def zero_pad_factor(self):
        return int(self.metadata.get("zero_pad_factor", 1))

    def scaled(self, factor):
        return FourierSpectrum(self.optical_length_mm, self.amplitude * factor, self.metadata)

    def to_frame(self):
        return pd.DataFrame({"optical_length_mm": self.optical_length_mm, "amplitude": self.amplitude})


@dataclass(frozen=True, eq=False)
class Spectrogram:
    """Sliding-window transforms; column j belongs to slice centre wavelength_nm[j]."""

    wavelength_nm: np.ndarray
    optical_length_mm: np.ndarray
    amplitude: np.ndarray
    window_fraction: float
    window: str
    column_warnings: tuple = ()
    column_metadata: tuple = ()

    def column(self, j):
        return FourierSpectrum(self.optical_length_mm, self.amplitude[:, j], self.column_metadata[j])

    def to_frame(self):
        frame = pd.DataFrame(self.amplitude, columns=[f"{wl:.4f}" for wl in self.wavelength_nm])
        frame.insert(0, "optical_length_mm", self.optical_length_mm)
        return frame


# Conditioning

def resample_uniform_wavenumber(spectrum, oversample=1.0):
    """Cubic interpolation of a spectrum onto a uniform wavenumber grid.

    The grid spans the input exactly, carries ``oversample`` times as many
    samples, and keeps the end values of the input.
    """
    if oversample < 1:
        raise ConfigurationError("oversample must be at least 1", field="oversample")
    if len(spectrum) < MIN_SAMPLES:
        raise DataError(f"need at least {MIN_SAMPLES} samples, got {len(spectrum)}")
    if np.any(np.diff(spectrum.wavelength_nm) <= 0):
        raise DataError("wavelength axis must be strictly increasing")
    beta = wavelength_to_wavenumber(spectrum.wavelength_nm)[::-1]
    values = spectrum.intensity[::-1]
    n = int(round(oversample * len(spectrum)))
    grid = np.linspace(beta[0], beta[-1], n)
    resampled = CubicSpline(beta, values)(grid)
    resampled[0], resampled[-1] = values[0], values[-1]
    return WavenumberSignal(grid, resampled, {
        "oversample": float(oversample),
        "source_span_nm": spectrum.span_nm,
        "band_nm": (float(spectrum.wavelength_nm[0]), float(spectrum.wavelength_nm[-1])),
    })


def dominant_optical_length(signal, min_optical_length_mm=0.5):
    """Optical length (mm) of the strongest fringe component above a minimum."""
    centred = signal.with_values(signal.values - np.mean(signal.values))
    fs = mode_spectrum(centred, window="hann", zero_pad_factor=1, min_fringes=0)
    usable = fs.optical_length_mm >= min_optical_length_mm
    if not np.any(usable[1:]):
        raise ConfigurationError("no fringe component above the minimum optical length",
                                 field="min_optical_length_mm")
    amp = np.where(usable, fs.amplitude, -np.inf)
    return float(fs.optical_length_mm[int(np.argmax(amp))])


def detrend(signal, method="divide_smooth_baseline", baseline_periods=20.0,
            fringe_optical_length_mm=None, min_optical_length_mm=0.5):
    """Remove the slowly varying source envelope from a fringe record.

    ``divide_smooth_baseline`` divides by a twice-applied moving average whose
    width spans ``baseline_periods`` periods of the dominant fringe (estimated
    when not given); ``subtract_mean`` removes the DC level only.
    """
    values = signal.values
    if method == "subtract_mean":
        return signal.with_values(values - np.mean(values), detrend=method)
    if method != "divide_smooth_baseline":
        raise ConfigurationError(f"unknown detrend method {method!r}", field="detrend")
    if np.any(np.real(values) <= 0):
        raise DataError("baseline division needs positive intensities")

    x_mm = fringe_optical_length_mm or dominant_optical_length(signal, min_optical_length_mm)
    period_beta = np.pi / (x_mm * 1e-3)
    width = int(np.ceil(baseline_periods * period_beta / signal.step))
    if width > len(signal):
        raise ConfigurationError(
            f"baseline window of {width} samples exceeds the {len(signal)}-sample record",
            field="baseline_periods")

    # Two passes of a boxcar give a triangular kernel with fast-decaying sidelobes
    baseline = pd.Series(np.real(values))
    for _ in range(2):
        baseline = baseline.rolling(window=width, center=True, min_periods=1).mean()
    return signal.with_values(values / baseline.to_numpy(), detrend=method,
                              baseline_width=width)


# Transforms

def window_function(name, n):
    """Taper of length n: rectangular, hann or sinc (Lanczos)."""
    if name == "rectangular":
        return np.ones(n)
    if name == "hann":
        return np.hanning(n)
    if name == "sinc":
        return np.sinc(np.linspace(-1.0, 1.0, n))
    raise ConfigurationError(f"unknown window {name!r}", field="window")


def fourier_transform(signal, window="rectangular", zero_pad_factor=8):
    """Complex transform of the windowed, zero-padded record (all bins)."""
    if zero_pad_factor < 1:
        raise ConfigurationError("zero_pad_factor must be at least 1", field="zero_pad_factor")
    w = window_function(window, len(signal))
    return np.fft.fft(signal.values * w, int(zero_pad_factor) * len(signal))


def mode_spectrum(signal, window="rectangular", zero_pad_factor=8, min_fringes=30,
                  min_optical_length_mm=0.5):
    """Amplitude spectrum against optical length.

    Amplitudes are divided by the coherent gain of the window so a
    unit-amplitude cosine fringe yields a peak of height 1 whatever the
    window. Records holding fewer than ``min_fringes`` periods of the
    strongest fringe are flagged with ``resolution_warning``.
    """
    n = len(signal)
    w = window_function(window, n)
    coeffs = fourier_transform(signal, window, zero_pad_factor)
    nfft = coeffs.size
    half = nfft // 2 + 1
    amplitude = 2.0 * np.abs(coeffs[:half]) / w.sum()
    step = signal.step
    axis_mm = np.pi * np.arange(half) / (nfft * step) * 1e3
    resolution_mm = np.pi / (n * step) * 1e3

    metadata = {
        "window": window,
        "zero_pad_factor": int(zero_pad_factor),
        "oversample": signal.metadata.get("oversample", 1.0),
        "source_span_nm": signal.metadata.get("source_span_nm"),
        "band_nm": signal.metadata.get("band_nm"),
        "axis_convention": AXIS_CONVENTION,
        "resolution_mm": resolution_mm,
        "n_samples": n,
    }
    usable = axis_mm >= max(min_optical_length_mm, 5.0 * resolution_mm)
    if np.any(usable):
        peak_mm = axis_mm[usable][int(np.argmax(amplitude[usable]))]
        n_fringes = peak_mm / resolution_mm
    else:
        n_fringes = 0.0
    metadata["n_fringes"] = float(n_fringes)
    metadata["resolution_warning"] = bool(n_fringes < min_fringes)
    if min_fringes and n_fringes < min_fringes:
        logger.warning(f"Only {n_fringes:.1f} fringes in band; at least {min_fringes} needed "
                       "for a resolved mode spectrum")
    return FourierSpectrum(axis_mm, amplitude, metadata)


# Peaks

def _refine(fs, index):
    """Quadratic interpolation of log-amplitude around a local maximum."""
    amp = fs.amplitude
    axis = fs.optical_length_mm
    if index <= 0 or index >= amp.size - 1:
        return float(axis[index]), float(amp[index])
    tiny = np.finfo(float).tiny
    ym1, y0, yp1 = np.log(np.maximum(amp[index - 1:index + 2], tiny))
    denom = 2.0 * y0 - yp1 - ym1
    p = 0.0 if denom <= 0 else float(np.clip((yp1 - ym1) / (2.0 * denom), -1.0, 1.0))
    height = y0 - 0.25 * (ym1 - yp1) * p
    return float(axis[index] + p * fs.bin_mm), float(np.exp(height))


def locate_peak(fs, lo_mm, hi_mm):
    """Refined position and amplitude of the largest maximum in [lo, hi]."""
    axis = fs.optical_length_mm
    inside = np.flatnonzero((axis >= lo_mm) & (axis <= hi_mm))
    if inside.size == 0:
        raise DataError(f"no samples between {lo_mm} and {hi_mm} mm")
    return _refine(fs, int(inside[np.argmax(fs.amplitude[inside])]))


def harmonic_amplitudes(fs, position_mm, n_harmonics, search_bins=1.0):
    """Peak ladder at m x ``position_mm`` for m = 1..n, without thresholds.

    Each rung is the refined maximum within +-``search_bins`` resolution
    bins of the nominal position. Stops early at the end of the axis.
    """
    amp = fs.amplitude
    hw = max(1, int(round(search_bins * fs.resolution_mm / fs.bin_mm)))
    ladder = []
    for m in range(1, n_harmonics + 1):
        centre = int(round(m * position_mm / fs.bin_mm))
        if centre + hw >= amp.size - 1:
            break
        lo, hi = max(1, centre - hw), min(amp.size - 2, centre + hw)
        index = lo + int(np.argmax(amp[lo:hi + 1]))
        ladder.append(_refine(fs, index))
    return ladder


def noise_floor(fs, quantile=0.9, guard_bins=5.0, window_bins=100.0, peak_factor=3.0):
    """Rolling quantile of the amplitude outside guard bands around peaks."""
    amp = fs.amplitude
    per_bin = max(1, int(round(fs.resolution_mm / fs.bin_mm)))
    median = float(np.median(amp[1:]))
    peaks, _ = find_peaks(amp, height=peak_factor * median)
    marks = np.zeros(amp.size)
    marks[peaks] = 1.0
    guard = int(guard_bins * per_bin)
    near_peak = np.convolve(marks, np.ones(2 * guard + 1), mode="same") > 0
    masked = pd.Series(np.where(near_peak, np.nan, amp))
    floor = masked.rolling(window=int(window_bins * per_bin), center=True,
                           min_periods=1).quantile(quantile).to_numpy()
    fallback = masked.quantile(quantile) if masked.notna().any() else float(amp.min())
    floor = np.where(np.isnan(floor), fallback, floor)
    return np.maximum(floor, np.finfo(float).tiny)


def _floor_at(floor, fs, position_mm):
    return float(floor[min(int(round(position_mm / fs.bin_mm)), floor.size - 1)])


def window_leakage(window, distance_bins):
    """Bound on the sidelobe height of a unit peak ``distance_bins`` resolution bins away."""
    d = abs(distance_bins)
    if window == "hann":
        d = max(d, 2.0)
        return 1.0 / (np.pi * d * (d * d - 1.0))
    if window == "sinc":
        d = max(d, 2.0)
        return 1.0 / (np.pi * d * d)
    return 1.0 / (np.pi * max(d, 1.0))


def _is_modulation_sideband(pos, a, accepted, fs, visible, etalon_mm, merge_bins, max_ratio):
    """Whether a candidate is one of the pair a multiplicative ripple puts around a rung.

    With a known ripple optical length the offset alone decides. Otherwise a
    peak of similar height must sit at the mirrored offset on the other side.
    """
    axis, amp = fs.optical_length_mm, fs.amplitude
    res = fs.resolution_mm
    for acc in accepted:
        for h_pos, h_amp in acc["ladder"]:
            offset = pos - h_pos
            if a > max_ratio * h_amp or abs(offset) < merge_bins * res:
                continue
            if etalon_mm and abs(abs(offset) - etalon_mm) < merge_bins * res:
                return True
            mirror = visible[np.abs(axis[visible] - (h_pos - offset)) <= res]
            if np.any((amp[mirror] >= 0.5 * a) & (amp[mirror] <= 2.0 * a)):
                return True
    return False


def detect_modes(fs, length_mm=None, noise_floor_quantile=0.9, min_prominence=3.0,
                 max_harmonics=4, group_index_range=(1.0, 6.0), min_optical_length_mm=0.5,
                 min_relative_amplitude=0.01, min_harmonic_ratio=1e-3, merge_bins=2.0,
                 sidelobe_factor=2.0, etalon_optical_length_mm=None, max_sideband_ratio=0.5):
    """Find mode peaks and read their harmonic ladders.

    Candidates are local maxima above ``min_prominence`` times the noise floor
    inside the plausible window (n_g within ``group_index_range`` when the
    length is known). Working from the strongest down, a candidate is
    merged (flagged unresolvable) when it lies closer than ``merge_bins``
    resolution bins to an accepted mode, and dropped when it sits on a
    harmonic of one, stays under ``sidelobe_factor`` times the summed
    leakage of the analysis window from the accepted rungs, or is a
    sideband that a parasitic etalon puts at rung +- its optical length.
    Sidebands are at most ``max_sideband_ratio`` of their rung. A mode is
    confirmed when its second harmonic clears the local noise floor.
    """
    from .fit import total_loss_ratio

    if fs.zero_pad_factor < 4:
        raise ConfigurationError("peak interpolation needs zero_pad_factor >= 4",
                                 field="zero_pad_factor")
    axis, amp = fs.optical_length_mm, fs.amplitude
    res = fs.resolution_mm
    window = fs.metadata.get("window", "rectangular")
    floor = noise_floor(fs, noise_floor_quantile)

    if length_mm:
        lo, hi = group_index_range[0] * length_mm, group_index_range[1] * length_mm
    else:
        lo, hi = min_optical_length_mm, axis[-1] / 2.0
    lo = max(lo, min_optical_length_mm)

    visible, _ = find_peaks(amp)
    visible = visible[amp[visible] > min_prominence * floor[visible]]
    index = visible[(axis[visible] >= lo) & (axis[visible] <= hi)]
    if index.size == 0:
        logger.info("No mode peaks above the noise floor")
        return []

    candidates = [_refine(fs, int(i)) for i in index]
    strongest = max(a for _, a in candidates)
    candidates = sorted((c for c in candidates if c[1] >= min_relative_amplitude * strongest),
                        key=lambda c: -c[1])

    accepted = []
    for pos, a in candidates:
        verdict = "mode"
        for acc in accepted:
            d = abs(pos - acc["pos"]) / res
            if d < merge_bins:
                if a > sidelobe_factor * acc["amp"] / (np.pi * max(d, 1.0)):
                    acc["unresolvable"] = True
                verdict = "merged"
                break
        if verdict == "mode":
            for acc in accepted:
                m = int(round(pos / acc["pos"]))
                if m >= 2 and abs(pos - m * acc["pos"]) < merge_bins * res:
                    verdict = "harmonic"
                    break
        if verdict == "mode":
            leakage = sum(h_amp * window_leakage(window, (pos - h_pos) / res)
                          for acc in accepted for h_pos, h_amp in acc["ladder"])
            if a < sidelobe_factor * leakage:
                verdict = "sidelobe"
            elif _is_modulation_sideband(pos, a, accepted, fs, visible, etalon_optical_length_mm,
                                         merge_bins, max_sideband_ratio):
                verdict = "sideband"
        if verdict == "mode":
            accepted.append({"pos": pos, "amp": a, "unresolvable": False,
                             "ladder": harmonic_amplitudes(fs, pos, max_harmonics)})
        elif verdict != "merged":
            logger.debug(f"Dropped {verdict} candidate at {pos:.4f} mm")

    detections = []
    for acc in sorted(accepted, key=lambda c: c["pos"]):
        ladder = acc["ladder"]
        usable = [ladder[0][1]]
        for h_pos, h_amp in ladder[1:]:
            if h_amp <= _floor_at(floor, fs, h_pos) or h_amp < min_harmonic_ratio * usable[0]:
                break
            usable.append(h_amp)
        confirmed = len(usable) >= 2
        flags = []
        r_tilde = sigma = None
        if confirmed:
            ratio = total_loss_ratio(usable, noise_floor=_floor_at(floor, fs, ladder[1][0]))
            r_tilde, sigma = ratio.r_tilde, ratio.sigma
            if ratio.unphysical:
                flags.append("unphysical_gain")
        if acc["unresolvable"]:
            flags.append("unresolvable")
            logger.warning(f"Peak at {acc['pos']:.4f} mm hides closely spaced modes")
        detections.append(ModeDetection(
            optical_length_mm=acc["pos"],
            group_index=acc["pos"] / length_mm if length_mm else None,
            harmonic_amplitudes=tuple(usable),
            r_tilde=r_tilde,
            r_tilde_sigma=sigma,
            confirmed=confirmed,
            unresolvable=acc["unresolvable"],
            flags=tuple(flags),
        ))

    if any(d.confirmed for d in detections):
        fractions, truncated = excitation_fractions(fs, detections)
        detections = [replace(d, excitation_fraction=f,
                              flags=d.flags + (("window_truncated",) if truncated and d.confirmed else ()))
                      for d, f in zip(detections, fractions)]
    logger.info(f"Detected {len(detections)} modes, "
                f"{sum(d.confirmed for d in detections)} confirmed")
    return detections


def excitation_fractions(fs, detections, max_half_width_bins=10.0):
    """Share of first-pass power in each confirmed mode.

    Integrates the amplitude over a symmetric window around each first-pass
    peak: half the gap to the nearest confirmed neighbour, capped at
    ``max_half_width_bins`` resolution bins. Returns fractions aligned with
    ``detections`` (zero for unconfirmed modes) and whether any window was
    truncated by a neighbour.
    """
    confirmed = [d for d in detections if d.confirmed]
    if not confirmed:
        raise DataError("excitation fractions need at least one confirmed mode")
    positions = np.array(sorted(d.optical_length_mm for d in confirmed))
    cap = max_half_width_bins * fs.resolution_mm
    axis = fs.optical_length_mm

    truncated = False
    integrals = {}
    for i, pos in enumerate(positions):
        gaps = []
        if i > 0:
            gaps.append((pos - positions[i - 1]) / 2.0)
        if i < positions.size - 1:
            gaps.append((positions[i + 1] - pos) / 2.0)
        half = min(gaps + [cap])
        truncated = truncated or half < cap
        inside = np.abs(axis - pos) <= half
        integrals[float(pos)] = float(fs.amplitude[inside].sum() * fs.bin_mm)

    total = sum(integrals.values())
    fractions = [integrals[float(d.optical_length_mm)] / total if d.confirmed else 0.0
                 for d in detections]
    if truncated:
        logger.debug("Integration windows truncated at neighbour midpoints")
    return fractions, truncated


# Spectrogram

def spectrogram(signal, window_fraction=0.7, window="sinc", n_slices=9, zero_pad_factor=8,
                min_fringes=30, min_mode_spacing_mm=None, max_workers=None):
    """Sliding-window mode spectra across the band.

    Each slice covers ``window_fraction`` of the record; slice centres are
    spread uniformly over the band and columns ordered by increasing centre
    wavelength. A column is flagged when the slice is too short to resolve
    modes ``min_mode_spacing_mm`` apart (or, without a spacing, when it holds
    fewer than ``min_fringes`` fringes).
    """
    if not 0 < window_fraction <= 1:
        raise ConfigurationError("window_fraction must lie in (0, 1]", field="window_fraction")
    if n_slices < 2:
        raise ConfigurationError("need at least two slices", field="n_slices")
    n = len(signal)
    n_win = int(round(window_fraction * n))
    if n_win < MIN_SAMPLES:
        raise ConfigurationError("slice too short", field="window_fraction")
    starts = np.round(np.linspace(0, n - n_win, n_slices)).astype(int)

    def column(start):
        return mode_spectrum(signal.slice(start, start + n_win), window, zero_pad_factor,
                             min_fringes=min_fringes)

    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        columns = list(executor.map(column, starts))

    centres_beta = np.array([0.5 * (signal.beta[s] + signal.beta[s + n_win - 1]) for s in starts])
    centres_nm = wavenumber_to_wavelength(centres_beta)
    order = np.argsort(centres_nm)

    warnings = []
    for fs in columns:
        if min_mode_spacing_mm is not None:
            warnings.append(bool(fs.resolution_mm > min_mode_spacing_mm / 2.0))
        else:
            warnings.append(fs.metadata["resolution_warning"])
    if any(warnings):
        logger.warning(f"{sum(warnings)} spectrogram columns cannot resolve adjacent modes")

    return Spectrogram(
        wavelength_nm=centres_nm[order],
        optical_length_mm=columns[0].optical_length_mm,
        amplitude=np.column_stack([columns[j].amplitude for j in order]),
        window_fraction=float(window_fraction),
        window=window,
        column_warnings=tuple(warnings[j] for j in order),
        column_metadata=tuple(columns[j].metadata for j in order),
    )


# Pipeline

def fringe_count(signal, min_optical_length_mm=0.5):
    """Periods of the strongest fringe component across the record."""
    x_mm = dominant_optical_length(signal, min_optical_length_mm)
    return x_mm * 1e-3 * len(signal) * signal.step / np.pi


def condition(spectrum, config):
    """Resample and detrend a spectrum according to ``config``."""
    return condition_signal(resample_uniform_wavenumber(spectrum, config.oversample), config)


def condition_signal(signal, config):
    if config.detrend == "divide_smooth_baseline":
        signal = detrend(signal, "divide_smooth_baseline", config.baseline_periods,
                         min_optical_length_mm=config.min_optical_length_mm)
    return detrend(signal, "subtract_mean")


def fourier_spectrum(spectrum, config, min_fringes=None):
    """Mode spectrum of a raw spectrum under ``config``."""
    signal = condition(spectrum, config)
    return mode_spectrum(signal, config.window, config.zero_pad_factor,
                         config.min_fringes if min_fringes is None else min_fringes,
                         config.min_optical_length_mm)


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    """Everything the inverse pipeline recovers from one spectrum."""

    band_nm: tuple
    n_samples: int
    length_mm: Optional[float]
    modes: tuple
    fourier: FourierSpectrum
    fractions_truncated: bool = False
    warnings: tuple = ()

    def to_dict(self):
        modes = []
        for i, mode in enumerate(self.modes, start=1):
            entry = {"label": f"mode-{i}"}
            entry.update(asdict(mode))
            entry["harmonic_amplitudes"] = list(mode.harmonic_amplitudes)
            entry["flags"] = list(mode.flags)
            if mode.group_index is None:
                entry.pop("group_index")
            else:
                entry["group_velocity_um_per_ps"] = mode.group_velocity_um_per_ps
            modes.append(entry)
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "band_nm": [float(b) for b in self.band_nm],
            "n_samples": int(self.n_samples),
            "length_mm": self.length_mm,
            "resolution_mm": self.fourier.resolution_mm,
            "n_fringes": self.fourier.metadata["n_fringes"],
            "window": self.fourier.metadata["window"],
            "fractions_truncated": self.fractions_truncated,
            "warnings": list(self.warnings),
            "modes": modes,
        }


def analyze_spectrum(spectrum, config=None, length_mm=None, instrument=None, strict=True):
    """Run detrend, resampling, transform, detection and bias correction.

    Raises ResolutionError when ``strict`` and the band holds too few
    fringes. Loss ratios are corrected for the instrument resolution when an
    instrument and the waveguide length are known; otherwise they are flagged
    ``bias_uncorrected`` and carry no corrected value.
    """
    from .fit import resolution_bias

    config = config or AnalysisConfig()
    signal = resample_uniform_wavenumber(spectrum, config.oversample)
    n_fringes = fringe_count(signal, config.min_optical_length_mm)
    warnings = []
    if n_fringes < config.min_fringes:
        message = f"only {n_fringes:.1f} fringes in band, {config.min_fringes} required"
        if strict:
            raise ResolutionError(message)
        logger.warning(message)
        warnings.append(message)
        # baseline division needs many fringes per window
        config = config.model_copy(update={"detrend": "subtract_mean"})
    fs = mode_spectrum(condition_signal(signal, config), config.window, config.zero_pad_factor,
                       config.min_fringes, config.min_optical_length_mm)

    etalon_mm = config.etalon_optical_length_mm
    if etalon_mm is None and instrument is not None and instrument.etalon is not None:
        etalon_mm = instrument.etalon.optical_length_mm(float(np.mean(spectrum.wavelength_nm)))
    detections = detect_modes(
        fs, length_mm,
        noise_floor_quantile=config.noise_floor_quantile,
        min_prominence=config.min_prominence,
        max_harmonics=config.max_harmonics,
        group_index_range=config.group_index_range,
        min_optical_length_mm=config.min_optical_length_mm,
        min_relative_amplitude=config.min_relative_amplitude,
        min_harmonic_ratio=config.min_harmonic_ratio,
        etalon_optical_length_mm=etalon_mm,
    )

    band = (round(float(spectrum.wavelength_nm[0]), 3), round(float(spectrum.wavelength_nm[-1]), 3))
    if config.bias_correction and instrument is None and detections:
        logger.warning("No instrument configured; loss ratios are left uncorrected")
    corrected = []
    for d in detections:
        if d.r_tilde is None:
            corrected.append(d)
            continue
        factor = 1.0
        flags = d.flags
        if config.bias_correction and (instrument is None or d.group_index is None):
            flags = flags + ("bias_uncorrected",)
            factor = None
        elif config.bias_correction and instrument.psf_fwhm_pm > 0:
            try:
                factor = resolution_bias(d.group_index, length_mm, instrument,
                                         n_harmonics=len(d.harmonic_amplitudes),
                                         config=config, band_nm=band)
            except UncorrectableBiasError as exc:
                logger.warning(f"Mode at {d.optical_length_mm:.4f} mm: {exc}")
                flags = flags + ("bias_uncorrectable",)
                factor = None
        corrected.append(replace(
            d, bias_factor=factor, flags=flags,
            r_tilde_corrected=None if factor is None else d.r_tilde * factor))

    if any("unresolvable" in d.flags for d in corrected):
        warnings.append("closely spaced or degenerate modes were merged")
    truncated = any("window_truncated" in d.flags for d in corrected)
    return AnalysisReport(
        band_nm=band,
        n_samples=len(spectrum),
        length_mm=length_mm,
        modes=tuple(corrected),
        fourier=fs,
        fractions_truncated=truncated,
        warnings=tuple(warnings),
    )
