"""Forward model of broadband transmission spectra of multimode resonators.

The simulator doubles as the oracle for the analysis pipeline: every inverse
operation is verified by simulating a known device and recovering it.
"""

from __future__ import annotations

import logging

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.interpolate import CubicSpline
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigurationError, DataError
from .model import Spectrum, wavelength_to_wavenumber

logger = logging.getLogger(__name__)

PSF_TRUNCATE_SIGMA = 5.0


class ExposurePlan(BaseModel):
    """Spectrograph central-wavelength settings for a stitched measurement."""

    model_config = ConfigDict(frozen=True)

    central_wavelengths_nm: tuple[float, ...] = Field(min_length=1)
    span_nm: float = Field(gt=0)
    overlap_nm: float = Field(default=0.0, ge=0)

    @classmethod
    def contiguous(cls, center_nm, n_exposures, span_nm, overlap_nm):
        """Exposures of equal span, neighbours overlapping by ``overlap_nm``."""
        step = span_nm - overlap_nm
        offsets = (np.arange(n_exposures) - (n_exposures - 1) / 2.0) * step
        return cls(
            central_wavelengths_nm=tuple(float(center_nm + o) for o in offsets),
            span_nm=span_nm,
            overlap_nm=overlap_nm,
        )

    def overlaps(self):
        """Actual overlap between neighbouring exposures, in nm."""
        centers = np.sort(np.asarray(self.central_wavelengths_nm))
        return self.span_nm - np.diff(centers)

    @property
    def coverage_nm(self):
        centers = self.central_wavelengths_nm
        return max(centers) - min(centers) + self.span_nm


def single_mode_transmittance(beta, mode, length_mm):
    """Airy transmittance of one lossy, dispersive mode.

    T = (1-R)^2 A / [(1 - R A)^2 + 4 R A sin^2(n L beta + phi)] with the
    single-pass intensity attenuation A = exp(-2 k L beta).
    """
    b = np.asarray(beta, dtype=float)
    if np.any(b <= 0):
        raise DataError("wavenumber must be positive")
    length_m = length_mm * 1e-3
    R = mode.reflectivity_R
    n = mode.dispersion.index(b)
    A = np.exp(-2.0 * mode.k * length_m * b)
    phase = n * length_m * b + mode.facet_phase_phi
    return (1.0 - R) ** 2 * A / ((1.0 - R * A) ** 2 + 4.0 * R * A * np.sin(phase) ** 2)


def multimode_spectrum(resonator, grid_nm):
    """Excitation-weighted sum of the single-mode transmittances on a grid."""
    if not resonator.modes:
        raise ConfigurationError("resonator has no modes", field="modes")
    grid = np.asarray(grid_nm, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise DataError("wavelength grid must be strictly increasing")
    beta = wavelength_to_wavenumber(grid)
    intensity = np.zeros_like(grid)
    for mode in resonator.modes:
        intensity += mode.excitation_x * single_mode_transmittance(beta, mode, resonator.length_mm)
    return Spectrum(grid, intensity, {"source": "simulated", "length_mm": resonator.length_mm})


def _envelope(wavelength_nm, instrument):
    if instrument.envelope_center_nm is None:
        return np.ones_like(wavelength_nm)
    sigma = instrument.envelope_fwhm_nm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    return np.exp(-0.5 * ((wavelength_nm - instrument.envelope_center_nm) / sigma) ** 2)


def _etalon(wavelength_nm, etalon):
    return 1.0 + etalon.modulation_depth * np.cos(
        2.0 * np.pi * wavelength_nm / etalon.fsr_nm + etalon.phase_rad
    )


def psf_padding_nm(instrument):
    """Margin the dense grid needs on each side of the pixel grid."""
    return PSF_TRUNCATE_SIGMA * instrument.psf_sigma_nm


def dense_grid(band_nm, instrument):
    """Uniform evaluation grid, ``density_factor`` times finer than the pixels.

    Extends past ``band_nm`` by the PSF kernel half-width so the convolution
    is complete at the band edges.
    """
    lo, hi = band_nm
    if hi <= lo:
        raise ConfigurationError("band must be increasing", field="band_nm")
    pad = psf_padding_nm(instrument)
    step = instrument.pixel_pitch_pm * 1e-3 / instrument.density_factor
    n = int(np.ceil((hi - lo + 2.0 * pad) / step)) + 1
    return lo - pad + step * np.arange(n)


def pixel_grid(band_nm, instrument):
    """Camera pixel centres starting at the band edge, spaced by the pitch."""
    lo, hi = band_nm
    pitch = instrument.pixel_pitch_pm * 1e-3
    n = int(np.floor((hi - lo) / pitch + 1e-9)) + 1
    return lo + pitch * np.arange(n)


def apply_instrument(spectrum, instrument, pixel_grid_nm=None, envelope=True, noise_key=0):
    """Pass a densely sampled spectrum through the measurement chain.

    Applies the source envelope, the parasitic etalon, the Gaussian PSF
    (truncated at +-5 sigma), point sampling onto the camera pixel grid and
    intensity-scaled Gaussian noise, in that order. Noise is drawn from
    ``default_rng([rng_seed, noise_key])`` so the output is deterministic.
    """
    wl = spectrum.wavelength_nm
    values = spectrum.intensity.copy()

    # Source and parasitic resonator
    if envelope:
        values *= _envelope(wl, instrument)
    if instrument.etalon is not None:
        values *= _etalon(wl, instrument.etalon)

    # Spectrograph point-spread function
    sigma_nm = instrument.psf_sigma_nm
    if sigma_nm > 0:
        if 2.0 * PSF_TRUNCATE_SIGMA * sigma_nm >= spectrum.span_nm:
            raise ConfigurationError("PSF is wider than the spectrum span", field="psf_fwhm_pm")
        steps = np.diff(wl)
        if not np.allclose(steps, steps.mean(), rtol=1e-6, atol=0):
            uniform = np.linspace(wl[0], wl[-1], wl.size)
            values = CubicSpline(wl, values)(uniform)
            wl = uniform
            steps = np.diff(wl)
        values = gaussian_filter1d(values, sigma_nm / steps.mean(), mode="nearest",
                                   truncate=PSF_TRUNCATE_SIGMA)

    # Camera sampling
    if pixel_grid_nm is None:
        pad = psf_padding_nm(instrument)
        pixel_grid_nm = pixel_grid((wl[0] + pad, wl[-1] - pad), instrument)
    pixels = np.asarray(pixel_grid_nm, dtype=float)
    if pixels[0] < wl[0] - 1e-9 or pixels[-1] > wl[-1] + 1e-9:
        raise ConfigurationError("pixel grid extends past the simulated spectrum", field="band_nm")
    sampled = CubicSpline(wl, values)(pixels)

    if instrument.noise_sigma > 0:
        rng = np.random.default_rng([instrument.rng_seed, noise_key])
        sampled = sampled + instrument.noise_sigma * sampled * rng.standard_normal(sampled.size)
    sampled = np.clip(sampled, 0.0, None)

    metadata = dict(spectrum.metadata)
    metadata.update({"psf_fwhm_pm": instrument.psf_fwhm_pm,
                     "pixel_pitch_pm": instrument.pixel_pitch_pm,
                     "envelope": bool(envelope and instrument.envelope_center_nm is not None)})
    return Spectrum(pixels, sampled, metadata)


def simulate_spectrum(resonator, instrument, band_nm, envelope=True, noise_key=0):
    """Simulate the recorded spectrum of ``resonator`` over ``band_nm``."""
    dense = multimode_spectrum(resonator, dense_grid(band_nm, instrument))
    return apply_instrument(dense, instrument, pixel_grid(band_nm, instrument),
                            envelope=envelope, noise_key=noise_key)


def simulate_exposures(resonator, instrument, plan, stitching=True, envelope=True):
    """One instrument-filtered spectrum per central-wavelength setting.

    Each exposure is tagged with its central wavelength. When stitching is
    intended and neighbours do not overlap, every exposure carries
    ``stitch_warning=True`` in its metadata.
    """
    overlaps = plan.overlaps()
    warn = bool(stitching and np.any(overlaps <= 0))
    if warn:
        logger.warning(f"Exposure plan has non-overlapping neighbours: {overlaps.tolist()}")

    exposures = []
    for index, center in enumerate(plan.central_wavelengths_nm):
        band = band_around(center, plan.span_nm)
        spectrum = simulate_spectrum(resonator, instrument, band, envelope=envelope, noise_key=index)
        spectrum.metadata.update({"lambda_c_nm": float(center), "exposure_index": index,
                                  "stitch_warning": warn})
        exposures.append(spectrum)
    logger.info(f"Simulated {len(exposures)} exposures covering {plan.coverage_nm:.2f} nm")
    return exposures


def band_around(center_nm, span_nm):
    """Band tuple centred on ``center_nm``."""
    return (center_nm - span_nm / 2.0, center_nm + span_nm / 2.0)
