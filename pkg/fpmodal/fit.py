"""Loss extraction: total-loss ratios, resolution-bias correction, alpha/R fits."""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field
from scipy.signal import find_peaks

from .errors import (ConfigurationError, DataError, DomainError, UncorrectableBiasError,
                     UnderdeterminedFitError)
from .model import (DispersionModel, ModeSpec, ResonatorSpec, alpha_to_db,
                    wavelength_to_wavenumber)

logger = logging.getLogger(__name__)

R_TILDE_REFERENCE = 0.3
DEFAULT_BAND_SPAN_NM = 14.5
DEFAULT_CENTER_NM = 775.0
MIN_SIMULATED_RATIO = 1e-4


class LossMeasurement(BaseModel):
    """One bias-corrected total-loss ratio sample R~(L)."""

    model_config = ConfigDict(frozen=True)

    length_mm: float = Field(gt=0)
    r_tilde: float = Field(gt=0, lt=1)
    sigma: float = Field(gt=0)
    group_index: Optional[float] = Field(default=None, gt=0)
    waveguide_id: str = ""


@dataclass(frozen=True)
class LossRatio:
    r_tilde: float
    sigma: float
    n_harmonics: int
    unphysical: bool = False


def total_loss_ratio(amplitudes, noise_floor=None):
    """Geometric mean of successive harmonic ratios A_{m+1}/A_m.

    The uncertainty comes from the scatter of the individual ratios; with a
    single ratio it is propagated from the noise floor instead (zero when no
    floor is given). Ratios of one or more flag the result as unphysical.
    """
    amps = np.asarray(amplitudes, dtype=float)
    if amps.size < 2:
        raise DataError("need at least two harmonics for a loss ratio")
    if np.any(amps <= 0):
        raise DomainError("harmonic amplitudes must be positive")
    ratios = amps[1:] / amps[:-1]
    r_tilde = float(np.exp(np.mean(np.log(ratios))))
    if ratios.size > 1:
        sigma = float(r_tilde * np.std(np.log(ratios), ddof=1) / np.sqrt(ratios.size))
    elif noise_floor is not None:
        sigma = float(r_tilde * np.hypot(noise_floor / amps[0], noise_floor / amps[1]))
    else:
        sigma = 0.0
    unphysical = bool(np.any(ratios >= 1.0))
    if unphysical:
        logger.warning(f"Harmonic ladder grows ({ratios.round(4).tolist()}); gain is unphysical")
    return LossRatio(r_tilde, sigma, int(amps.size), unphysical)


# Resolution bias

class ResolutionBiasCache:
    """Correction factors keyed by mode, geometry, instrument and analysis."""

    def __init__(self):
        self._values = {}
        self._lock = threading.Lock()

    def get_or_compute(self, key, compute):
        value = self._values.get(key)
        if value is not None:
            return value
        with self._lock:
            value = self._values.get(key)
            if value is None:
                value = compute()
                self._values[key] = value
        return value

    def clear(self):
        with self._lock:
            self._values.clear()

    def __len__(self):
        return len(self._values)


_BIAS_CACHE = ResolutionBiasCache()


def _reference_band(instrument, band_nm):
    if band_nm is not None:
        return tuple(float(b) for b in band_nm)
    center = instrument.envelope_center_nm or DEFAULT_CENTER_NM
    return (center - DEFAULT_BAND_SPAN_NM / 2.0, center + DEFAULT_BAND_SPAN_NM / 2.0)


def _simulated_bias(group_index, length_mm, instrument, n_harmonics, config, band, r_tilde_ref):
    from .analyze import fourier_spectrum, harmonic_amplitudes, locate_peak
    from .simulate import simulate_spectrum

    beta_c = wavelength_to_wavenumber(0.5 * (band[0] + band[1]))
    mode = ModeSpec(label="reference", dispersion=DispersionModel(beta_ref=beta_c, c0=group_index),
                    reflectivity_R=r_tilde_ref, k=0.0)
    resonator = ResonatorSpec(length_mm=length_mm, modes=(mode,))
    spectrum = simulate_spectrum(resonator, instrument.ideal(), band, envelope=False)
    try:
        fs = fourier_spectrum(spectrum, config, min_fringes=0)
    except (ConfigurationError, DataError) as exc:
        raise UncorrectableBiasError(
            f"PSF washes out the fringes of n_g={group_index:.3f}, L={length_mm} mm") from exc

    expected = group_index * length_mm
    position, _ = locate_peak(fs, expected - 3 * fs.resolution_mm, expected + 3 * fs.resolution_mm)
    ladder = [a for _, a in harmonic_amplitudes(fs, position, n_harmonics)]
    # undamped rung m of a unit-mean Airy record has height 2 r^m
    undamped = 2.0 * r_tilde_ref ** np.arange(1, len(ladder) + 1)
    if len(ladder) < n_harmonics or np.any(np.asarray(ladder) < MIN_SIMULATED_RATIO * undamped):
        raise UncorrectableBiasError(
            f"resolution too poor to correct n_g={group_index:.3f}, L={length_mm} mm")
    measured = total_loss_ratio(ladder).r_tilde
    factor = max(1.0, r_tilde_ref / measured)
    logger.debug(f"Bias factor {factor:.4f} for n_g={group_index:.4f}, L={length_mm} mm")
    return factor


def resolution_bias(group_index, length_mm, instrument, n_harmonics=2, config=None,
                    band_nm=None, r_tilde_ref=R_TILDE_REFERENCE):
    """Factor (>= 1) undoing the PSF damping of the loss ratio.

    A noiseless, dispersionless single mode with the given group index and
    length is passed through the PSF and pixel sampling of ``instrument``
    and analysed with ``config``; the factor is r_tilde_ref over the ratio
    recovered across ``n_harmonics`` harmonics. Factors are cached.
    """
    from .config import AnalysisConfig

    if instrument.psf_fwhm_pm == 0:
        return 1.0
    config = config or AnalysisConfig()
    band = _reference_band(instrument, band_nm)
    key = (round(float(group_index), 6), round(float(length_mm), 6), instrument.ideal(),
           int(n_harmonics), config, band, float(r_tilde_ref))
    return _BIAS_CACHE.get_or_compute(
        key, lambda: _simulated_bias(group_index, length_mm, instrument, n_harmonics,
                                     config, band, r_tilde_ref))


def analytic_resolution_bias(group_index, length_mm, instrument, lambda_nm=DEFAULT_CENTER_NM,
                             n_harmonics=2):
    """Closed-form Gaussian-PSF bias exp(2 (M+1) s^2), s = n_g L sigma_beta.

    Harmonic m sits at 2 m n_g L on the transform axis and is damped by
    exp(-2 m^2 s^2); the geometric mean of M-1 successive ratios picks up
    exp(-2 (M+1) s^2).
    """
    sigma_beta = 2.0 * np.pi * instrument.psf_sigma_nm * 1e-9 / (lambda_nm * 1e-9) ** 2
    s = group_index * length_mm * 1e-3 * sigma_beta
    return float(np.exp(2.0 * (n_harmonics + 1) * s**2))


# Alpha and R

@dataclass(frozen=True)
class AlphaRFit:
    """Weighted log-space fit of ln R~ = ln R - alpha L."""

    alpha_per_mm: float
    R: float
    covariance: np.ndarray
    residuals: pd.DataFrame
    chi2_dof: float
    aggregate: str
    flags: tuple = ()

    @property
    def alpha_db_per_mm(self):
        return float(alpha_to_db(self.alpha_per_mm))

    @property
    def alpha_sigma(self):
        return float(np.sqrt(self.covariance[1, 1]))

    @property
    def R_sigma(self):
        return float(np.sqrt(self.covariance[0, 0]))

    def to_dict(self):
        return {
            "alpha_per_mm": self.alpha_per_mm,
            "alpha_sigma_per_mm": self.alpha_sigma,
            "alpha_db_per_mm": self.alpha_db_per_mm,
            "R": self.R,
            "R_sigma": self.R_sigma,
            "covariance_R_alpha": self.covariance.tolist(),
            "chi2_dof": self.chi2_dof,
            "aggregate": self.aggregate,
            "flags": list(self.flags),
            "residuals": self.residuals.to_dict(orient="records"),
        }


def _measurement_frame(measurements, aggregate):
    frame = pd.DataFrame([m.model_dump() for m in measurements])
    frame["log_r"] = np.log(frame["r_tilde"])
    frame["log_sigma"] = frame["sigma"] / frame["r_tilde"]
    if aggregate == "waveguide":
        return frame
    frame["weight"] = frame["log_sigma"] ** -2
    frame["weighted_log_r"] = frame["weight"] * frame["log_r"]
    grouped = frame.groupby("length_mm", as_index=False).agg(
        weight=("weight", "sum"), weighted_log_r=("weighted_log_r", "sum"),
        n=("waveguide_id", "count"))
    grouped["log_r"] = grouped["weighted_log_r"] / grouped["weight"]
    grouped["log_sigma"] = grouped["weight"] ** -0.5
    grouped["r_tilde"] = np.exp(grouped["log_r"])
    grouped["waveguide_id"] = [f"L={length:g}mm (n={n})" for length, n
                               in zip(grouped["length_mm"], grouped["n"])]
    return grouped


def fit_alpha_R(measurements, aggregate: Literal["waveguide", "length"] = "waveguide"):
    """Joint least-squares estimate of facet reflectivity R and loss alpha.

    Linear weighted fit of ln R~ against L with weights (r_tilde/sigma)^2.
    With ``aggregate="length"`` each length first collapses to its
    inverse-variance mean. The returned covariance is for (R, alpha).
    """
    if aggregate not in ("waveguide", "length"):
        raise DomainError(f"unknown aggregate {aggregate!r}")
    if not measurements:
        raise UnderdeterminedFitError("no measurements")
    frame = _measurement_frame(measurements, aggregate)
    if frame["length_mm"].nunique() < 2:
        raise UnderdeterminedFitError("alpha and R need at least two distinct lengths")

    L = frame["length_mm"].to_numpy(dtype=float)
    y = frame["log_r"].to_numpy(dtype=float)
    w = frame["log_sigma"].to_numpy(dtype=float) ** -2
    design = np.column_stack([np.ones_like(L), -L])
    normal = design.T @ (w[:, None] * design)
    cov_log = np.linalg.inv(normal)
    log_R, alpha = cov_log @ (design.T @ (w * y))
    R = float(np.exp(log_R))

    predicted = design @ np.array([log_R, alpha])
    residual = y - predicted
    dof = y.size - 2
    chi2_dof = float(np.sum(w * residual**2) / dof) if dof > 0 else 0.0

    # Jacobian of (R, alpha) with respect to (ln R, alpha)
    jac = np.diag([R, 1.0])
    covariance = jac @ cov_log @ jac.T

    flags = []
    if alpha < 0:
        flags.append("negative_alpha")
        logger.warning(f"Fitted alpha = {alpha:.4f}/mm is negative (unphysical gain)")
    residuals = pd.DataFrame({
        "waveguide_id": frame["waveguide_id"].to_numpy(),
        "length_mm": L,
        "r_tilde": frame["r_tilde"].to_numpy(dtype=float),
        "r_tilde_fit": np.exp(predicted),
        "log_residual": residual,
        "normalized_residual": residual * np.sqrt(w),
    })
    logger.info(f"Fitted R = {R:.4f}, alpha = {alpha:.4f}/mm from {y.size} points")
    return AlphaRFit(float(alpha), R, covariance, residuals, chi2_dof, aggregate, tuple(flags))


@dataclass(frozen=True)
class LossEstimate:
    alpha_per_mm: float
    alpha_db_per_mm: float
    sigma_per_mm: Optional[float] = None
    flags: tuple = field(default_factory=tuple)


def loss_from_r_tilde(r_tilde, R, length_mm):
    """alpha = ln(R / r_tilde) / L for a known facet reflectivity."""
    if r_tilde <= 0 or R <= 0 or length_mm <= 0:
        raise DomainError("r_tilde, R and length must be positive")
    flags = ()
    if r_tilde > R:
        flags = ("r_tilde_above_R",)
        logger.warning(f"r_tilde {r_tilde:.4f} exceeds R {R:.4f}; loss comes out negative")
    alpha = float(np.log(R / r_tilde) / length_mm)
    return LossEstimate(alpha, float(alpha_to_db(alpha)), None, flags)


def per_mode_loss(r_tilde, r_sigma, fit, length_mm):
    """Loss of one mode using the ensemble R, with both uncertainties propagated."""
    estimate = loss_from_r_tilde(r_tilde, fit.R, length_mm)
    sigma = np.hypot(fit.R_sigma / fit.R, r_sigma / r_tilde) / length_mm
    return LossEstimate(estimate.alpha_per_mm, estimate.alpha_db_per_mm, float(sigma),
                        estimate.flags)


def fringe_contrast_r_tilde(intensity):
    """Single-mode R~ from fringe contrast K = (Imax - Imin)/(Imax + Imin)."""
    values = np.asarray(intensity, dtype=float)
    maxima, _ = find_peaks(values)
    minima, _ = find_peaks(-values)
    if maxima.size == 0 or minima.size == 0:
        raise DataError("no fringes found")
    i_max, i_min = float(np.median(values[maxima])), float(np.median(values[minima]))
    contrast = (i_max - i_min) / (i_max + i_min)
    if not 0 < contrast < 1:
        raise DataError(f"fringe contrast {contrast:.4f} outside (0, 1)")
    return float((1.0 - np.sqrt(1.0 - contrast**2)) / contrast)


def measurements_from_report(report, length_mm, waveguide_id="", min_sigma=1e-6):
    """Loss measurements from the confirmed, corrected modes of a report."""
    measurements = []
    for i, mode in enumerate(report.modes, start=1):
        if not mode.confirmed or mode.r_tilde is None or "unphysical_gain" in mode.flags:
            continue
        r = mode.r_tilde_corrected if mode.r_tilde_corrected is not None else mode.r_tilde
        if not 0 < r < 1:
            continue
        sigma = (mode.r_tilde_sigma or 0.0) * (mode.bias_factor or 1.0)
        measurements.append(LossMeasurement(
            length_mm=length_mm, r_tilde=r, sigma=max(sigma, min_sigma),
            group_index=mode.group_index, waveguide_id=f"{waveguide_id}/mode-{i}"))
    return measurements
