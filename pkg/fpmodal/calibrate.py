"""Czerny-Turner wavelength calibration and stitching of exposures."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.interpolate import CubicSpline
from scipy.optimize import least_squares

from .errors import (CalibrationFitError, ConfigurationError, DataError,
                     GratingGeometryError, RankDeficiencyError)
from .model import Spectrum

logger = logging.getLogger(__name__)

# Ar I reference lines in the 760-815 nm region (nm, air)
ARGON_LINES_NM = (763.5106, 772.3761, 772.4207, 794.8176, 800.6157, 801.4786,
                  810.3693, 811.5311)

FREE_PARAM_FIELDS = {"gamma": "gamma_rad", "focal": "focal_mm", "dx_in": "dx_in_mm"}


class CzernyTurnerParams(BaseModel):
    """Spectrograph geometry entering the modified Czerny-Turner model."""

    model_config = ConfigDict(frozen=True)

    gamma_rad: float
    focal_mm: float = Field(gt=0)
    groove_spacing_nm: float = Field(gt=0)
    order_m: int = Field(default=1, ge=1)
    dx_in_mm: float = 0.0

    @field_validator("gamma_rad")
    @classmethod
    def _gamma_range(cls, value):
        if not abs(value) < np.pi:
            raise ValueError("inclusion angle must satisfy |gamma| < pi")
        return value

    @classmethod
    def from_grooves_per_mm(cls, grooves_per_mm, **kwargs):
        return cls(groove_spacing_nm=1e6 / grooves_per_mm, **kwargs)


class LineObservation(BaseModel):
    """A reference line seen at ``dx_cam_mm`` for central setting ``lambda_c_nm``."""

    model_config = ConfigDict(frozen=True)

    lambda_true_nm: float = Field(gt=0, allow_inf_nan=False)
    lambda_c_nm: float = Field(gt=0, allow_inf_nan=False)
    dx_cam_mm: float = Field(allow_inf_nan=False)


def _grating_angle(params, lambda_c_nm):
    arg = params.order_m * np.asarray(lambda_c_nm, dtype=float) / (
        2.0 * params.groove_spacing_nm * np.cos(params.gamma_rad / 2.0))
    if np.any(np.abs(arg) > 1):
        raise GratingGeometryError(f"no grating angle reaches central wavelength {lambda_c_nm}")
    return np.arcsin(arg)


def czerny_turner_wavelength(params, lambda_c_nm, dx_cam_mm):
    """Wavelength seen at camera offset ``dx_cam_mm`` for central setting ``lambda_c_nm``.

    lambda = d/m [sin(psi - gamma/2 - atan(dx_in/f)) + sin(psi + gamma/2 + atan(dx_cam/f))]
    with the grating angle psi = asin(m lambda_c / (2 d cos(gamma/2))).
    """
    psi = _grating_angle(params, lambda_c_nm)
    f = params.focal_mm
    incident = psi - params.gamma_rad / 2.0 - np.arctan(params.dx_in_mm / f)
    diffracted = psi + params.gamma_rad / 2.0 + np.arctan(np.asarray(dx_cam_mm, dtype=float) / f)
    wl = params.groove_spacing_nm / params.order_m * (np.sin(incident) + np.sin(diffracted))
    return float(wl) if np.ndim(wl) == 0 else wl


def linear_dispersion_nm_per_mm(params, lambda_c_nm, dx_cam_mm=0.0):
    """Analytic d(lambda)/d(dx_cam) of the calibration model."""
    psi = _grating_angle(params, lambda_c_nm)
    u = np.asarray(dx_cam_mm, dtype=float) / params.focal_mm
    theta = psi + params.gamma_rad / 2.0 + np.arctan(u)
    return params.groove_spacing_nm / params.order_m * np.cos(theta) / (params.focal_mm * (1.0 + u**2))


def wavelength_to_offset(params, lambda_c_nm, lambda_nm):
    """Camera offset (mm) at which ``lambda_nm`` lands; inverse of the model."""
    psi = _grating_angle(params, lambda_c_nm)
    incident = psi - params.gamma_rad / 2.0 - np.arctan(params.dx_in_mm / params.focal_mm)
    s = params.order_m * np.asarray(lambda_nm, dtype=float) / params.groove_spacing_nm - np.sin(incident)
    if np.any(np.abs(s) > 1):
        raise GratingGeometryError("wavelength is not diffracted for this grating setting")
    dx = params.focal_mm * np.tan(np.arcsin(s) - psi - params.gamma_rad / 2.0)
    return float(dx) if np.ndim(dx) == 0 else dx


def pixel_offsets(n_pixels, pixel_um=9.0, center_pixel=None):
    """Off-centre distance (mm) of each camera pixel."""
    center = (n_pixels - 1) / 2.0 if center_pixel is None else center_pixel
    return (np.arange(n_pixels) - center) * pixel_um * 1e-3


def calibrate_axis(params, lambda_c_nm, dx_cam_mm, intensity, metadata=None):
    """Spectrum on a calibrated wavelength axis from raw camera data."""
    wl = np.asarray(czerny_turner_wavelength(params, lambda_c_nm, dx_cam_mm))
    inten = np.asarray(intensity, dtype=float)
    order = np.argsort(wl)
    meta = {"lambda_c_nm": float(lambda_c_nm)}
    meta.update(metadata or {})
    return Spectrum(wl[order], inten[order], meta)


def synthetic_observations(params, central_wavelengths_nm, lines_nm=ARGON_LINES_NM,
                           noise_pm=0.0, seed=0, sensor_half_width_mm=7.2):
    """Line observations the calibration model predicts for each setting.

    Only lines landing on the sensor are kept. Gaussian noise of ``noise_pm``
    is added to the recorded reference wavelength.
    """
    rng = np.random.default_rng(seed)
    observations = []
    for lambda_c in central_wavelengths_nm:
        for line in lines_nm:
            try:
                dx = wavelength_to_offset(params, lambda_c, line)
            except GratingGeometryError:
                continue
            if abs(dx) > sensor_half_width_mm:
                continue
            noisy = line + noise_pm * 1e-3 * rng.standard_normal() if noise_pm > 0 else line
            observations.append(LineObservation(lambda_true_nm=noisy, lambda_c_nm=lambda_c, dx_cam_mm=dx))
    return observations


@dataclass(frozen=True)
class CalibrationResult:
    """Outcome of a calibration fit; residuals are predicted minus true, in pm."""

    params: CzernyTurnerParams
    free_params: tuple
    residuals_pm: np.ndarray
    rms_pm: float
    param_sigma: dict = field(default_factory=dict)
    n_evaluations: int = 0

    @property
    def chi2_dof(self):
        dof = self.residuals_pm.size - len(self.free_params)
        return float(np.sum(self.residuals_pm**2) / max(dof, 1))

    def to_dict(self):
        return {
            "params": self.params.model_dump(),
            "free_params": list(self.free_params),
            "residuals_pm": [float(r) for r in self.residuals_pm],
            "rms_pm": self.rms_pm,
            "param_sigma": self.param_sigma,
        }


def fit_calibration(observations, initial, free_params=("gamma", "focal", "dx_in"),
                    max_evaluations=2000):
    """Least-squares fit of the spectrograph geometry to reference lines.

    Minimises sum (lambda_pred - lambda_true)^2 over the free parameters with
    a Levenberg-Marquardt solver; groove spacing and order stay fixed.
    """
    unknown = set(free_params) - set(FREE_PARAM_FIELDS)
    if unknown:
        raise ConfigurationError(f"cannot fit parameters {sorted(unknown)}", field="free_params")
    if not free_params:
        raise ConfigurationError("no free parameters", field="free_params")
    frame = pd.DataFrame([o.model_dump() for o in observations])
    if len(frame) < len(free_params):
        raise RankDeficiencyError(
            f"{len(frame)} observations cannot constrain {len(free_params)} parameters",
            best_params=initial)
    if frame["lambda_c_nm"].nunique() < 2:
        raise RankDeficiencyError("all observations share one central wavelength",
                                  best_params=initial)

    names = [FREE_PARAM_FIELDS[p] for p in free_params]
    lambda_c = frame["lambda_c_nm"].to_numpy()
    dx_cam = frame["dx_cam_mm"].to_numpy()
    lambda_true = frame["lambda_true_nm"].to_numpy()

    def build(x):
        return initial.model_copy(update=dict(zip(names, map(float, x))))

    def residuals(x):
        params = build(x)
        if params.focal_mm <= 0:
            return np.full(lambda_true.size, 1e6)
        try:
            return (czerny_turner_wavelength(params, lambda_c, dx_cam) - lambda_true) * 1e3
        except GratingGeometryError:
            return np.full(lambda_true.size, 1e6)

    x0 = np.array([getattr(initial, n) for n in names], dtype=float)
    result = least_squares(residuals, x0, method="lm", x_scale="jac", ftol=1e-14,
                           xtol=1e-14, gtol=1e-14, max_nfev=max_evaluations)
    best = build(result.x)
    if np.linalg.matrix_rank(result.jac) < len(names):
        raise RankDeficiencyError("observations do not constrain every free parameter",
                                  best_params=best, diagnostic=result.message)
    if not result.success:
        raise CalibrationFitError("calibration fit did not converge", best_params=best,
                                  diagnostic=result.message)

    res = np.asarray(result.fun, dtype=float)
    rms = float(np.sqrt(np.mean(res**2)))
    dof = max(res.size - len(names), 1)
    try:
        cov = np.linalg.inv(result.jac.T @ result.jac) * np.sum(res**2) / dof
        sigma = {n: float(np.sqrt(max(cov[i, i], 0.0))) for i, n in enumerate(names)}
    except np.linalg.LinAlgError:
        sigma = {}
    logger.info(f"Calibration converged after {result.nfev} evaluations, RMS {rms:.3f} pm")
    return CalibrationResult(best, tuple(free_params), res, rms, sigma, int(result.nfev))


@dataclass(frozen=True)
class NonlinearityReport:
    """Largest deviation over a band relative to the band width."""

    max_deviation_pm: float
    band_nm: float

    @property
    def relative(self):
        return self.max_deviation_pm * 1e-3 / self.band_nm

    @property
    def percent(self):
        return 100.0 * self.relative


def nonlinearity_report(params, band, lambda_c_nm=None, reference=None, n_points=401):
    """Nonlinearity of the wavelength axis over ``band``.

    Without ``reference`` the deviation of lambda(dx_cam) from its best
    straight line is reported. With a reference geometry the deviation of
    ``params`` from it is reported instead, which bounds the artificial
    dispersion a calibration error imprints on the spectrum.
    """
    lo, hi = band
    if hi <= lo:
        raise ConfigurationError("band must be increasing", field="calibration_band_nm")
    lambda_c = 0.5 * (lo + hi) if lambda_c_nm is None else lambda_c_nm
    dx_lo, dx_hi = wavelength_to_offset(params, lambda_c, np.array([lo, hi]))
    dx = np.linspace(dx_lo, dx_hi, n_points)
    wl = czerny_turner_wavelength(params, lambda_c, dx)
    if reference is None:
        coeffs = np.polyfit(dx, wl, 1)
        deviation = wl - np.polyval(coeffs, dx)
    else:
        deviation = wl - czerny_turner_wavelength(reference, lambda_c, dx)
    return NonlinearityReport(max_deviation_pm=float(np.max(np.abs(deviation)) * 1e3),
                              band_nm=float(hi - lo))


def stitch(exposures, mismatch_threshold=0.05):
    """Merge overlapping exposures into one spectrum.

    Exposures are ordered by starting wavelength and anchored to the first.
    Each following exposure is scaled by the single factor that best matches
    it to the merged spectrum over their overlap; the overlap is then the
    mean of both. The metadata carries ``relative_scales`` (intensity of each
    exposure relative to the anchor) and ``overlap_mismatch`` (post-scaling
    RMS difference over the mean, per seam).
    """
    if not exposures:
        raise DataError("nothing to stitch")
    if len(exposures) == 1:
        return exposures[0]

    ordered = sorted(exposures, key=lambda s: s.wavelength_nm[0])
    wl = ordered[0].wavelength_nm.copy()
    inten = ordered[0].intensity.copy()
    relative_scales = [1.0]
    mismatches = []

    for nxt in ordered[1:]:
        mask = (wl >= nxt.wavelength_nm[0]) & (wl <= nxt.wavelength_nm[-1])
        if mask.sum() < 2:
            raise DataError(
                f"exposure starting at {nxt.wavelength_nm[0]:.3f} nm does not overlap its neighbour")
        reference = inten[mask]
        candidate = CubicSpline(nxt.wavelength_nm, nxt.intensity)(wl[mask])
        denom = float(candidate @ candidate)
        if denom <= 0 or reference.mean() <= 0:
            raise DataError("overlap carries no signal")
        gain = float(reference @ candidate) / denom
        candidate *= gain
        mismatch = float(np.sqrt(np.mean((reference - candidate) ** 2)) / reference.mean())
        if mismatch > mismatch_threshold:
            logger.warning(f"Overlap mismatch {mismatch:.3f} exceeds {mismatch_threshold}")

        inten[mask] = 0.5 * (reference + candidate)
        tail = nxt.wavelength_nm > wl[-1]
        wl = np.concatenate([wl, nxt.wavelength_nm[tail]])
        inten = np.concatenate([inten, gain * nxt.intensity[tail]])
        relative_scales.append(1.0 / gain)
        mismatches.append(mismatch)

    logger.info(f"Stitched {len(ordered)} exposures into {wl[-1] - wl[0]:.2f} nm")
    metadata = {"source": "stitched", "relative_scales": relative_scales,
                "overlap_mismatch": mismatches,
                "lambda_c_nm": [s.metadata.get("lambda_c_nm") for s in ordered]}
    return Spectrum(wl, np.clip(inten, 0.0, None), metadata)
