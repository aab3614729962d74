"""Unit-safe domain types and conversions shared by the other modules.

Canonical internal unit for the spectral axis is the vacuum wavenumber
beta = 2*pi/lambda in rad/m. Wavelength I/O is in nm, physical and optical
lengths are in mm, loss coefficients are per mm.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .errors import DataError, DomainError

logger = logging.getLogger(__name__)

C_UM_PER_PS = 299.792458
DB_PER_NEPER = 10.0 * np.log10(np.e)


# Unit conversions

def wavelength_to_wavenumber(lambda_nm):
    """Vacuum wavenumber in rad/m for a wavelength in nm (scalar or array)."""
    lam = np.asarray(lambda_nm, dtype=float)
    if np.any(~np.isfinite(lam)) or np.any(lam <= 0):
        raise DomainError("wavelength must be positive and finite")
    beta = 2.0 * np.pi / (lam * 1e-9)
    return float(beta) if beta.ndim == 0 else beta


def wavenumber_to_wavelength(beta):
    """Wavelength in nm for a vacuum wavenumber in rad/m."""
    b = np.asarray(beta, dtype=float)
    if np.any(~np.isfinite(b)) or np.any(b <= 0):
        raise DomainError("wavenumber must be positive and finite")
    lam = 2.0 * np.pi / b * 1e9
    return float(lam) if lam.ndim == 0 else lam


def alpha_from_k(k, lambda0_nm):
    """Linear loss coefficient (per mm) from the absorption index k."""
    if np.any(np.asarray(k) < 0):
        raise DomainError("absorption index k must be non-negative")
    if np.any(np.asarray(lambda0_nm) <= 0):
        raise DomainError("wavelength must be positive")
    alpha_per_m = 4.0 * np.pi * np.asarray(k, dtype=float) / (np.asarray(lambda0_nm, dtype=float) * 1e-9)
    out = alpha_per_m * 1e-3
    return float(out) if np.ndim(out) == 0 else out


def k_from_alpha(alpha_per_mm, lambda0_nm):
    """Absorption index from a loss coefficient in per mm."""
    if np.any(np.asarray(alpha_per_mm) < 0):
        raise DomainError("loss coefficient must be non-negative")
    if np.any(np.asarray(lambda0_nm) <= 0):
        raise DomainError("wavelength must be positive")
    k = np.asarray(alpha_per_mm, dtype=float) * 1e3 * np.asarray(lambda0_nm, dtype=float) * 1e-9 / (4.0 * np.pi)
    return float(k) if np.ndim(k) == 0 else k


def alpha_to_db(alpha_per_mm):
    """Convert per mm (nepers) to dB/mm."""
    return DB_PER_NEPER * alpha_per_mm


def db_to_alpha(db_per_mm):
    """Convert dB/mm to per mm."""
    return db_per_mm / DB_PER_NEPER


def group_velocity_um_per_ps(group_index):
    """Group velocity c/n_g in um/ps."""
    if group_index <= 0:
        raise DomainError("group index must be positive")
    return C_UM_PER_PS / group_index


def free_spectral_range_nm(lambda_nm, group_index, length_mm):
    """Fringe spacing lambda^2 / (2 n_g L) in nm."""
    if lambda_nm <= 0 or group_index <= 0 or length_mm <= 0:
        raise DomainError("wavelength, group index and length must be positive")
    return lambda_nm**2 / (2.0 * group_index * length_mm * 1e6)


# Configuration-document types

class DispersionModel(BaseModel):
    """Second-order Taylor model of the effective index around beta_ref.

    n(beta) = c0 + c1*(beta - beta_ref) + 0.5*c2*(beta - beta_ref)**2
    with beta in rad/m, c1 in m and c2 in m^2.
    """

    model_config = ConfigDict(frozen=True)

    beta_ref: float = Field(gt=0)
    c0: float = Field(gt=1)
    c1: float = 0.0
    c2: float = 0.0

    @classmethod
    def from_indices(cls, lambda_ref_nm, n, n_g=None, dn_g_dbeta=0.0):
        """Build a model from phase and group index at a reference wavelength.

        ``dn_g_dbeta`` (m) sets the group-index slope at the reference; the
        default of zero gives a dispersion curve without group-velocity
        dispersion at lambda_ref.
        """
        beta_ref = wavelength_to_wavenumber(lambda_ref_nm)
        n_g = n if n_g is None else n_g
        c1 = (n_g - n) / beta_ref
        c2 = (dn_g_dbeta - 2.0 * c1) / beta_ref
        return cls(beta_ref=beta_ref, c0=n, c1=c1, c2=c2)

    def index(self, beta):
        delta = np.asarray(beta, dtype=float) - self.beta_ref
        return self.c0 + self.c1 * delta + 0.5 * self.c2 * delta**2

    def group_index(self, beta):
        b = np.asarray(beta, dtype=float)
        return self.index(b) + b * (self.c1 + self.c2 * (b - self.beta_ref))


def group_index(dispersion, beta):
    """Group index n_g = n + beta * dn/dbeta of a dispersion model."""
    if np.any(np.asarray(beta) <= 0):
        raise DomainError("wavenumber must be positive")
    ng = dispersion.group_index(beta)
    return float(ng) if np.ndim(ng) == 0 else ng


class ModeSpec(BaseModel):
    """One spatial mode of the resonator."""

    model_config = ConfigDict(frozen=True)

    label: str
    dispersion: DispersionModel
    k: float = Field(default=0.0, ge=0)
    reflectivity_R: float = Field(gt=0, lt=1)
    facet_phase_phi: float = 0.0
    excitation_x: float = Field(default=1.0, ge=0)


class ResonatorSpec(BaseModel):
    """Physical device: waveguide length plus the modes it guides.

    Like every spec model, an invalid document raises pydantic's
    ValidationError; the error location names the offending field.
    """

    model_config = ConfigDict(frozen=True)

    length_mm: float = Field(gt=0)
    modes: tuple[ModeSpec, ...]

    @model_validator(mode="after")
    def _check_modes(self):
        if not self.modes:
            raise ValueError("resonator needs at least one mode")
        labels = [m.label for m in self.modes]
        if len(labels) != len(set(labels)):
            raise ValueError("mode labels must be unique")
        return self


class EtalonSpec(BaseModel):
    """Weak parasitic resonator elsewhere in the beam path."""

    model_config = ConfigDict(frozen=True)

    fsr_nm: float = Field(gt=0)
    modulation_depth: float = Field(ge=0, lt=1)
    phase_rad: float = 0.0

    def optical_length_mm(self, wavelength_nm):
        """Where its ripple lands on the optical-length axis near ``wavelength_nm``."""
        return wavelength_nm**2 / (2.0 * self.fsr_nm) * 1e-6


class InstrumentSpec(BaseModel):
    """Measurement chain: source envelope, spectrograph PSF, camera, noise."""

    model_config = ConfigDict(frozen=True)

    pixel_pitch_pm: float = Field(default=4.0, gt=0)
    psf_fwhm_pm: float = Field(default=10.0, ge=0)
    envelope_center_nm: Optional[float] = Field(default=None, gt=0)
    envelope_fwhm_nm: Optional[float] = Field(default=None, gt=0)
    noise_sigma: float = Field(default=0.0, ge=0)
    etalon: Optional[EtalonSpec] = None
    rng_seed: int = 0
    density_factor: int = Field(default=8, ge=8)

    @model_validator(mode="after")
    def _check_envelope(self):
        if (self.envelope_center_nm is None) != (self.envelope_fwhm_nm is None):
            raise ValueError("envelope needs both center and FWHM")
        return self

    @property
    def psf_sigma_nm(self):
        return self.psf_fwhm_pm * 1e-3 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

    def ideal(self):
        """Same spectrograph and camera without source, etalon or noise."""
        return self.model_copy(
            update={"envelope_center_nm": None, "envelope_fwhm_nm": None,
                    "noise_sigma": 0.0, "etalon": None}
        )


# Array-carrying values

@dataclass(frozen=True, eq=False)
class Spectrum:
    """Intensity sampled against vacuum wavelength.

    Args:
        wavelength_nm (array): Strictly increasing wavelengths in nm
        intensity (array): Non-negative intensities, arbitrary linear units
        metadata (dict): Exposure central wavelength, source tag, stitch info
    """

    wavelength_nm: np.ndarray
    intensity: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        wl = np.asarray(self.wavelength_nm, dtype=float)
        inten = np.asarray(self.intensity, dtype=float)
        if wl.ndim != 1 or wl.shape != inten.shape:
            raise DataError("wavelength and intensity must be 1-D arrays of equal length")
        if wl.size < 2:
            raise DataError("a spectrum needs at least two samples")
        if not (np.all(np.isfinite(wl)) and np.all(np.isfinite(inten))):
            raise DataError("spectrum contains NaN or infinite values")
        if np.any(np.diff(wl) <= 0):
            raise DataError("wavelengths must be strictly increasing")
        if wl[0] <= 0:
            raise DataError("wavelengths must be positive")
        if np.any(inten < 0):
            raise DataError("intensities must be non-negative")
        object.__setattr__(self, "wavelength_nm", wl)
        object.__setattr__(self, "intensity", inten)
        object.__setattr__(self, "metadata", dict(self.metadata))

    def __len__(self):
        return self.wavelength_nm.size

    @property
    def span_nm(self):
        return float(self.wavelength_nm[-1] - self.wavelength_nm[0])

    @property
    def center_nm(self):
        return float(0.5 * (self.wavelength_nm[0] + self.wavelength_nm[-1]))

    def scaled(self, factor):
        return Spectrum(self.wavelength_nm, self.intensity * factor, self.metadata)

    def to_frame(self):
        return pd.DataFrame({"wavelength_nm": self.wavelength_nm, "intensity": self.intensity})


@dataclass(frozen=True)
class ModeDetection:
    """Quantities recovered for one mode from its Fourier peak ladder."""

    optical_length_mm: float
    group_index: Optional[float]
    harmonic_amplitudes: tuple
    r_tilde: Optional[float]
    confirmed: bool
    excitation_fraction: float = 0.0
    r_tilde_sigma: Optional[float] = None
    unresolvable: bool = False
    bias_factor: Optional[float] = None
    r_tilde_corrected: Optional[float] = None
    flags: tuple = ()

    @property
    def group_velocity_um_per_ps(self):
        if self.group_index is None:
            return None
        return group_velocity_um_per_ps(self.group_index)


# Facet and resonator figures of merit

@dataclass(frozen=True)
class FresnelEstimate:
    R: float
    phi: float


def fresnel_estimates(n, k=0.0):
    """Normal-incidence facet reflectivity and phase for index n + ik.

    Used as an initial estimate of the modal reflectivity. With k = 0 the
    phase is zero by definition; for k > 0 and n^2 + k^2 = 1 it is undefined.
    """
    if n <= 0:
        raise DomainError("refractive index must be positive")
    if k < 0:
        raise DomainError("absorption index must be non-negative")
    R = ((n - 1.0) ** 2 + k**2) / ((n + 1.0) ** 2 + k**2)
    if k == 0:
        return FresnelEstimate(R=float(R), phi=0.0)
    denom = n**2 + k**2 - 1.0
    if np.isclose(denom, 0.0, atol=1e-15):
        raise DomainError("facet phase undefined for n^2 + k^2 = 1")
    return FresnelEstimate(R=float(R), phi=float(np.arctan(-2.0 * k / denom)))


def coefficient_finesse(r_tilde):
    """Coefficient of finesse pi*sqrt(R~)/(1 - R~)."""
    if r_tilde < 0 or r_tilde >= 1:
        raise DomainError("total loss ratio must lie in [0, 1)")
    return float(np.pi * np.sqrt(r_tilde) / (1.0 - r_tilde))
