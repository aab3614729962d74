"""Shared fixtures: two-mode resonators, instruments and spectrograph geometry."""

import numpy as np
import pytest

from fpmodal.calibrate import CzernyTurnerParams, synthetic_observations
from fpmodal.model import DispersionModel, InstrumentSpec, ModeSpec, ResonatorSpec
from fpmodal.simulate import band_around, simulate_spectrum

LAMBDA_REF_NM = 775.0
BAND_SPAN_NM = 14.5
LENGTH_MM = 0.9
GROUP_DELTA = 0.324


def make_mode(label, n, n_g=None, R=0.3, k=0.0, x=1.0, dn_g_dbeta=0.0):
    dispersion = DispersionModel.from_indices(LAMBDA_REF_NM, n, n_g, dn_g_dbeta)
    return ModeSpec(label=label, dispersion=dispersion, k=k, reflectivity_R=R, excitation_x=x)


def single_mode(n_g, length_mm=LENGTH_MM, R=0.3, k=0.0, n=None):
    n = n_g - GROUP_DELTA if n is None else n
    return ResonatorSpec(length_mm=length_mm, modes=(make_mode("m0", n, n_g, R=R, k=k),))


@pytest.fixture
def band():
    return band_around(LAMBDA_REF_NM, BAND_SPAN_NM)


@pytest.fixture
def ideal_instrument():
    return InstrumentSpec(psf_fwhm_pm=0.0)


@pytest.fixture
def two_mode_resonator():
    """Two modes with equal loss, 80/20 excitation, in a 0.9 mm resonator."""
    return ResonatorSpec(length_mm=LENGTH_MM, modes=(
        make_mode("mode-1", 3.13, 3.13 + GROUP_DELTA, R=0.3, k=1e-5, x=0.8),
        make_mode("mode-2", 3.4, 3.4 + GROUP_DELTA, R=0.3, k=1e-5, x=0.2),
    ))


@pytest.fixture
def two_mode_spectrum(two_mode_resonator, ideal_instrument, band):
    return simulate_spectrum(two_mode_resonator, ideal_instrument, band)


@pytest.fixture
def ct_params():
    """1800 grooves/mm, 750 mm spectrograph with a slightly offset entrance slit."""
    return CzernyTurnerParams.from_grooves_per_mm(1800.0, gamma_rad=0.3, focal_mm=750.0,
                                                  dx_in_mm=0.2)


@pytest.fixture
def ct_initial(ct_params):
    return ct_params.model_copy(update={"gamma_rad": 0.31, "focal_mm": 740.0, "dx_in_mm": 0.0})


def sample_observations(params, noise_pm=0.0, seed=0, n_keep=110):
    """Reference-line observations over 766-801 nm central settings."""
    centers = np.linspace(766.0, 801.0, 250)
    observations = synthetic_observations(params, centers, noise_pm=noise_pm, seed=seed)
    keep = np.sort(np.random.default_rng(seed).choice(len(observations), size=n_keep,
                                                      replace=False))
    return [observations[i] for i in keep]
