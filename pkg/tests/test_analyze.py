import jsonschema
import numpy as np
import pytest

from conftest import LENGTH_MM, make_mode, single_mode
from fpmodal.analyze import (REPORT_SCHEMA, FourierSpectrum, WavenumberSignal, analyze_spectrum,
                             condition, detect_modes, detrend, excitation_fractions,
                             fourier_transform, fringe_count, harmonic_amplitudes, locate_peak,
                             mode_spectrum, resample_uniform_wavenumber, spectrogram,
                             window_leakage)
from fpmodal.config import AnalysisConfig
from fpmodal.errors import ConfigurationError, DataError, ResolutionError
from fpmodal.model import (DispersionModel, InstrumentSpec, EtalonSpec, ResonatorSpec, Spectrum,
                           alpha_from_k, group_index, k_from_alpha, wavelength_to_wavenumber)
from fpmodal.simulate import simulate_spectrum


def cosine_signal(optical_length_mm, n=4096, beta0=8.0e6, step=40.0, amplitude=1.0):
    beta = beta0 + step * np.arange(n)
    values = amplitude * np.cos(2.0 * optical_length_mm * 1e-3 * beta)
    return WavenumberSignal(beta, values, {"oversample": 1.0})


def test_resample_preserves_endpoints_and_count(two_mode_spectrum):
    signal = resample_uniform_wavenumber(two_mode_spectrum, 1.0)
    assert len(signal) == len(two_mode_spectrum)
    assert signal.beta[0] == pytest.approx(wavelength_to_wavenumber(two_mode_spectrum.wavelength_nm[-1]))
    assert np.allclose(np.diff(signal.beta), signal.step)
    assert signal.values[0] == two_mode_spectrum.intensity[-1]


def test_resample_of_beta_uniform_input_is_exact():
    beta = np.linspace(8.0e6, 8.15e6, 3001)
    values = 1.0 + 0.2 * np.cos(1e-4 * (beta - beta[0]))
    spectrum = Spectrum(2e9 * np.pi / beta[::-1], values[::-1])
    signal = resample_uniform_wavenumber(spectrum, 1.0)
    assert np.allclose(signal.values, values, rtol=1e-10)


def test_beta_grid_differs_from_wavelength_grid(band):
    wl = np.linspace(*band, 1001)
    beta = wavelength_to_wavenumber(wl)
    steps = np.abs(np.diff(beta))
    assert (steps.max() - steps.min()) / steps.mean() == pytest.approx(0.037, abs=0.003)


def test_resample_rejects_short_input():
    with pytest.raises(DataError):
        resample_uniform_wavenumber(Spectrum(np.linspace(770.0, 771.0, 10), np.ones(10)))


def test_detrend_flat_envelope_is_scaling(two_mode_spectrum):
    signal = resample_uniform_wavenumber(two_mode_spectrum, 2.0)
    divided = detrend(signal, "divide_smooth_baseline")
    ratio = divided.values / signal.values
    assert np.std(ratio) / np.mean(ratio) < 0.02


def test_detrend_baseline_wider_than_signal(two_mode_spectrum):
    signal = resample_uniform_wavenumber(two_mode_spectrum, 2.0)
    with pytest.raises(ConfigurationError):
        detrend(signal, "divide_smooth_baseline", baseline_periods=1000)


def test_detrend_removes_sled_envelope(band):
    resonator = single_mode(3.6)
    flat = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), band)
    sled = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0, envelope_center_nm=777.0,
                                                       envelope_fwhm_nm=17.4), band)
    config = AnalysisConfig()
    x = 3.6 * LENGTH_MM
    _, flat_peak = locate_peak(_fs(flat, config), x - 0.05, x + 0.05)
    _, sled_peak = locate_peak(_fs(sled, config), x - 0.05, x + 0.05)
    assert sled_peak == pytest.approx(flat_peak, rel=0.03)


def _fs(spectrum, config):
    return mode_spectrum(condition(spectrum, config), config.window, config.zero_pad_factor)


def test_parasitic_etalon_sits_at_short_optical_length(band):
    instrument = InstrumentSpec(psf_fwhm_pm=0.0, etalon=EtalonSpec(fsr_nm=2.0, modulation_depth=0.2))
    spectrum = simulate_spectrum(single_mode(3.6), instrument, band)
    signal = detrend(resample_uniform_wavenumber(spectrum, 2.0), "subtract_mean")
    fs = mode_spectrum(signal, "hann")
    position, _ = locate_peak(fs, 0.05, 1.0)
    assert position < 0.2
    mode_position, _ = locate_peak(fs, 2.5, 4.0)
    assert mode_position == pytest.approx(3.6 * LENGTH_MM, rel=2e-3)


@pytest.mark.parametrize("window", ["rectangular", "hann", "sinc"])
def test_unit_cosine_has_unit_amplitude(window):
    fs = mode_spectrum(cosine_signal(3.0), window, 8, min_fringes=0)
    position, amplitude = locate_peak(fs, 2.5, 3.5)
    assert position == pytest.approx(3.0, abs=fs.bin_mm)
    assert amplitude == pytest.approx(1.0, rel=0.01)


@pytest.mark.parametrize("window, taper", [
    ("rectangular", np.ones),
    ("hann", np.hanning),
    ("sinc", lambda n: np.sinc(np.linspace(-1.0, 1.0, n))),
])
def test_parseval(window, taper):
    signal = cosine_signal(3.0)
    rng = np.random.default_rng(1)
    signal = signal.with_values(signal.values + 0.1 * rng.standard_normal(len(signal)))
    coeffs = fourier_transform(signal, window, zero_pad_factor=1)
    weighted = signal.values * taper(len(signal))
    assert np.sum(np.abs(coeffs) ** 2) / len(signal) == pytest.approx(np.sum(weighted**2), rel=1e-9)


def test_circular_shift_theorem():
    signal = cosine_signal(3.0)
    shift = 17
    n = len(signal)
    original = fourier_transform(signal, "rectangular", 1)
    shifted = fourier_transform(signal.with_values(np.roll(signal.values, shift)), "rectangular", 1)
    phase = np.exp(-2j * np.pi * np.arange(n) * shift / n)
    assert np.allclose(shifted, original * phase, atol=1e-9 * np.abs(original).max())


def test_phase_ramp_shifts_peaks(two_mode_spectrum):
    signal = detrend(resample_uniform_wavenumber(two_mode_spectrum, 2.0), "subtract_mean")
    delta_mm = 0.4
    ramped = signal.with_values(signal.values * np.exp(1j * 2.0 * delta_mm * 1e-3 * signal.beta))
    x = 3.454 * LENGTH_MM
    before, _ = locate_peak(mode_spectrum(signal, "hann"), x - 0.05, x + 0.05)
    after, _ = locate_peak(mode_spectrum(ramped, "hann"), x + delta_mm - 0.05, x + delta_mm + 0.05)
    assert after - before == pytest.approx(delta_mm, abs=2e-3)


def test_resolution_warning_for_short_band():
    resonator = single_mode(3.6)
    spectrum = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), (774.8, 775.2))
    fs = mode_spectrum(resample_uniform_wavenumber(spectrum, 2.0), "hann")
    assert fs.metadata["resolution_warning"]
    with pytest.raises(ResolutionError):
        analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    report = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM, strict=False)
    assert report.warnings


def test_two_mode_round_trip(two_mode_resonator, two_mode_spectrum):
    report = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    modes = report.modes
    assert len(modes) == 2
    assert all(m.confirmed for m in modes)

    beta = wavelength_to_wavenumber(775.0)
    expected = [group_index(m.dispersion, beta) for m in two_mode_resonator.modes]
    for mode, n_g in zip(modes, expected):
        assert mode.group_index == pytest.approx(n_g, rel=5e-3)

    assert modes[0].excitation_fraction == pytest.approx(0.80, abs=0.03)
    assert modes[1].excitation_fraction == pytest.approx(0.20, abs=0.03)

    truth = 0.3 * np.exp(-alpha_from_k(1e-5, 775.0) * LENGTH_MM)
    assert truth == pytest.approx(0.259, abs=1e-3)
    assert modes[0].r_tilde == pytest.approx(modes[1].r_tilde, rel=0.02)
    assert modes[0].r_tilde == pytest.approx(truth, rel=0.02)
    # same loss, different ladder slopes
    slope = [np.log(m.harmonic_amplitudes[0]) for m in modes]
    assert slope[0] - slope[1] == pytest.approx(np.log(4.0), abs=0.1)


def test_ladder_reaches_fourth_pass(two_mode_spectrum):
    report = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    assert len(report.modes[0].harmonic_amplitudes) == 4
    fs = report.fourier
    ladder = harmonic_amplitudes(fs, report.modes[0].optical_length_mm, 4)
    positions = [p for p, _ in ladder]
    assert np.allclose(np.array(positions) / positions[0], [1, 2, 3, 4], rtol=2e-3)


def test_missing_length_omits_group_index(two_mode_spectrum):
    report = analyze_spectrum(two_mode_spectrum, AnalysisConfig())
    assert len(report.modes) == 2
    assert all(m.group_index is None for m in report.modes)
    data = report.to_dict()
    jsonschema.validate(data, REPORT_SCHEMA)
    assert "group_index" not in data["modes"][0]


def test_report_matches_schema(two_mode_spectrum):
    data = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM).to_dict()
    jsonschema.validate(data, REPORT_SCHEMA)
    assert data["schema_version"] == "1.0"
    assert data["modes"][0]["group_velocity_um_per_ps"] == pytest.approx(299.792458 / 3.454, rel=5e-3)


def test_group_index_not_phase_index(band):
    # strongly dispersive: n and n_g differ by 0.6
    resonator = ResonatorSpec(length_mm=LENGTH_MM, modes=(make_mode("m", 3.2, 3.8),))
    spectrum = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), band)
    (mode,) = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM).modes
    assert mode.optical_length_mm == pytest.approx(3.8 * LENGTH_MM, rel=2e-3)


@pytest.mark.parametrize("n_g, v_g", [(4.409, 68.0), (3.702, 81.0)])
def test_group_velocity_readout(band, n_g, v_g):
    spectrum = simulate_spectrum(single_mode(n_g), InstrumentSpec(psf_fwhm_pm=0.0), band)
    (mode,) = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM).modes
    assert mode.group_velocity_um_per_ps == pytest.approx(v_g, abs=1.0)


@pytest.mark.slow
@pytest.mark.parametrize("R", [0.1, 0.3, 0.5])
@pytest.mark.parametrize("alpha_l", [0.0, 0.15, 0.5])
def test_harmonic_ratio_law(band, R, alpha_l):
    k = k_from_alpha(alpha_l / LENGTH_MM, 775.0)
    instrument = InstrumentSpec(psf_fwhm_pm=0.0)
    spectrum = simulate_spectrum(single_mode(3.6, R=R, k=k), instrument, band)
    (mode,) = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM,
                               instrument=instrument).modes
    assert mode.r_tilde_corrected == pytest.approx(R * np.exp(-alpha_l), rel=0.01)


def test_scale_invariance(two_mode_spectrum):
    base = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    scaled = analyze_spectrum(two_mode_spectrum.scaled(7.5), AnalysisConfig(), length_mm=LENGTH_MM)
    for a, b in zip(base.modes, scaled.modes):
        assert b.optical_length_mm == pytest.approx(a.optical_length_mm, rel=1e-9)
        assert b.r_tilde == pytest.approx(a.r_tilde, rel=1e-6)
        assert b.excitation_fraction == pytest.approx(a.excitation_fraction, rel=1e-6)

    fs = base.fourier
    scaled_modes = detect_modes(fs.scaled(3.0), LENGTH_MM)
    for a, b in zip(detect_modes(fs, LENGTH_MM), scaled_modes):
        assert b.optical_length_mm == pytest.approx(a.optical_length_mm, rel=1e-12)
        assert b.harmonic_amplitudes[0] == pytest.approx(3.0 * a.harmonic_amplitudes[0], rel=1e-9)


def test_mode_order_does_not_matter(two_mode_resonator, band):
    swapped = two_mode_resonator.model_copy(update={"modes": two_mode_resonator.modes[::-1]})
    instrument = InstrumentSpec(psf_fwhm_pm=0.0)
    a = analyze_spectrum(simulate_spectrum(two_mode_resonator, instrument, band), length_mm=LENGTH_MM)
    b = analyze_spectrum(simulate_spectrum(swapped, instrument, band), length_mm=LENGTH_MM)
    assert [m.optical_length_mm for m in a.modes] == pytest.approx(
        [m.optical_length_mm for m in b.modes], rel=1e-9)


def test_doubling_one_excitation_doubles_its_amplitude(two_mode_resonator, band):
    instrument = InstrumentSpec(psf_fwhm_pm=0.0)
    boosted = two_mode_resonator.model_copy(update={"modes": (
        two_mode_resonator.modes[0],
        two_mode_resonator.modes[1].model_copy(update={"excitation_x": 0.4}))})
    config = AnalysisConfig(detrend="subtract_mean")
    before = analyze_spectrum(simulate_spectrum(two_mode_resonator, instrument, band), config, LENGTH_MM)
    after = analyze_spectrum(simulate_spectrum(boosted, instrument, band), config, LENGTH_MM)
    first = [m.harmonic_amplitudes[0] for m in before.modes]
    second = [m.harmonic_amplitudes[0] for m in after.modes]
    assert second[1] / first[1] == pytest.approx(2.0, rel=0.05)
    assert second[0] / first[0] == pytest.approx(1.0, rel=0.05)


def test_no_peaks_gives_empty_list():
    beta = 8.0e6 + 40.0 * np.arange(4096)
    rng = np.random.default_rng(0)
    signal = WavenumberSignal(beta, rng.standard_normal(4096))
    assert detect_modes(mode_spectrum(signal, "hann", min_fringes=0), min_prominence=50.0) == []


def test_detection_needs_zero_padding(two_mode_spectrum):
    signal = detrend(resample_uniform_wavenumber(two_mode_spectrum, 2.0), "subtract_mean")
    with pytest.raises(ConfigurationError):
        detect_modes(mode_spectrum(signal, "hann", zero_pad_factor=2), LENGTH_MM)


def test_close_modes_are_merged():
    axis = np.arange(0.0, 20.0, 0.0025)

    def bump(centre, height):
        return height * np.exp(-0.5 * ((axis - centre) / 0.006) ** 2)

    amplitude = 1e-6 + bump(3.0, 1.0) + bump(3.03, 0.8) + bump(6.0, 0.3)
    fs = FourierSpectrum(axis, amplitude, {"resolution_mm": 0.02, "zero_pad_factor": 8,
                                           "n_fringes": 150.0, "resolution_warning": False})
    (mode,) = detect_modes(fs)
    assert mode.optical_length_mm == pytest.approx(3.0, abs=0.0025)
    assert mode.unresolvable
    assert "unresolvable" in mode.flags
    assert mode.confirmed


@pytest.mark.parametrize("window", ["rectangular", "hann", "sinc"])
def test_window_leakage_bounds_sidelobes(window):
    fs = mode_spectrum(cosine_signal(3.0), window, 8, min_fringes=0)
    distance = (fs.optical_length_mm - 3.0) / fs.resolution_mm
    image = (fs.optical_length_mm + 3.0) / fs.resolution_mm
    near = (np.abs(distance) >= 2.5) & (np.abs(distance) <= 12.0)
    bound = np.array([window_leakage(window, d) + window_leakage(window, i)
                      for d, i in zip(distance[near], image[near])])
    assert np.all(fs.amplitude[near] <= 2.0 * bound)


def test_hann_leakage_falls_much_faster():
    assert window_leakage("hann", 10.0) < 0.02 * window_leakage("rectangular", 10.0)
    assert window_leakage("unknown", 10.0) == window_leakage("rectangular", 10.0)


@pytest.mark.parametrize("weak", [0.04, 0.02])
def test_weak_mode_is_not_taken_for_a_sidelobe(two_mode_resonator, band, weak):
    strong, faint = two_mode_resonator.modes
    resonator = two_mode_resonator.model_copy(update={"modes": (
        strong.model_copy(update={"excitation_x": 1.0 - weak}),
        faint.model_copy(update={"excitation_x": weak}))})
    spectrum = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), band)
    report = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    assert [m.group_index for m in report.modes] == pytest.approx([3.454, 3.724], rel=5e-3)


def test_etalon_sidebands_are_not_modes(two_mode_resonator, band):
    instrument = InstrumentSpec(psf_fwhm_pm=10.0, etalon=EtalonSpec(fsr_nm=2.0, modulation_depth=0.2))
    spectrum = simulate_spectrum(two_mode_resonator, instrument, band)
    report = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM, instrument=instrument)
    assert [m.group_index for m in report.modes] == pytest.approx([3.454, 3.724], rel=5e-3)
    assert all(m.confirmed for m in report.modes)
    assert not any("unphysical_gain" in m.flags for m in report.modes)

    # without the etalon described, the mirrored sideband pairs give it away
    blind = detect_modes(report.fourier, LENGTH_MM)
    assert [m.optical_length_mm for m in blind] == pytest.approx(
        [m.optical_length_mm for m in report.modes])


def test_etalon_optical_length():
    assert EtalonSpec(fsr_nm=2.0, modulation_depth=0.2).optical_length_mm(775.0) == pytest.approx(
        0.1502, abs=1e-4)


def test_missing_instrument_leaves_ratios_uncorrected(two_mode_spectrum):
    report = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    assert all("bias_uncorrected" in m.flags for m in report.modes)
    assert all(m.r_tilde_corrected is None and m.bias_factor is None for m in report.modes)
    jsonschema.validate(report.to_dict(), REPORT_SCHEMA)

    ideal = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM,
                             instrument=InstrumentSpec(psf_fwhm_pm=0.0))
    assert [m.r_tilde_corrected for m in ideal.modes] == pytest.approx(
        [m.r_tilde for m in ideal.modes])
    assert not any("bias_uncorrected" in m.flags for m in ideal.modes)


def test_mode_count_grows_with_mode_density(band):
    counts = []
    for n_modes in (2, 3, 5):
        modes = tuple(make_mode(f"m{i}", 3.2 + 0.15 * i, 3.5 + 0.15 * i) for i in range(n_modes))
        spectrum = simulate_spectrum(ResonatorSpec(length_mm=LENGTH_MM, modes=modes),
                                     InstrumentSpec(psf_fwhm_pm=0.0), band)
        report = analyze_spectrum(spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
        counts.append(sum(m.confirmed for m in report.modes))
    assert counts == [2, 3, 5]


def test_single_mode_fraction_is_one(band):
    spectrum = simulate_spectrum(single_mode(3.6), InstrumentSpec(psf_fwhm_pm=0.0), band)
    (mode,) = analyze_spectrum(spectrum, length_mm=LENGTH_MM).modes
    assert mode.excitation_fraction == pytest.approx(1.0)


def test_excitation_windows_truncate_between_neighbours(two_mode_spectrum):
    report = analyze_spectrum(two_mode_spectrum, AnalysisConfig(), length_mm=LENGTH_MM)
    fractions, truncated = excitation_fractions(report.fourier, report.modes, max_half_width_bins=20)
    assert truncated
    assert sum(fractions) == pytest.approx(1.0)


def test_spectrogram_flat_ridge_without_dispersion(band):
    resonator = ResonatorSpec(length_mm=LENGTH_MM, modes=(
        make_mode("m", 3.6, 3.6),))
    spectrum = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), band)
    signal = condition(spectrum, AnalysisConfig())
    sg = spectrogram(signal, window_fraction=0.7, n_slices=9, max_workers=4)
    assert np.all(np.diff(sg.wavelength_nm) > 0)
    assert sg.amplitude.shape == (sg.optical_length_mm.size, 9)
    x = 3.6 * LENGTH_MM
    positions = [locate_peak(sg.column(j), x - 0.1, x + 0.1)[0] for j in range(9)]
    bin_mm = sg.column(0).resolution_mm
    assert np.ptp(positions) <= bin_mm


def test_spectrogram_drift_follows_dispersion(band):
    mode = make_mode("m", 3.3, 3.6, dn_g_dbeta=1e-6)
    resonator = ResonatorSpec(length_mm=LENGTH_MM, modes=(mode,))
    spectrum = simulate_spectrum(resonator, InstrumentSpec(psf_fwhm_pm=0.0), band)
    sg = spectrogram(condition(spectrum, AnalysisConfig()), window_fraction=0.7, n_slices=9)
    x = 3.6 * LENGTH_MM
    positions = np.array([locate_peak(sg.column(j), x - 0.3, x + 0.3)[0] for j in range(9)])
    # n_g rises with beta, so it falls with wavelength
    beta = wavelength_to_wavenumber(sg.wavelength_nm)
    expected = mode.dispersion.group_index(beta) * LENGTH_MM
    assert np.all(np.diff(expected) < 0)
    assert np.all(np.diff(positions) < 0)


def test_full_window_spectrogram_equals_mode_spectrum(two_mode_spectrum):
    signal = condition(two_mode_spectrum, AnalysisConfig())
    sg = spectrogram(signal, window_fraction=1.0, window="sinc", n_slices=3)
    full = mode_spectrum(signal, "sinc", 8)
    for j in range(3):
        assert np.array_equal(sg.amplitude[:, j], full.amplitude)


def test_spectrogram_flags_short_columns(two_mode_spectrum):
    signal = condition(two_mode_spectrum, AnalysisConfig())
    sg = spectrogram(signal, window_fraction=0.1, n_slices=5, min_mode_spacing_mm=0.243)
    assert all(sg.column_warnings)


def test_dispersion_model_reference():
    model = DispersionModel.from_indices(775.0, 3.3, 3.6, dn_g_dbeta=1e-6)
    beta = wavelength_to_wavenumber(775.0)
    step = 1.0
    slope = (model.group_index(beta + step) - model.group_index(beta - step)) / (2 * step)
    assert slope == pytest.approx(1e-6, rel=1e-4)


def test_fringe_count_of_two_mode_band(two_mode_spectrum):
    signal = resample_uniform_wavenumber(two_mode_spectrum, 2.0)
    assert fringe_count(signal) == pytest.approx(150.0, rel=0.01)
