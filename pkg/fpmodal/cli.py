"""Command-line front end: ``python -m fpmodal <subcommand> ...``.

Every subcommand reads an optional JSON configuration document, applies flag
overrides, writes its outputs atomically under the output directory and
returns 0. Configuration problems exit with 2, data-quality problems with 3;
both print a JSON error object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from pydantic import ValidationError

from . import __version__
from . import io
from .analyze import analyze_spectrum, condition, spectrogram
from .calibrate import (CzernyTurnerParams, calibrate_axis, fit_calibration,
                        nonlinearity_report)
from .calibrate import stitch as stitch_exposures
from .config import RunConfig
from .errors import (CalibrationFitError, ConfigurationError, DataError, DomainError,
                     UncorrectableBiasError, UnderdeterminedFitError)
from .fit import fit_alpha_R, measurements_from_report
from .model import InstrumentSpec
from .simulate import simulate_exposures, simulate_spectrum

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def setup_logging(verbose=0, quiet=False):
    level = logging.WARNING if quiet else (logging.DEBUG if verbose > 0 else logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def load_config(args):
    config = RunConfig.load(args.config)
    if config.verbosity > args.verbose:
        setup_logging(config.verbosity, args.quiet)
    return config.with_overrides(
        rng_seed=args.seed,
        out_dir=args.out_dir,
        oversample=args.oversample,
        window=args.window,
        zero_pad_factor=args.zero_pad,
        window_fraction=getattr(args, "window_fraction", None),
        n_slices=getattr(args, "n_slices", None),
    )


def read_geometry(path, field, key=None):
    """Spectrograph geometry from a JSON document, optionally under ``key``."""
    try:
        data = io.read_json(path)
        return CzernyTurnerParams.model_validate(data[key] if key else data)
    except DataError as exc:
        raise ConfigurationError(str(exc), field=field) from exc
    except (KeyError, TypeError) as exc:
        raise ConfigurationError(f"{path} has no {key!r} entry", field=field) from exc


# Subcommands

def cmd_simulate(args):
    """Simulated spectra: one CSV per exposure, or one for the band."""
    config = load_config(args)
    if config.resonator is None:
        raise ConfigurationError("configuration has no resonator", field="resonator")
    instrument = config.effective_instrument(default=InstrumentSpec())
    out_dir = config.out_dir
    files = []
    if config.plan is not None:
        exposures = simulate_exposures(config.resonator, instrument, config.plan,
                                       stitching=not args.no_stitch)
        for spectrum in exposures:
            path = out_dir / f"exposure_{spectrum.metadata['exposure_index']:02d}.csv"
            files.append(io.write_spectrum(spectrum, path))
    elif config.band_nm is not None:
        spectrum = simulate_spectrum(config.resonator, instrument, config.band_nm)
        files.append(io.write_spectrum(spectrum, out_dir / "spectrum.csv"))
    else:
        raise ConfigurationError("configuration needs a plan or a band", field="band_nm")

    manifest = {
        "version": __version__,
        "files": [p.name for p in files],
        "rng_seed": instrument.rng_seed,
        "resonator": config.resonator.model_dump(),
        "instrument": instrument.model_dump(),
        "plan": config.plan.model_dump() if config.plan else None,
        "band_nm": config.band_nm,
    }
    io.write_json(manifest, out_dir / "manifest.json")
    logger.info(f"Wrote {len(files)} spectra to {out_dir}")
    return EXIT_OK


def cmd_calibrate(args):
    """Fit the spectrograph geometry to reference-line observations."""
    config = load_config(args)
    observations = io.read_lines(args.lines_csv)
    if args.initial:
        initial = read_geometry(args.initial, "initial")
    elif config.calibration is not None:
        initial = config.calibration
    else:
        raise ConfigurationError("no initial spectrograph geometry", field="calibration")

    result = fit_calibration(observations, initial, config.free_params)
    centers = sorted({o.lambda_c_nm for o in observations})
    band = config.calibration_band_nm or (centers[0], centers[-1])
    report = nonlinearity_report(result.params, band)
    data = result.to_dict()
    data["nonlinearity"] = {"band_nm": list(band), "max_deviation_pm": report.max_deviation_pm,
                            "percent": report.percent}
    data["chi2_dof"] = result.chi2_dof
    io.write_json(data, config.out_dir / "calibration.json")
    print(f"RMS residual: {result.rms_pm:.3f} pm")
    print(f"Nonlinearity over {band[1] - band[0]:.2f} nm: {report.percent:.3f}%")

    if args.plot:
        from .plots import calibration_figure, write_html

        write_html(calibration_figure(result, observations), config.out_dir / "calibration.html")
    return EXIT_OK


def _load_spectra(paths, calibration):
    spectra = []
    for path in paths:
        if io.is_raw_exposure(path):
            if calibration is None:
                raise ConfigurationError(f"{path} is uncalibrated; pass --calibration",
                                         field="calibration")
            lambda_c, dx_cam, intensity = io.read_raw_exposure(path)
            spectra.append(calibrate_axis(calibration, lambda_c, dx_cam, intensity,
                                          {"source": str(path)}))
        else:
            spectra.append(io.read_spectrum(path))
    return spectra


def cmd_analyze(args):
    """Stitch, transform and analyse spectra into a mode report."""
    config = load_config(args)
    calibration = None
    if args.calibration:
        calibration = read_geometry(args.calibration, "calibration", key="params")
    spectra = _load_spectra(args.spectra, calibration)
    spectrum = stitch_exposures(spectra)
    length = args.length_mm if args.length_mm is not None else (
        config.resonator.length_mm if config.resonator else None)

    report = analyze_spectrum(spectrum, config.analysis, length_mm=length,
                              instrument=config.effective_instrument())
    data = report.to_dict()
    if len(spectra) > 1:
        data["stitch"] = {k: spectrum.metadata[k] for k in ("relative_scales", "overlap_mismatch")}
    out_dir = config.out_dir
    io.write_json(data, out_dir / "report.json")
    io.write_fourier(report.fourier, out_dir / "fourier.csv")
    if length is not None:
        io.write_measurements(measurements_from_report(report, length, args.waveguide_id),
                              out_dir / "measurements.csv")
    for i, mode in enumerate(report.modes, start=1):
        line = f"mode-{i}: optical length {mode.optical_length_mm:.4f} mm"
        if mode.group_index is not None:
            line += f", n_g {mode.group_index:.4f}, v_g {mode.group_velocity_um_per_ps:.1f} um/ps"
        if mode.r_tilde is not None:
            line += f", r_tilde {mode.r_tilde:.4f}"
        print(line)

    if args.plot:
        from .plots import fourier_figure, write_html

        limit = 5.0 * max(m.optical_length_mm for m in report.modes) if report.modes else None
        write_html(fourier_figure(report.fourier, report, limit), out_dir / "fourier.html")
    return EXIT_OK


def cmd_fit_loss(args):
    """Joint alpha/R fit over a measurement table."""
    config = load_config(args)
    fit = fit_alpha_R(io.read_measurements(args.measurements_csv), aggregate=args.aggregate)
    io.write_json(fit.to_dict(), config.out_dir / "fit.json")
    print(f"R = {fit.R:.4f} +- {fit.R_sigma:.4f}")
    print(f"alpha = {fit.alpha_per_mm:.4f} +- {fit.alpha_sigma:.4f} /mm "
          f"({fit.alpha_db_per_mm:.2f} dB/mm)")
    return EXIT_OK


def cmd_spectrogram(args):
    """Sliding-window mode spectra of one spectrum."""
    config = load_config(args)
    analysis = config.analysis
    signal = condition(io.read_spectrum(args.spectrum_csv), analysis)
    sg = spectrogram(signal, analysis.window_fraction, analysis.spectrogram_window,
                     analysis.n_slices, analysis.zero_pad_factor, analysis.min_fringes,
                     max_workers=analysis.max_workers)
    io.write_spectrogram(sg, config.out_dir / "spectrogram.csv")
    if args.plot:
        from .plots import spectrogram_figure, write_html

        write_html(spectrogram_figure(sg), config.out_dir / "spectrogram.html")
    return EXIT_OK


# Parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON configuration document")
    common.add_argument("--seed", type=int, help="random seed for simulated noise")
    common.add_argument("--out-dir", type=Path, help="output directory")
    common.add_argument("--oversample", type=float)
    common.add_argument("--window", choices=("rectangular", "hann", "sinc"))
    common.add_argument("--zero-pad", type=int)
    common.add_argument("--plot", action="store_true", help="also write plotly HTML figures")
    common.add_argument("-v", "--verbose", action="count", default=0)
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="fpmodal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="simulate spectra")
    p.add_argument("--no-stitch", action="store_true", help="exposures are not meant to be stitched")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("calibrate", parents=[common], help="fit the wavelength calibration")
    p.add_argument("lines_csv", type=Path)
    p.add_argument("--initial", type=Path, help="JSON with the initial geometry")
    p.set_defaults(handler=cmd_calibrate)

    p = sub.add_parser("analyze", parents=[common], help="analyse spectra")
    p.add_argument("spectra", type=Path, nargs="+")
    p.add_argument("--calibration", type=Path, help="calibration JSON for raw exposures")
    p.add_argument("--length-mm", type=float)
    p.add_argument("--waveguide-id", default="wg")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("fit-loss", parents=[common], help="fit alpha and R")
    p.add_argument("measurements_csv", type=Path)
    p.add_argument("--aggregate", choices=("waveguide", "length"), default="waveguide")
    p.set_defaults(handler=cmd_fit_loss)

    p = sub.add_parser("spectrogram", parents=[common], help="sliding-window mode spectra")
    p.add_argument("spectrum_csv", type=Path)
    p.add_argument("--window-fraction", type=float)
    p.add_argument("--n-slices", type=int)
    p.set_defaults(handler=cmd_spectrogram)
    return parser


def _report_error(exc, field=None):
    payload = {"error": type(exc).__name__, "message": str(exc), "field": field}
    print(json.dumps(payload), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except ValidationError as exc:
        first = exc.errors()[0] if exc.errors() else {}
        field = ".".join(str(p) for p in first.get("loc", ())) or None
        logger.error(f"Invalid configuration: {exc}")
        _report_error(exc, field)
        return EXIT_CONFIG
    except ConfigurationError as exc:
        logger.error(f"Invalid configuration: {exc}")
        _report_error(exc, exc.field)
        return EXIT_CONFIG
    except (DomainError, UnderdeterminedFitError) as exc:
        logger.error(str(exc))
        _report_error(exc)
        return EXIT_CONFIG
    except (DataError, UncorrectableBiasError, CalibrationFitError) as exc:
        logger.error(f"Data quality: {exc}")
        _report_error(exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
