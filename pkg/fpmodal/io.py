"""File formats: spectrum, line and measurement CSVs plus JSON reports."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd

from .calibrate import LineObservation
from .errors import DataError
from .fit import LossMeasurement
from .model import Spectrum

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.10g"
SPECTRUM_COLUMNS = ("wavelength_nm", "intensity")
RAW_COLUMNS = ("dx_cam_mm", "intensity")
LINE_COLUMNS = ("lambda_true_nm", "lambda_c_nm", "dx_cam_mm")
MEASUREMENT_COLUMNS = ("waveguide_id", "length_mm", "r_tilde", "sigma", "group_index")


def atomic_write_text(path, text):
    """Write ``text`` to a temporary sibling, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def write_frame(frame, path):
    return atomic_write_text(path, frame.to_csv(index=False, float_format=FLOAT_FORMAT,
                                                lineterminator="\n"))


def write_json(data, path):
    return atomic_write_text(path, json.dumps(data, indent=4, default=_json_default) + "\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _read_csv(path, columns):
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path} lacks columns {missing}")
    return frame


def write_spectrum(spectrum, path):
    return write_frame(spectrum.to_frame(), path)


def read_spectrum(path):
    """Spectrum CSV with header ``wavelength_nm,intensity``."""
    frame = _read_csv(path, SPECTRUM_COLUMNS)
    return Spectrum(frame["wavelength_nm"].to_numpy(dtype=float),
                    frame["intensity"].to_numpy(dtype=float), {"source": str(path)})


def read_raw_exposure(path):
    """Uncalibrated exposure: ``dx_cam_mm,intensity`` plus a ``lambda_c_nm`` column."""
    frame = _read_csv(path, RAW_COLUMNS + ("lambda_c_nm",))
    centers = frame["lambda_c_nm"].unique()
    if centers.size != 1:
        raise DataError(f"{path} mixes central wavelengths {centers.tolist()}")
    return (float(centers[0]), frame["dx_cam_mm"].to_numpy(dtype=float),
            frame["intensity"].to_numpy(dtype=float))


def is_raw_exposure(path):
    try:
        header = pd.read_csv(path, nrows=0)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return "dx_cam_mm" in header.columns


def read_lines(path):
    frame = _read_csv(path, LINE_COLUMNS)
    return [LineObservation(**row) for row in frame[list(LINE_COLUMNS)].to_dict(orient="records")]


def write_lines(observations, path):
    return write_frame(pd.DataFrame([o.model_dump() for o in observations],
                                    columns=list(LINE_COLUMNS)), path)


def read_measurements(path):
    frame = _read_csv(path, ("length_mm", "r_tilde", "sigma"))
    if "waveguide_id" not in frame.columns:
        frame["waveguide_id"] = [f"wg-{i}" for i in range(len(frame))]
    frame["waveguide_id"] = frame["waveguide_id"].astype(str)
    if "group_index" in frame.columns:
        frame["group_index"] = frame["group_index"].astype(object).where(frame["group_index"].notna(), None)
    return [LossMeasurement(**row) for row in frame.to_dict(orient="records")]


def write_measurements(measurements, path):
    return write_frame(pd.DataFrame([m.model_dump() for m in measurements],
                                    columns=list(MEASUREMENT_COLUMNS)), path)


def write_fourier(fs, path):
    return write_frame(fs.to_frame(), path)


def write_spectrogram(sg, path):
    return write_frame(sg.to_frame(), path)
