"""Run configuration documents and analysis thresholds."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .calibrate import CzernyTurnerParams
from .errors import ConfigurationError
from .model import InstrumentSpec, ResonatorSpec
from .simulate import ExposurePlan

OUT_DIR_ENV = "FPMODAL_OUT_DIR"

WindowName = Literal["rectangular", "hann", "sinc"]
DetrendMethod = Literal["divide_smooth_baseline", "subtract_mean"]


class AnalysisConfig(BaseModel):
    """Thresholds and choices of the Fourier analysis pipeline."""

    model_config = ConfigDict(frozen=True)

    oversample: float = Field(default=2.0, ge=1)
    detrend: DetrendMethod = "divide_smooth_baseline"
    baseline_periods: float = Field(default=20.0, ge=20)
    window: WindowName = "hann"
    zero_pad_factor: int = Field(default=8, ge=1)
    noise_floor_quantile: float = Field(default=0.9, gt=0, lt=1)
    min_prominence: float = Field(default=3.0, gt=0)
    max_harmonics: int = Field(default=4, ge=2)
    min_harmonic_ratio: float = Field(default=1e-3, ge=0)
    min_relative_amplitude: float = Field(default=0.01, ge=0)
    min_fringes: int = Field(default=30, ge=1)
    min_optical_length_mm: float = Field(default=0.5, ge=0)
    group_index_range: tuple[float, float] = (1.0, 6.0)
    bias_correction: bool = True
    etalon_optical_length_mm: Optional[float] = Field(default=None, gt=0)
    window_fraction: float = Field(default=0.7, gt=0, le=1)
    n_slices: int = Field(default=9, ge=2)
    spectrogram_window: WindowName = "sinc"
    max_workers: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _check_range(self):
        lo, hi = self.group_index_range
        if not 0 < lo < hi:
            raise ValueError("group_index_range must be increasing and positive")
        return self


class RunConfig(BaseModel):
    """One JSON configuration document; CLI flags override its values."""

    model_config = ConfigDict(frozen=True)

    resonator: Optional[ResonatorSpec] = None
    instrument: Optional[InstrumentSpec] = None
    plan: Optional[ExposurePlan] = None
    band_nm: Optional[tuple[float, float]] = None
    analysis: AnalysisConfig = AnalysisConfig()
    calibration: Optional[CzernyTurnerParams] = None
    calibration_band_nm: Optional[tuple[float, float]] = None
    free_params: tuple[str, ...] = ("gamma", "focal", "dx_in")
    rng_seed: Optional[int] = None
    out_dir: Path = Path("results")
    verbosity: int = 0

    @classmethod
    def load(cls, path=None):
        """Read a configuration document; an absent path gives the defaults."""
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as f:
                data = json.load(f)
        except OSError as exc:
            raise ConfigurationError(f"cannot read configuration {path}: {exc}",
                                     field="config") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"configuration {path} is not valid JSON: {exc}",
                                     field="config") from exc
        return cls.model_validate(data)

    def with_overrides(self, **overrides):
        """Copy with flag values applied; ``None`` leaves a field unchanged."""
        data = self.model_dump()
        analysis = dict(data["analysis"])
        for key in ("oversample", "window", "zero_pad_factor", "window_fraction", "n_slices"):
            value = overrides.pop(key, None)
            if value is not None:
                analysis[key] = value
        data["analysis"] = analysis
        data.update({k: v for k, v in overrides.items() if v is not None})
        env_dir = os.environ.get(OUT_DIR_ENV)
        if env_dir and overrides.get("out_dir") is None:
            data["out_dir"] = env_dir
        return type(self).model_validate(data)

    def effective_instrument(self, default=None):
        """Configured instrument (or ``default``) with the seed override applied."""
        instrument = self.instrument or default
        if instrument is None or self.rng_seed is None:
            return instrument
        return instrument.model_copy(update={"rng_seed": self.rng_seed})
