"""Optional plotly figures for the CLI ``--plot`` flag."""

from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import plotly.express as px

logger = logging.getLogger(__name__)

LAYOUT = dict(
    plot_bgcolor="white",
    paper_bgcolor="white",
    title_font=dict(size=20, color="#2c3e50"),
    hovermode="x unified",
    xaxis=dict(showgrid=True, gridwidth=1, gridcolor="#f0f0f0"),
    yaxis=dict(showgrid=True, gridwidth=1, gridcolor="#f0f0f0"),
)


def fourier_figure(fs, report=None, max_optical_length_mm=None):
    """Mode spectrum on a log scale with detected peaks marked."""
    frame = fs.to_frame()
    if max_optical_length_mm is not None:
        frame = frame[frame["optical_length_mm"] <= max_optical_length_mm]
    fig = px.line(frame, x="optical_length_mm", y="amplitude", log_y=True,
                  title="Mode spectrum",
                  labels={"optical_length_mm": "Optical length (mm)", "amplitude": "Amplitude"})
    fig.update_traces(line_color="#3eacff", line_width=2)
    if report is not None:
        for i, mode in enumerate(report.modes, start=1):
            fig.add_vline(x=mode.optical_length_mm, line_dash="dot", line_color="#e74c3c",
                          annotation_text=f"mode-{i}")
    fig.update_layout(**LAYOUT)
    return fig


def spectrogram_figure(sg):
    fig = px.imshow(
        np.log10(np.maximum(sg.amplitude, 1e-12)),
        x=sg.wavelength_nm,
        y=sg.optical_length_mm,
        origin="lower",
        aspect="auto",
        color_continuous_scale="Viridis",
        labels={"x": "Wavelength (nm)", "y": "Optical length (mm)", "color": "log10 amplitude"},
        title=f"Spectrogram ({sg.window} window, {sg.window_fraction:.0%} of band)",
    )
    fig.update_layout(plot_bgcolor="white", paper_bgcolor="white")
    return fig


def calibration_figure(result, observations):
    """Residual of each reference line against its central wavelength."""
    frame = {
        "lambda_c_nm": [o.lambda_c_nm for o in observations],
        "residual_pm": result.residuals_pm,
        "line_nm": [f"{o.lambda_true_nm:.2f}" for o in observations],
    }
    fig = px.scatter(frame, x="lambda_c_nm", y="residual_pm", color="line_nm",
                     title=f"Calibration residuals (RMS {result.rms_pm:.2f} pm)",
                     labels={"lambda_c_nm": "Central wavelength (nm)",
                             "residual_pm": "Residual (pm)", "line_nm": "Line (nm)"})
    fig.update_layout(**LAYOUT)
    return fig


def write_html(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(path), include_plotlyjs="cdn")
    logger.info(f"Figure saved to {path}")
    return path
