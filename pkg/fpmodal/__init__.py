"""Modally resolved Fabry-Perot characterization of multimode waveguides.

Forward-models broadband transmission spectra of lossy, dispersive multimode
resonators and recovers per-mode group index, loss, facet reflectivity and
excitation from measured spectra in the Fourier domain.
"""

__version__ = "0.1.0"
