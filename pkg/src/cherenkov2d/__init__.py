"""Two-dimensional Cherenkov radiation: dispersion, loss spectra, quantised
EELS modelling, parameter inversion and electron-photon joint states."""

__version__ = "0.1.0"
