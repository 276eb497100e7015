"""Exception hierarchy.

Every error raised on purpose by the toolkit derives from
:class:`Cherenkov2DError`; the command line maps each subclass to its own
exit status (see ``EXIT_CODES`` in :mod:`cherenkov2d.cli`).
"""


class Cherenkov2DError(Exception):
    """Base class for toolkit errors."""


class ConfigError(Cherenkov2DError, ValueError):
    """Invalid or inconsistent configuration."""


class MissingInputError(Cherenkov2DError, FileNotFoundError):
    """Required input files are absent."""

    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("missing inputs: " + ", ".join(map(str, self.missing)))


class RangeError(Cherenkov2DError, ValueError):
    """Evaluation outside the domain of a tabulated model."""


class GridError(Cherenkov2DError, ValueError):
    """Grids that are non-uniform, mismatched or too narrow."""


class BelowThresholdError(Cherenkov2DError):
    """The electron is slower than every available phase velocity."""


class DegenerateSpectrumError(Cherenkov2DError, ValueError):
    """A spectrum with zero total weight cannot be normalised."""


class UnsupportedInputError(Cherenkov2DError, ValueError):
    """Input outside the validity domain of a formula."""


class TruncationError(Cherenkov2DError):
    """A truncated basis or series is too small for the requested accuracy."""


class NoPeakError(Cherenkov2DError):
    """No significant peak inside the fit window."""


class FitFailure(Cherenkov2DError):
    """Nonlinear fit did not converge from any start point."""

    def __init__(self, message, diagnostics=None):
        self.diagnostics = diagnostics or {}
        super().__init__(message)
