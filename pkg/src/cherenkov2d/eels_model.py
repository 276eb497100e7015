"""Quantised EELS forward model.

The recorded loss spectrum of an electron that interacts with probability
``p`` and emits a Poisson(lambda) number of quanta is

    dP/du = p * sum_n w_n f_n(u) + (1 - p) f_0(u),    w_n = e^-lam lam^n / n!

where ``f_0`` is the zero-loss peak and ``f_n = f_{n-1} * f_PQP``. A detection
probability ``s`` multiplies the whole bracket; undetected electrons never
reach the spectrometer, so after normalising the recorded spectrum to unit
area ``s`` drops out and only the product ``s * p`` is identifiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, find_peaks
from scipy.stats import poisson

from .errors import GridError, TruncationError

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
TAIL_BOUND = 1e-6
DEFAULT_ZLP_FWHM = 0.5


def default_eels_grid(u_min=-3.0, u_max=12.0, step=0.01):
    """Energy-loss channels in eV; 0.01 eV per channel by default."""
    n = int(round((u_max - u_min) / step)) + 1
    return u_min + step * np.arange(n)


def _grid_step(grid):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 3:
        raise GridError("grid needs at least three channels")
    step = (g[-1] - g[0]) / (g.size - 1)
    if step <= 0 or np.max(np.abs(np.diff(g) - step)) > 1e-9 * max(step, np.abs(g).max()):
        raise GridError("grid must be uniform and increasing")
    return g, step


def _zero_offset(grid, step):
    """Channel index of u = 0 (may lie outside the grid but must be integral)."""
    off = -grid[0] / step
    if abs(off - round(off)) > 1e-6:
        raise GridError("u = 0 must fall on a channel boundary of the grid")
    return int(round(off))


def area(grid, f) -> float:
    _, step = _grid_step(grid)
    return float(np.sum(f) * step)


@dataclass(frozen=True, eq=False)
class ZLPModel:
    """Zero-loss peak: Gaussian of given FWHM or a tabulated profile."""

    fwhm: float | None = DEFAULT_ZLP_FWHM
    energy: np.ndarray | None = None
    profile: np.ndarray | None = None

    def __post_init__(self):
        if self.energy is None:
            if self.fwhm is None or not 0.1 <= self.fwhm <= 2.0:
                raise ValueError("Gaussian ZLP FWHM must lie in [0.1, 2.0] eV")
            return
        e = np.array(self.energy, dtype=float)
        y = np.array(self.profile, dtype=float)
        if e.shape != y.shape or e.ndim != 1 or e.size < 3:
            raise ValueError("tabulated ZLP needs matching 1-D energy and profile")
        if np.any(np.diff(e) <= 0):
            raise ValueError("tabulated ZLP energies must increase")
        if np.any(y < 0) or not y.sum() > 0:
            raise ValueError("tabulated ZLP must be nonnegative with positive area")
        object.__setattr__(self, "energy", e)
        object.__setattr__(self, "profile", y)
        object.__setattr__(self, "fwhm", None)

    @classmethod
    def gaussian(cls, fwhm=DEFAULT_ZLP_FWHM):
        return cls(fwhm=fwhm)

    @classmethod
    def tabulated(cls, energy, profile):
        return cls(fwhm=None, energy=energy, profile=profile)

    @property
    def is_gaussian(self) -> bool:
        return self.energy is None

    @property
    def sigma(self) -> float:
        if self.is_gaussian:
            return self.fwhm * FWHM_TO_SIGMA
        return measured_fwhm(self.energy, self.profile) * FWHM_TO_SIGMA

    def describe(self) -> str:
        if self.is_gaussian:
            return f"gaussian(fwhm={self.fwhm:.6g})"
        return f"tabulated(n={self.energy.size},fwhm={measured_fwhm(self.energy, self.profile):.6g})"


def measured_fwhm(x, y) -> float:
    """Full width at half maximum with linear interpolation of the crossings."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    half = 0.5 * y[i]
    left = np.nonzero(y[:i] < half)[0]
    right = np.nonzero(y[i:] < half)[0]
    if left.size == 0 or right.size == 0:
        raise GridError("profile does not fall to half maximum inside the grid")
    a = left[-1]
    b = i + right[0]
    xl = np.interp(half, [y[a], y[a + 1]], [x[a], x[a + 1]])
    xr = np.interp(half, [y[b], y[b - 1]], [x[b], x[b - 1]])
    return float(xr - xl)


def make_zlp(grid, zlp: ZLPModel = ZLPModel()):
    """Unit-area zero-loss profile sampled on ``grid`` and centred at u = 0."""
    g, step = _grid_step(grid)
    if zlp.is_gaussian:
        width = zlp.fwhm
        if g[0] > -4 * width or g[-1] < 4 * width:
            raise GridError("grid must cover +-4 FWHM around zero")
        f = np.exp(-0.5 * (g / zlp.sigma) ** 2)
    else:
        width = measured_fwhm(zlp.energy, zlp.profile)
        if g[0] > -4 * width or g[-1] < 4 * width:
            raise GridError("grid must cover +-4 FWHM around zero")
        centre = _peak_centre(zlp.energy, zlp.profile)
        f = np.interp(g + centre, zlp.energy, zlp.profile, left=0.0, right=0.0)
    return f / (f.sum() * step)


def _peak_centre(x, y):
    i = int(np.argmax(y))
    if 0 < i < y.size - 1:
        den = y[i - 1] - 2 * y[i] + y[i + 1]
        if den < 0:
            return float(x[i] + 0.5 * (y[i - 1] - y[i + 1]) / den * (x[i + 1] - x[i - 1]) / 2)
    return float(x[i])


def grid_delta(grid, u0):
    """Unit-area discrete delta at ``u0``; split between two channels if off-grid."""
    g, step = _grid_step(grid)
    pos = (u0 - g[0]) / step
    if pos < 0 or pos > g.size - 1:
        raise GridError("delta position outside the grid")
    f = np.zeros_like(g)
    i = int(np.floor(pos + 1e-9))
    frac = pos - i
    if frac < 1e-9 or i == g.size - 1:
        f[min(i, g.size - 1)] = 1.0 / step
    else:
        f[i] = (1.0 - frac) / step
        f[i + 1] = frac / step
    return f


def convolve(f, g, grid):
    """Linear convolution of two grid functions, cropped back onto ``grid``."""
    u, step = _grid_step(grid)
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.shape != u.shape or g.shape != u.shape:
        raise GridError("both functions must be sampled on the given grid")
    if not f.any() or not g.any():
        return np.zeros_like(u)
    full = fftconvolve(f, g) * step
    # full[k] sits at u = 2 u_min + k step
    start = _zero_offset(u, step)
    out = np.zeros_like(u)
    lo = max(start, 0)
    hi = min(start + u.size, full.size)
    if hi > lo:
        out[lo - start: hi - start] = full[lo:hi]
    return out


def required_n_max(lam: float) -> int:
    return int(np.ceil(lam + 8.0 * np.sqrt(lam) + 8.0))


def poisson_weights(lam: float, n_max: int | None = None):
    """``w_n = e^-lam lam^n / n!`` for n = 0..n_max."""
    if not lam >= 0:
        raise ValueError("Poisson parameter must be non-negative")
    if n_max is None:
        n_max = required_n_max(lam)
    n_max = int(n_max)
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    w = poisson.pmf(np.arange(n_max + 1), lam) if lam > 0 else np.eye(1, n_max + 1)[0]
    if poisson.sf(n_max, lam) > TAIL_BOUND:
        raise TruncationError(f"n_max={n_max} leaves Poisson tail above {TAIL_BOUND} for lambda={lam}")
    return w


@dataclass(frozen=True)
class EELSModelParams:
    lam: float
    s: float = 1.0
    p: float = 1.0
    n_max: int | None = None

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if not (0 <= self.s <= 1 and 0 <= self.p <= 1):
            raise ValueError("s and p are probabilities")
        n = required_n_max(self.lam) if self.n_max is None else int(self.n_max)
        if poisson.sf(n, self.lam) > TAIL_BOUND:
            raise TruncationError(f"n_max={n} too small for lambda={self.lam}")
        object.__setattr__(self, "n_max", n)

    @property
    def g_qu(self) -> float:
        return float(np.sqrt(self.lam))

    def as_dict(self):
        return {"lambda": self.lam, "s": self.s, "p": self.p, "n_max": self.n_max}


@dataclass(frozen=True, eq=False)
class SimulatedEELS:
    e_grid: np.ndarray
    density: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g, step = _grid_step(self.e_grid)
        d = np.asarray(self.density, dtype=float)
        if d.shape != g.shape:
            raise GridError("density and grid shapes differ")
        if np.any(d < 0):
            raise ValueError("EELS density must be non-negative")
        object.__setattr__(self, "e_grid", g)
        object.__setattr__(self, "density", d)

    @property
    def step(self) -> float:
        return float((self.e_grid[-1] - self.e_grid[0]) / (self.e_grid.size - 1))

    def area(self) -> float:
        return float(self.density.sum() * self.step)

    def mean_loss(self) -> float:
        return float(np.sum(self.e_grid * self.density) * self.step / self.area())

    def lobe_areas(self, spacing: float, n_lobes: int):
        """Weight inside ``[n - 1/2, n + 1/2) * spacing`` for n = 0..n_lobes-1."""
        u = self.e_grid
        idx = np.floor(u / spacing + 0.5).astype(int)
        return np.array([self.density[idx == n].sum() * self.step for n in range(n_lobes)])

    def loss_peaks(self, min_prominence=1e-3):
        """Energies of local maxima above ``min_prominence`` times the ZLP height."""
        idx, _ = find_peaks(self.density, prominence=min_prominence * self.density.max())
        return self.e_grid[idx]


def pqp_orders(f0, f_pqp, grid, n_max):
    """``[f_0, f_1, ..., f_nmax]`` by repeated convolution with ``f_pqp``."""
    orders = [np.asarray(f0, dtype=float)]
    for _ in range(n_max):
        orders.append(convolve(orders[-1], f_pqp, grid))
    return orders


def forward_eels(params: EELSModelParams, f0, f_pqp, grid=None) -> SimulatedEELS:
    """Observed (unit-area) EELS for the given Poisson, interaction and detection parameters."""
    u = default_eels_grid() if grid is None else np.asarray(grid, dtype=float)
    _grid_step(u)
    f0 = np.asarray(f0, dtype=float)
    f_pqp = np.asarray(f_pqp, dtype=float)
    if f0.shape != u.shape or f_pqp.shape != u.shape:
        raise GridError("f0 and f_pqp must be sampled on the model grid")
    if params.s == 0:
        raise ValueError("s = 0: nothing is recorded")
    w = poisson_weights(params.lam, params.n_max)
    mixture = np.zeros_like(u)
    f_n = f0
    for n, wn in enumerate(w):
        if n:
            f_n = convolve(f_n, f_pqp, u)
        mixture += wn * f_n
    # the recorded signal is s * bracket; renormalising to unit area cancels s
    observed = np.maximum(params.p * mixture + (1.0 - params.p) * f0, 0.0)
    return SimulatedEELS(u, observed, {**params.as_dict(), "model": "poisson-convolution"})


def embed_on_grid(e_values, density, grid):
    """Place a loss density sampled on a channel-aligned sub-grid onto ``grid``."""
    g, step = _grid_step(grid)
    e = np.asarray(e_values, dtype=float)
    d = np.asarray(density, dtype=float)
    if e.shape != d.shape:
        raise GridError("energy and density shapes differ")
    pos = (e - g[0]) / step
    idx = np.round(pos).astype(int)
    if np.any(np.abs(pos - idx) > 1e-6):
        raise GridError("sub-grid is not aligned with the model channels")
    if idx.min() < 0 or idx.max() >= g.size:
        raise GridError("sub-grid extends beyond the model grid")
    out = np.zeros_like(g)
    out[idx] = d
    return out
