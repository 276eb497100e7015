"""Aloof-electron loss spectra above a layered surface.

The electron (kinetic energy ``T``) travels parallel to the surface at height
``x0`` through vacuum over a length ``L``. The classical stratified-medium
loss probability per unit energy is

    Gamma(E) = 2 alpha L / (pi beta^2 hbar c)
               * Int_0^inf dk_y -Re{ e^{2 i k_z x0} / (k_z k^2)
                                      [ r_p k_z^2 - r_s beta^2 k_y^2 ] }

with ``k^2 = (E / hbar v)^2 + k_y^2`` and ``k_z = sqrt((E/hbar c)^2 - k^2)``
(evanescent, ``k_z = i kappa``). In the non-retarded limit it reduces to
the familiar ``4 alpha L / (pi beta^2 hbar c) K0(2 E x0 / hbar v) Im[-1/(eps+1)]``
for a half-space. Integrating ``Gamma`` over energy gives the mean number of
emitted quanta ``lambda = g**2``.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .constants import ALPHA, HBAR_C
from .dispersion import (
    DEFAULT_E_GRID,
    DEFAULT_K_GRID,
    ElectronKinematics,
    dispersion_map,
    electron_kinematics,
    extract_ridge,
    normal_wavevector,
    phase_match,
    reflection_pair,
)
from .errors import (
    BelowThresholdError,
    Cherenkov2DError,
    DegenerateSpectrumError,
    GridError,
    UnsupportedInputError,
)
from .materials import DielectricModel, LayerStack
from .quadrature import adaptive_gauss_kronrod

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))
KAPPA_X0_CUTOFF = 14.0
QUAD_EPSREL = 1e-6
BEAM_EXCLUSION_NM = 5.0

# initial k_y panels (1/nm); the guided-mode pole of the stack sits below ~0.05
_PANELS = np.concatenate([np.arange(0.0, 0.06, 0.002), 0.06 * 1.5 ** np.arange(1, 24)])


def default_loss_grid(start=1.5, stop=3.0, step=0.01):
    """Uniform energy grid aligned with the EELS channel width."""
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)


class AboveThresholdWarning(UserWarning):
    """Sub-threshold reference requested for an electron that phase matches."""


@dataclass(frozen=True)
class BeamGeometry:
    impact_parameter: float = 30.0  # nm, centroid to surface
    beam_sigma: float = 30.0  # nm
    effective_length: float = 100.0  # um
    max_length: float = 250.0  # um

    def __post_init__(self):
        if not self.impact_parameter > 0:
            raise ValueError("impact parameter must be positive")
        if self.beam_sigma < 0:
            raise ValueError("beam sigma must be non-negative")
        if not 0 < self.effective_length <= self.max_length:
            raise ValueError("need 0 < effective_length <= max_length")


def check_uniform(grid, rtol=1e-12):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        raise GridError("energy grid needs at least two points")
    d = np.diff(g)
    step = (g[-1] - g[0]) / (g.size - 1)
    if step <= 0 or np.max(np.abs(d - step)) > rtol * max(step, np.max(np.abs(g))):
        raise GridError("energy grid must be uniform and increasing")
    return g, float(step)


@dataclass(frozen=True, eq=False)
class LossSpectrum:
    e_grid: np.ndarray
    density: np.ndarray  # 1/eV per electron
    kinematics: ElectronKinematics | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g, step = check_uniform(self.e_grid)
        d = np.asarray(self.density, dtype=float)
        if d.shape != g.shape:
            raise GridError("density and grid shapes differ")
        if np.any(d < 0):
            raise ValueError("loss density must be non-negative")
        object.__setattr__(self, "e_grid", g)
        object.__setattr__(self, "density", d)
        object.__setattr__(self, "_step", step)

    @property
    def step(self) -> float:
        return self._step

    @property
    def lam(self) -> float:
        return float(np.sum(self.density) * self.step)

    def peak(self) -> float:
        return peak_position(self.e_grid, self.density)


def peak_position(x, y) -> float:
    """Location of the maximum, refined by a parabola through three points."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    i = int(np.argmax(y))
    if 0 < i < y.size - 1:
        den = y[i - 1] - 2 * y[i] + y[i + 1]
        if den < 0:
            delta = 0.5 * (y[i - 1] - y[i + 1]) / den
            return float(x[i] + delta * (x[i + 1] - x[i - 1]) / 2)
    return float(x[i])


def _require_vacuum_superstrate(stack: LayerStack, energies):
    eps = np.asarray(stack.superstrate(energies))
    if np.any(np.abs(eps - 1.0) > 1e-12):
        raise UnsupportedInputError("the electron must travel in vacuum (eps = 1)")


def loss_integrals(stack: LayerStack, kin: ElectronKinematics, energies, x0s):
    """Dimensionless k_y integral for every (energy, impact parameter) pair.

    ``energies`` and ``x0s`` broadcast against each other; each element is an
    independent adaptive integral, so the value for one pair does not depend
    on what else is in the batch.
    """
    e, x0 = np.broadcast_arrays(np.asarray(energies, float), np.asarray(x0s, float))
    shape = e.shape
    e = e.ravel()
    x0 = x0.ravel()
    _require_vacuum_superstrate(stack, e)
    beta = kin.beta
    k0 = e / HBAR_C
    q0 = k0 / beta
    kappa0_sq = q0**2 - k0**2
    kappa_max = KAPPA_X0_CUTOFF / x0
    ky_max = np.sqrt(np.maximum(kappa_max**2 - kappa0_sq, 0.0))

    eps = [np.asarray(m(e), dtype=complex) for m in stack.media]
    thick = stack.thicknesses

    def integrand(ky, item):
        kk0 = k0[item]
        kpar = np.sqrt(q0[item] ** 2 + ky**2)
        rp, rs = reflection_pair([ep[item] for ep in eps], thick, kk0, kpar)
        kz = normal_wavevector(1.0, kk0, kpar)
        bracket = rp * kz**2 - rs * (beta * ky) ** 2
        return -(np.exp(2j * kz * x0[item]) / (kz * kpar**2) * bracket).real

    edges = np.minimum(_PANELS[None, :], ky_max[:, None])
    edges = np.concatenate([edges, ky_max[:, None]], axis=1)
    value, _ = adaptive_gauss_kronrod(integrand, edges, epsrel=QUAD_EPSREL)
    return value.reshape(shape)


def _prefactor(kin: ElectronKinematics, length_um: float, calibration: float) -> float:
    # per eV, with L converted to nm
    return calibration * 2.0 * ALPHA * (length_um * 1e3) / (np.pi * kin.beta**2 * HBAR_C)


def _density(integral, kin, length_um, calibration):
    return np.maximum(_prefactor(kin, length_um, calibration) * integral, 0.0)


def _parallel_integrals(stack, kin, energies, x0s, workers):
    if workers <= 1:
        return loss_integrals(stack, kin, energies, x0s)
    e, x = np.broadcast_arrays(np.asarray(energies, float), np.asarray(x0s, float))
    flat_e, flat_x = e.ravel(), x.ravel()
    chunks = np.array_split(np.arange(flat_e.size), int(workers))
    with ThreadPoolExecutor(max_workers=int(workers)) as pool:
        parts = list(
            pool.map(lambda c: loss_integrals(stack, kin, flat_e[c], flat_x[c]), chunks)
        )
    return np.concatenate(parts).reshape(e.shape)


def loss_density(
    stack: LayerStack,
    kin: ElectronKinematics,
    beam: BeamGeometry,
    e_grid=None,
    *,
    calibration: float = 1.0,
    workers: int = 1,
) -> LossSpectrum:
    """Energy-resolved emission probability per electron (1/eV)."""
    grid = default_loss_grid() if e_grid is None else np.asarray(e_grid, float)
    check_uniform(grid)
    integral = _parallel_integrals(stack, kin, grid, beam.impact_parameter, workers)
    density = _density(integral, kin, beam.effective_length, calibration)
    meta = {
        "stack": stack.fingerprint(),
        "kev": kin.kinetic_energy,
        "x0_nm": beam.impact_parameter,
        "leff_um": beam.effective_length,
        "calibration": calibration,
    }
    return LossSpectrum(grid, density, kin, meta)


def spectral_density(spec: LossSpectrum) -> LossSpectrum:
    """Unit-area PQP spectral density ``Gamma / lambda``."""
    lam = spec.lam
    if not lam > 0:
        raise DegenerateSpectrumError("spectrum has zero weight")
    meta = dict(spec.metadata, normalized=True, lambda_=lam)
    return LossSpectrum(spec.e_grid, spec.density / lam, spec.kinematics, meta)


@dataclass(frozen=True)
class CouplingResult:
    g_qu: float
    lam: float
    kappa_peak: float  # 1/nm
    peak_energy: float = float("nan")


def decay_constant(energy, kin: ElectronKinematics):
    """Out-of-plane field decay ``sqrt((E/hbar v)^2 - (E/hbar c)^2)`` at k_y = 0."""
    k0 = np.asarray(energy, float) / HBAR_C
    return np.sqrt((k0 / kin.beta) ** 2 - k0**2)[()]


def coupling_strength(spec: LossSpectrum, kin: ElectronKinematics | None = None) -> CouplingResult:
    kin = kin or spec.kinematics
    if kin is None:
        raise ValueError("electron kinematics required for the decay constant")
    lam = spec.lam
    g = float(np.sqrt(lam))
    e_peak = spec.peak() if lam > 0 else float(spec.e_grid[np.argmax(spec.density)])
    return CouplingResult(g, g * g, float(decay_constant(e_peak, kin)), e_peak)


@dataclass(frozen=True, eq=False)
class CouplingTable:
    """g_qu on a (impact parameter x effective length) sweep."""

    x0_nm: np.ndarray
    leff_um: np.ndarray
    g_qu: np.ndarray  # shape (len(x0_nm), len(leff_um))
    kappa_peak: np.ndarray  # per x0, 1/nm
    peak_energy: np.ndarray  # per x0, eV

    def semilog_slope(self, leff_index: int = 0, x_range=None) -> float:
        """Least-squares slope of ln g versus x0 (1/nm)."""
        x = self.x0_nm
        y = np.log(self.g_qu[:, leff_index])
        m = np.ones_like(x, dtype=bool) if x_range is None else (x >= x_range[0]) & (x <= x_range[1])
        return float(np.polyfit(x[m], y[m], 1)[0])

    def loglog_slope(self, x0_index: int = 0) -> float:
        """Least-squares slope of ln g versus ln L_eff."""
        return float(
            np.polyfit(np.log(self.leff_um), np.log(self.g_qu[x0_index]), 1)[0]
        )

    def rows(self):
        for i, x0 in enumerate(self.x0_nm):
            slope = self.loglog_slope(i) if self.leff_um.size > 1 else float("nan")
            for j, leff in enumerate(self.leff_um):
                g = self.g_qu[i, j]
                yield {
                    "x0_nm": float(x0),
                    "leff_um": float(leff),
                    "g_qu": float(g),
                    "lambda": float(g * g),
                    "kappa_peak_per_nm": float(self.kappa_peak[i]),
                    "loglog_slope_leff": slope,
                }


def coupling_scaling(
    stack: LayerStack,
    kin: ElectronKinematics,
    x0_nm,
    leff_um,
    e_grid=None,
    *,
    beam_sigma: float = 0.0,
    n_nodes: int = 41,
    calibration: float = 1.0,
    workers: int = 1,
) -> CouplingTable:
    """Coupling strength over a grid of impact parameters and lengths.

    With ``beam_sigma = 0`` every entry equals
    ``coupling_strength(loss_density(...))`` at the same parameters; otherwise
    it equals ``average_over_beam`` for a beam of that width. The k_y
    integrals are computed once per transverse position.
    """
    x0 = np.asarray(x0_nm, dtype=float)
    leff = np.asarray(leff_um, dtype=float)
    if np.any(x0 <= 0) or np.any(leff <= 0):
        raise ValueError("sweep values must be positive")
    grid = default_loss_grid() if e_grid is None else np.asarray(e_grid, float)
    _, step = check_uniform(grid)
    integrals = _parallel_integrals(stack, kin, grid[None, :], x0[:, None], workers)
    g = np.empty((x0.size, leff.size))
    kappa = np.empty(x0.size)
    peaks = np.empty(x0.size)
    for i in range(x0.size):
        for j, length in enumerate(leff):
            spec = LossSpectrum(grid, _density(integrals[i], kin, length, calibration), kin)
            res = coupling_strength(spec)
            g[i, j] = res.g_qu
        kappa[i] = res.kappa_peak
        peaks[i] = res.peak_energy
    if beam_sigma > 0:
        for i in range(x0.size):
            x, w = beam_nodes(x0[i], beam_sigma, n_nodes)
            node_int = _parallel_integrals(stack, kin, grid[None, :], x[:, None], workers)
            for j, length in enumerate(leff):
                g[i, j] = _beam_mean_g(node_int, w, kin, length, calibration, step)
    return CouplingTable(x0, leff, g, kappa, peaks)


def calibrate_coupling(stack, kin, observations, e_grid=None) -> float:
    """Global multiplier on Gamma matching observed ``(x0_nm, leff_um, g)``.

    Least squares in ln g; closed form because g scales as sqrt(calibration).
    """
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 or obs.shape[1] != 3 or obs.shape[0] == 0:
        raise ValueError("observations must be rows of (x0_nm, leff_um, g)")
    model = np.array([
        coupling_strength(
            loss_density(stack, kin, BeamGeometry(x0, 0.0, leff, max(leff, 250.0)), e_grid)
        ).g_qu
        for x0, leff, _ in obs
    ])
    return float(np.exp(2.0 * np.mean(np.log(obs[:, 2]) - np.log(model))))


def beam_nodes(x0, sigma, n_nodes=41, x_min=BEAM_EXCLUSION_NM, width=6.0):
    """Trapezoid nodes and normalised weights of the truncated Gaussian profile."""
    if not x0 > 0:
        raise ValueError("impact parameter must be positive")
    lo = max(x_min, x0 - width * sigma)
    hi = x0 + width * sigma
    if hi <= lo:
        raise ValueError("beam lies entirely inside the excluded region")
    x = np.linspace(lo, hi, int(n_nodes))
    w = np.exp(-0.5 * ((x - x0) / sigma) ** 2)
    w[[0, -1]] *= 0.5
    return x, w / w.sum()


def average_over_beam(
    stack: LayerStack,
    kin: ElectronKinematics,
    beam: BeamGeometry,
    e_grid=None,
    *,
    n_nodes: int = 41,
    calibration: float = 1.0,
    workers: int = 1,
) -> CouplingResult:
    """g_qu averaged over the transverse Gaussian beam profile.

    Positions closer than 5 nm to the surface are dropped (those electrons
    hit the sample) and the remaining weights renormalised.
    """
    if n_nodes < 33:
        raise ValueError("use at least 33 quadrature nodes")
    x0 = beam.impact_parameter
    grid = default_loss_grid() if e_grid is None else np.asarray(e_grid, float)
    centre = coupling_strength(loss_density(stack, kin, beam, grid, calibration=calibration))
    if beam.beam_sigma == 0:
        return centre
    x, w = beam_nodes(x0, beam.beam_sigma, n_nodes)
    _, step = check_uniform(grid)
    integrals = _parallel_integrals(stack, kin, grid[None, :], x[:, None], workers)
    g = _beam_mean_g(integrals, w, kin, beam.effective_length, calibration, step)
    return CouplingResult(g, g * g, centre.kappa_peak, centre.peak_energy)


def _beam_mean_g(node_integrals, weights, kin, length, calibration, step) -> float:
    dens = _density(node_integrals, kin, length, calibration)
    g_nodes = np.sqrt(np.sum(dens, axis=1) * step)
    return float(np.dot(weights, g_nodes))


def broaden(spec: LossSpectrum, fwhm: float) -> LossSpectrum:
    """Convolve with a unit-area Gaussian of the given FWHM (eV)."""
    if fwhm < 0:
        raise ValueError("fwhm must be non-negative")
    if fwhm == 0:
        return spec
    sigma_ch = fwhm * FWHM_TO_SIGMA / spec.step
    dens = gaussian_filter1d(spec.density, sigma_ch, mode="constant", truncate=6.0)
    return LossSpectrum(spec.e_grid, dens, spec.kinematics, dict(spec.metadata, zlp_fwhm=fwhm))


def sp_reference_spectrum(
    stack: LayerStack,
    beam: BeamGeometry,
    e_grid=None,
    sub_threshold_kev: float = 30.0,
    zlp_fwhm: float = 0.5,
) -> LossSpectrum:
    """Loss of a slow (sub-threshold) electron, smoothed by the ZLP.

    Below the Cherenkov threshold only the non-propagating surface plasmon
    is excited, whose resonance does not move with electron velocity.
    """
    grid = default_loss_grid(1.0, 4.0) if e_grid is None else np.asarray(e_grid, float)
    kin = electron_kinematics(sub_threshold_kev)
    if _phase_matches(stack, kin, grid):
        warnings.warn(
            f"{sub_threshold_kev:g} keV electron is above the Cherenkov threshold; "
            "the reference does not isolate the surface plasmon",
            AboveThresholdWarning,
            stacklevel=2,
        )
    spec = loss_density(stack, kin, beam, grid)
    return broaden(spec, zlp_fwhm)


def _phase_matches(stack, kin, grid) -> bool:
    lo, hi = max(grid[0], DEFAULT_E_GRID[0]), min(grid[-1], DEFAULT_E_GRID[1])
    if hi <= lo:
        return False
    e = np.linspace(lo, hi, DEFAULT_E_GRID[2])
    try:
        ridge = extract_ridge(dispersion_map(stack, np.linspace(*DEFAULT_K_GRID), e))
        phase_match(ridge, kin)
    except BelowThresholdError:
        return False
    except Cherenkov2DError:
        return False
    return True


def frank_tamm_3d(medium: DielectricModel, kin: ElectronKinematics, e_grid):
    """Photons per nm of path per eV in a bulk transparent medium.

    ``alpha / (hbar c) * (1 - 1 / (beta^2 n^2))`` where ``beta n > 1``.
    """
    e = np.asarray(e_grid, dtype=float)
    eps = np.asarray(medium(e), dtype=complex)
    if np.any(np.abs(eps.imag) > 1e-9 * np.maximum(np.abs(eps.real), 1.0)):
        raise UnsupportedInputError("Frank-Tamm formula requires a transparent medium")
    n2 = eps.real
    bracket = np.where(n2 > 0, 1.0 - 1.0 / (kin.beta**2 * np.where(n2 > 0, n2, 1.0)), 0.0)
    return ALPHA / HBAR_C * np.clip(bracket, 0.0, None)
