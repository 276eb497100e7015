"""Stratified-medium reflection, the Im r_p density-of-states ridge, and
Cherenkov phase matching for a relativistic electron.

Units: in-plane wavevector ``k`` in 1/nm, photon energy in eV, electron
kinetic energy in keV, velocities as fractions of c.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constants import HBAR_C, ME_C2_KEV
from .errors import BelowThresholdError, GridError, RangeError
from .materials import LayerStack

RIDGE_NOISE_FLOOR = 1e-3
DEFAULT_K_GRID = (1e-3, 0.08, 800)
DEFAULT_E_GRID = (1.6, 2.6, 500)


def normal_wavevector(eps, k0, k_par):
    """``sqrt(eps k0^2 - k^2)`` on the branch with Im >= 0 (Re >= 0 on ties)."""
    kz = np.sqrt(np.asarray(eps * k0**2 - k_par**2, dtype=complex))
    return np.where(kz.imag < 0, -kz, kz)


def _interface_p(eps_i, eps_j, kz_i, kz_j):
    return (eps_j * kz_i - eps_i * kz_j) / (eps_j * kz_i + eps_i * kz_j)


def _interface_s(kz_i, kz_j):
    return (kz_i - kz_j) / (kz_i + kz_j)


def reflection_pair(eps, thicknesses, k0, k_par):
    """(r_p, r_s) from per-medium permittivities ``eps`` (superstrate first).

    ``eps`` is a sequence of arrays broadcastable against ``k0`` and ``k_par``.
    """
    kz = [normal_wavevector(e, k0, k_par) for e in eps]
    n = len(eps)

    def interfaces(i):
        return (
            _interface_p(eps[i], eps[i + 1], kz[i], kz[i + 1]),
            _interface_s(kz[i], kz[i + 1]),
        )

    rp, rs = interfaces(n - 2)
    for i in range(n - 3, -1, -1):
        # e^{2 i kz d}, |.| <= 1 by the branch choice, so no overflow
        phase = np.exp(2j * kz[i + 1] * thicknesses[i])
        tp, ts = interfaces(i)
        rp = (tp + rp * phase) / (1 + tp * rp * phase)
        rs = (ts + rs * phase) / (1 + ts * rs * phase)
    return rp, rs


def _recursive(stack, k_par, energy, polarization):
    k_par = np.asarray(k_par, dtype=float)
    energy = np.asarray(energy, dtype=float)
    k0 = energy / HBAR_C
    eps = [np.asarray(m(energy)) for m in stack.media]
    kz = [normal_wavevector(e, k0, k_par) for e in eps]

    def rij(i):
        if polarization == "p":
            return _interface_p(eps[i], eps[i + 1], kz[i], kz[i + 1])
        return _interface_s(kz[i], kz[i + 1])

    n = len(eps)
    r = rij(n - 2)
    for i in range(n - 3, -1, -1):
        phase = np.exp(2j * kz[i + 1] * stack.layers[i].thickness)
        r_top = rij(i)
        r = (r_top + r * phase) / (1 + r_top * r * phase)
    return r


def reflection_coefficient_p(stack: LayerStack, k_par, energy):
    """p-polarised amplitude reflection of ``stack`` seen from the superstrate.

    Uses the interface recursion ``r = (r01 + r' e^{2ik d})/(1 + r01 r' e^{2ik d})``
    and broadcasts over ``k_par`` and ``energy``. Convention: ratio of
    reflected to incident magnetic field, so a single interface gives
    ``(eps2 kz1 - eps1 kz2)/(eps2 kz1 + eps1 kz2)``.
    """
    return _recursive(stack, k_par, energy, "p")


def reflection_coefficient_s(stack: LayerStack, k_par, energy):
    """s-polarised counterpart of :func:`reflection_coefficient_p`."""
    return _recursive(stack, k_par, energy, "s")


def reflection_coefficient_p_matrix(stack: LayerStack, k_par: float, energy: float):
    """Same quantity via explicit 2x2 transfer-matrix products (scalar inputs).

    Kept as an independent route for cross-checking the recursion; it can
    overflow for very thick absorbing layers.
    """
    k0 = energy / HBAR_C
    eps = [complex(m(energy)) for m in stack.media]
    kz = [complex(normal_wavevector(e, k0, k_par)) for e in eps]
    m_total = np.eye(2, dtype=complex)
    for i in range(len(eps) - 1):
        r = _interface_p(eps[i], eps[i + 1], kz[i], kz[i + 1])
        m_total = m_total @ np.array([[1.0, r], [r, 1.0]])
        if i + 1 < len(eps) - 1:
            phi = kz[i + 1] * stack.layers[i].thickness
            m_total = m_total @ np.diag([np.exp(-1j * phi), np.exp(1j * phi)])
    return m_total[1, 0] / m_total[0, 0]


def _check_grid(grid, name):
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise GridError(f"{name} must be a non-empty 1-D array")
    if np.any(np.diff(g) <= 0):
        raise GridError(f"{name} must be strictly increasing")
    return g


@dataclass(frozen=True, eq=False)
class DispersionMap:
    k_grid: np.ndarray
    e_grid: np.ndarray
    values: np.ndarray  # Im r_p, shape (len(e_grid), len(k_grid))

    def metadata(self) -> dict:
        return {
            "k_min_per_nm": float(self.k_grid[0]),
            "k_max_per_nm": float(self.k_grid[-1]),
            "n_k": int(self.k_grid.size),
            "e_min_eV": float(self.e_grid[0]),
            "e_max_eV": float(self.e_grid[-1]),
            "n_e": int(self.e_grid.size),
            "quantity": "Im r_p",
            "layout": "rows=energy_eV, columns=k_per_nm",
        }


def dispersion_map(stack: LayerStack, k_grid=None, e_grid=None, workers: int = 1):
    """Tabulate Im r_p on an (energy, k) grid.

    Rows are independent; ``workers > 1`` evaluates row blocks in threads
    and assembles them in grid order.
    """
    if k_grid is None:
        k_grid = np.linspace(*DEFAULT_K_GRID)
    if e_grid is None:
        e_grid = np.linspace(*DEFAULT_E_GRID)
    k = _check_grid(k_grid, "k_grid")
    e = _check_grid(e_grid, "e_grid")

    def block(rows):
        return reflection_coefficient_p(stack, k[None, :], e[rows, None]).imag

    chunks = np.array_split(np.arange(e.size), max(1, min(int(workers), e.size)))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(block, chunks))
    else:
        parts = [block(c) for c in chunks]
    values = np.vstack(parts)
    return DispersionMap(k, e, values)


@dataclass(frozen=True, eq=False)
class ModeRidge:
    energies: np.ndarray
    k_ridge: np.ndarray  # nan where absent
    peak_value: np.ndarray
    present: np.ndarray

    @property
    def any(self) -> bool:
        return bool(self.present.any())

    def k_at(self, energy):
        """Linear interpolation of the ridge; nan where either neighbour is absent."""
        e = np.asarray(energy, dtype=float)
        idx = np.searchsorted(self.energies, e, side="right") - 1
        idx = np.clip(idx, 0, self.energies.size - 2)
        e0, e1 = self.energies[idx], self.energies[idx + 1]
        k0, k1 = self.k_ridge[idx], self.k_ridge[idx + 1]
        t = (e - e0) / (e1 - e0)
        out = k0 + t * (k1 - k0)
        inside = (e >= self.energies[0]) & (e <= self.energies[-1])
        return np.where(inside, out, np.nan)[()]


def extract_ridge(dmap: DispersionMap, noise_floor: float = RIDGE_NOISE_FLOOR) -> ModeRidge:
    """Per-energy argmax of Im r_p with 3-point parabolic refinement.

    Ties go to the smallest k; rows whose maximum is below ``noise_floor``
    are marked absent.
    """
    v = dmap.values
    k = dmap.k_grid
    j = np.argmax(v, axis=1)
    rows = np.arange(v.shape[0])
    vmax = v[rows, j]
    k_r = k[j].astype(float)
    inner = (j > 0) & (j < k.size - 1)
    if k.size >= 3 and inner.any():
        r = rows[inner]
        jj = j[inner]
        ym, y0, yp = v[r, jj - 1], v[r, jj], v[r, jj + 1]
        den = ym - 2 * y0 + yp
        with np.errstate(invalid="ignore", divide="ignore"):
            delta = np.where(den < 0, 0.5 * (ym - yp) / den, 0.0)
        # local step, the grid need not be uniform
        step = np.where(delta >= 0, k[jj + 1] - k[jj], k[jj] - k[jj - 1])
        k_r[inner] = k[jj] + np.clip(delta, -0.5, 0.5) * step
    present = vmax >= noise_floor
    k_r = np.where(present, k_r, np.nan)
    return ModeRidge(dmap.e_grid.copy(), k_r, vmax, present)


@dataclass(frozen=True)
class ElectronKinematics:
    kinetic_energy: float  # keV
    beta: float
    gamma: float

    @property
    def velocity(self) -> float:
        """Speed as a fraction of c (same as ``beta``)."""
        return self.beta


def electron_kinematics(kinetic_energy: float) -> ElectronKinematics:
    t = float(kinetic_energy)
    if not t > 0:
        raise ValueError("kinetic energy must be positive")
    gamma = 1.0 + t / ME_C2_KEV
    beta = np.sqrt(1.0 - 1.0 / gamma**2)
    return ElectronKinematics(t, float(beta), float(gamma))


@dataclass(frozen=True)
class PhaseMatchResult:
    peak_energy: float  # eV
    k_match: float  # 1/nm
    phase_velocity: float  # fraction of c


def _mismatch(ridge: ModeRidge, kin: ElectronKinematics, energy):
    return ridge.k_at(energy) - np.asarray(energy) / (HBAR_C * kin.beta)


def phase_match(ridge: ModeRidge, kin: ElectronKinematics, tol: float = 1e-4) -> PhaseMatchResult:
    """Lowest energy where the electron line ``k = w/v`` crosses the ridge."""
    if not ridge.any:
        raise BelowThresholdError("ridge is absent at every energy")
    e = ridge.energies
    f = ridge.k_ridge - e / (HBAR_C * kin.beta)
    ok = ridge.present[:-1] & ridge.present[1:]
    change = ok & (np.sign(f[:-1]) != np.sign(f[1:])) & (f[:-1] != 0)
    hits = np.flatnonzero(change)
    if hits.size == 0:
        valid = f[ridge.present]
        if np.all(valid < 0):
            raise BelowThresholdError(
                f"{kin.kinetic_energy:g} keV electron is slower than every ridge "
                "phase velocity"
            )
        raise RangeError("phase-matching crossing lies outside the ridge domain")
    i = hits[0]
    lo, hi = float(e[i]), float(e[i + 1])
    rising = f[i] < 0
    # keep the end with v_p <= v_e as the answer
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        fm = float(_mismatch(ridge, kin, mid))
        if (fm >= 0) == rising:
            hi = mid
        else:
            lo = mid
    e0 = hi if rising else lo
    k_m = float(ridge.k_at(e0))
    return PhaseMatchResult(e0, k_m, float(e0 / HBAR_C / k_m))


def emission_angle(energy, ridge: ModeRidge, kin: ElectronKinematics):
    """Angle between trajectory and emitted wave, ``arccos(v_p / v_e)``."""
    e = np.asarray(energy, dtype=float)
    k_r = ridge.k_at(e)
    if np.any(np.isnan(k_r)):
        raise RangeError("ridge is not defined at the requested energy")
    ratio = (e / HBAR_C / k_r) / kin.beta
    if np.any(ratio > 1 + 1e-12):
        raise BelowThresholdError("phase velocity exceeds electron velocity")
    return np.arccos(np.minimum(ratio, 1.0))[()]


def angle_from_velocities(phase_velocity, electron_velocity):
    ratio = np.asarray(phase_velocity, dtype=float) / electron_velocity
    if np.any(ratio > 1 + 1e-12):
        raise BelowThresholdError("phase velocity exceeds electron velocity")
    return np.arccos(np.minimum(ratio, 1.0))[()]
