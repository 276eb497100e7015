"""Joint electron-photon state after a single-mode emission event.

The electron energy ladder is a finite shift register: rung ``j`` has energy
``E_ref - j * hbar w0`` and ``b`` moves ``j -> j + 1``. A single photon mode
is truncated at ``N`` quanta. The scattering operator

    S = exp(g b a^dagger - g^* b^dagger a)

is built as a dense matrix exponential on the product basis, index
``j * (N + 1) + n``. Every term of the generator lowers the electron by one
rung while adding one quantum, so ``j - n`` is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import minimize_scalar
from scipy.special import gammaln

from .eels_model import (
    SimulatedEELS,
    ZLPModel,
    convolve,
    default_eels_grid,
    grid_delta,
    make_zlp,
)
from .errors import TruncationError

LEAK_BOUND = 1e-6


def required_photons(lam: float) -> int:
    return int(np.ceil(lam + 8.0 * np.sqrt(lam) + 8.0))


def electron_lowering(J: int):
    """``b``: rung j -> j + 1 (one quantum of energy removed)."""
    return np.eye(J, k=-1)


def photon_annihilation(N: int):
    """``a`` on the Fock space truncated at N quanta."""
    return np.diag(np.sqrt(np.arange(1, N + 1, dtype=float)), k=1)


def generator(g: complex, J: int, N: int):
    """Anti-Hermitian ``g b a^dagger - g^* b^dagger a``."""
    b = electron_lowering(J)
    a = photon_annihilation(N)
    return g * np.kron(b, a.T) - np.conj(g) * np.kron(b.T, a)


def conserved_operator(J: int, N: int):
    """Diagonal ``j - n`` on the product basis."""
    j = np.repeat(np.arange(J), N + 1)
    n = np.tile(np.arange(N + 1), J)
    return np.diag((j - n).astype(float))


def build_scattering_matrix(g: complex, J: int, N: int):
    """Dense ``exp(G)``; checks that N leaves a Poisson tail below 1e-6."""
    J, N = int(J), int(N)
    if J < 1 or N < 1:
        raise ValueError("need J >= 1 and N >= 1")
    if N < required_photons(abs(g) ** 2):
        raise TruncationError(f"N={N} too small for |g|^2={abs(g) ** 2:g}")
    return expm(generator(complex(g), J, N))


@dataclass(frozen=True, eq=False)
class ElectronPreparation:
    """Coherent superposition over ``K`` consecutive rungs starting at ``offset``."""

    weights: np.ndarray
    offset: int = 0

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=complex))
        norm = np.sqrt(np.sum(np.abs(w) ** 2))
        if not norm > 0:
            raise ValueError("comb weights must not all vanish")
        if self.offset < 0:
            raise ValueError("offset must be non-negative")
        object.__setattr__(self, "weights", w / norm)

    @classmethod
    def single_rung(cls, offset=0):
        return cls(np.ones(1), offset)

    @classmethod
    def flat_comb(cls, K: int, phases=None, offset=0):
        """Equal amplitudes over K rungs; zero relative phase unless given."""
        ph = np.zeros(int(K)) if phases is None else np.asarray(phases, dtype=float)
        return cls(np.exp(1j * ph), offset)

    @property
    def width(self) -> int:
        return self.weights.size

    def energy_uncertainty(self, photon_energy: float) -> float:
        """Span of the comb in eV (``K * hbar w0``)."""
        return self.width * photon_energy


@dataclass(frozen=True, eq=False)
class JointState:
    amplitudes: np.ndarray  # (J, N + 1)
    photon_energy: float  # eV
    reference_rung: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def J(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def N(self) -> int:
        return self.amplitudes.shape[1] - 1

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amplitudes) ** 2)))

    def rung_populations(self):
        return np.sum(np.abs(self.amplitudes) ** 2, axis=1)

    def photon_populations(self):
        return np.sum(np.abs(self.amplitudes) ** 2, axis=0)

    def expectation_j(self) -> float:
        return float(np.dot(np.arange(self.J), self.rung_populations()))

    def expectation_n(self) -> float:
        return float(np.dot(np.arange(self.N + 1), self.photon_populations()))

    def edge_population(self) -> float:
        """Weight on the last photon level or the last electron rung."""
        p = np.abs(self.amplitudes) ** 2
        return float(p[:, -1].sum() + p[-1, :-1].sum())


def minimal_truncation(lam: float, K: int, offset: int = 0):
    N = required_photons(lam)
    return offset + K + N + 4, N


def initial_state(prep: ElectronPreparation, J: int, N: int):
    if prep.offset + prep.width + N > J:
        raise TruncationError("ladder too short: need J >= offset + K + N")
    amp = np.zeros((J, N + 1), dtype=complex)
    amp[prep.offset: prep.offset + prep.width, 0] = prep.weights
    return amp


def evolve(prep: ElectronPreparation, S, J: int, N: int, photon_energy: float = 1.0) -> JointState:
    """Apply S to ``comb (x) |0>``."""
    S = np.asarray(S)
    if S.shape != (J * (N + 1),) * 2:
        raise ValueError("S does not match the (J, N) truncation")
    psi0 = initial_state(prep, J, N).ravel()
    psi = (S @ psi0).reshape(J, N + 1)
    state = JointState(psi, float(photon_energy), prep.offset)
    if abs(state.norm() - 1.0) > LEAK_BOUND or state.edge_population() > LEAK_BOUND:
        raise TruncationError("population reached the truncation edge")
    return state


def simulate(g: complex, prep: ElectronPreparation, photon_energy=1.0, J=None, N=None) -> JointState:
    """Build S for a sufficient truncation and evolve ``prep``."""
    J0, N0 = minimal_truncation(abs(g) ** 2, prep.width, prep.offset)
    J = J0 if J is None else int(J)
    N = N0 if N is None else int(N)
    S = build_scattering_matrix(g, J, N)
    state = evolve(prep, S, J, N, photon_energy)
    return JointState(
        state.amplitudes,
        state.photon_energy,
        state.reference_rung,
        {"g": complex(g), "K": prep.width, "J": J, "N": N},
    )


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    matrix: np.ndarray
    basis: str = "photon_fock"

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    def diagonal(self):
        return np.diag(self.matrix).real.copy()

    def max_off_diagonal(self) -> float:
        off = self.matrix - np.diag(np.diag(self.matrix))
        return float(np.max(np.abs(off))) if off.size > 1 else 0.0

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T)).min())

    def mean_number(self) -> float:
        return float(np.dot(np.arange(self.matrix.shape[0]), self.diagonal()))


def photon_marginal(state: JointState) -> DensityMatrix:
    """Trace out the electron: ``rho[n, m] = sum_j A[j, n] A[j, m]^*``."""
    A = state.amplitudes
    return DensityMatrix(A.T @ A.conj(), "photon_fock")


def electron_density_matrix(state: JointState) -> DensityMatrix:
    A = state.amplitudes
    return DensityMatrix(A @ A.conj().T, "electron_rung")


def electron_marginal(state: JointState, zlp=ZLPModel(), grid=None) -> SimulatedEELS:
    """Rung populations placed at losses ``(j - j_ref) hbar w0`` and smeared by the ZLP."""
    u = default_eels_grid() if grid is None else np.asarray(grid, dtype=float)
    pops = state.rung_populations()
    sticks = np.zeros_like(u)
    for j, pj in enumerate(pops):
        if pj == 0.0:
            continue
        loss = (j - state.reference_rung) * state.photon_energy
        if u[0] <= loss <= u[-1]:
            sticks += pj * grid_delta(u, loss)
    f0 = make_zlp(u, zlp) if isinstance(zlp, ZLPModel) else np.asarray(zlp, dtype=float)
    dens = np.maximum(convolve(sticks, f0, u), 0.0)
    return SimulatedEELS(u, dens, {"photon_energy": state.photon_energy, **state.metadata})


def coherent_amplitudes(alpha: complex, N: int):
    """Truncated ``e^{-|a|^2/2} a^n / sqrt(n!)`` for n = 0..N."""
    n = np.arange(N + 1)
    mag = abs(alpha)
    if mag == 0:
        return np.eye(1, N + 1, dtype=complex)[0]
    logc = -0.5 * mag**2 + n * np.log(mag) - 0.5 * gammaln(n + 1)
    return np.exp(logc) * np.exp(1j * n * np.angle(alpha))


def coherent_fidelity(rho: DensityMatrix, alpha: complex) -> float:
    """``<alpha| rho |alpha>`` with a truncated coherent state."""
    m = rho.matrix
    N = m.shape[0] - 1
    if abs(alpha) ** 2 > N / 4:
        raise TruncationError("Fock truncation too small for |alpha|")
    c = coherent_amplitudes(alpha, N)
    return float(np.clip(np.real(c.conj() @ m @ c), 0.0, 1.0))


@dataclass(frozen=True)
class CoherentFit:
    fidelity: float
    alpha: complex
    phase_scanned: bool = True


def best_coherent_fidelity(rho: DensityMatrix, magnitude=None, n_phase=360) -> CoherentFit:
    """Maximise the coherent fidelity over the phase of alpha.

    The magnitude defaults to ``sqrt(<n>)``.
    """
    r = np.sqrt(rho.mean_number()) if magnitude is None else float(magnitude)
    phases = np.linspace(-np.pi, np.pi, int(n_phase), endpoint=False)
    fids = np.array([coherent_fidelity(rho, r * np.exp(1j * p)) for p in phases])
    k = int(np.argmax(fids))
    dp = phases[1] - phases[0]
    res = minimize_scalar(
        lambda p: -coherent_fidelity(rho, r * np.exp(1j * p)),
        bounds=(phases[k] - dp, phases[k] + dp),
        method="bounded",
        options={"xatol": 1e-10},
    )
    best = max(fids[k], -res.fun)
    phase = res.x if -res.fun >= fids[k] else phases[k]
    return CoherentFit(float(best), complex(r * np.exp(1j * phase)))


def regime_diagnostics(g: complex, K: int, photon_energy: float = 1.0):
    """Photon-state diagnostics for a flat K-rung comb."""
    state = simulate(g, ElectronPreparation.flat_comb(K), photon_energy)
    rho = photon_marginal(state)
    fit = best_coherent_fidelity(rho)
    return {
        "K": int(K),
        "g": complex(g),
        "purity": rho.purity(),
        "max_off_diagonal": rho.max_off_diagonal(),
        "coherent_fidelity": fit.fidelity,
        "alpha": fit.alpha,
        "mean_photons": rho.mean_number(),
        "rho": rho,
    }
