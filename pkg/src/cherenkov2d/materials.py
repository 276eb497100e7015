"""Frequency-dependent permittivity models and the layered sample.

Three model families are provided, all evaluated on photon energy in eV:

* :class:`ConstantPermittivity` for non-dispersive dielectrics,
* :class:`TabulatedPermittivity` for measured optical constants (linear
  interpolation of Re and Im separately, no extrapolation),
* :class:`DrudeLorentz` for a free-electron term plus Lorentz oscillators.

A :class:`LayerStack` is the planar environment seen by the electron:
superstrate (electron side), finite layers, substrate.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .errors import RangeError

ArrayLike = Union[float, Sequence[float], np.ndarray]


def _as_energy(energy):
    e = np.asarray(energy, dtype=float)
    if np.any(~(e > 0)):
        raise ValueError("photon energy must be positive")
    return e


@dataclass(frozen=True)
class ConstantPermittivity:
    eps: complex = 1.0
    name: str = "constant"

    def __post_init__(self):
        object.__setattr__(self, "eps", complex(self.eps))
        if self.eps.imag < 0:
            raise ValueError("passive medium requires Im(eps) >= 0")

    def __call__(self, energy: ArrayLike):
        e = _as_energy(energy)
        return np.full(e.shape, self.eps, dtype=complex)[()]

    def describe(self) -> str:
        return f"const({self.eps.real:.6g}{self.eps.imag:+.6g}j)"


@dataclass(frozen=True, eq=False)
class TabulatedPermittivity:
    """Measured permittivity on a strictly increasing energy grid."""

    energy: np.ndarray
    eps: np.ndarray
    name: str = "tabulated"

    def __post_init__(self):
        e = np.array(self.energy, dtype=float)
        z = np.array(self.eps, dtype=complex)
        if e.ndim != 1 or e.shape != z.shape or e.size < 2:
            raise ValueError("need matching 1-D energy and eps arrays of length >= 2")
        if np.any(np.diff(e) <= 0):
            raise ValueError("tabulated energies must be strictly increasing")
        if np.any(z.imag < 0):
            raise ValueError("passive medium requires Im(eps) >= 0")
        e.setflags(write=False)
        z.setflags(write=False)
        object.__setattr__(self, "energy", e)
        object.__setattr__(self, "eps", z)

    @classmethod
    def from_file(cls, path, name=None) -> "TabulatedPermittivity":
        """Read ``energy_eV, Re eps[, Im eps]`` columns; ``#`` starts a comment."""
        data = np.loadtxt(path, comments="#", delimiter=None, ndmin=2)
        if data.shape[1] == 2:
            eps = data[:, 1].astype(complex)
        elif data.shape[1] == 3:
            eps = data[:, 1] + 1j * data[:, 2]
        else:
            raise ValueError(f"{path}: expected 2 or 3 columns, got {data.shape[1]}")
        return cls(data[:, 0], eps, name=name or Path(path).stem)

    @property
    def energy_range(self):
        return float(self.energy[0]), float(self.energy[-1])

    def __call__(self, energy: ArrayLike):
        e = _as_energy(energy)
        lo, hi = self.energy_range
        if np.any(e < lo) or np.any(e > hi):
            raise RangeError(
                f"{self.name}: energy outside tabulated range [{lo}, {hi}] eV"
            )
        re = np.interp(e, self.energy, self.eps.real)
        im = np.interp(e, self.energy, self.eps.imag)
        return (re + 1j * im)[()]

    def describe(self) -> str:
        digest = hashlib.sha1(
            self.energy.tobytes() + self.eps.tobytes()
        ).hexdigest()[:10]
        return f"table({self.name},{digest})"


@dataclass(frozen=True)
class DrudeLorentz:
    """``eps_inf - wp^2/(E(E + i*gamma)) + sum f_j wp^2/(E_j^2 - E^2 - i*E*w_j)``.

    All energies in eV. ``oscillators`` holds ``(strength, center, width)``
    triples; strengths are dimensionless and scale ``wp**2``.
    """

    eps_inf: float = 1.0
    plasma_energy: float = 9.0
    damping: float = 0.0
    oscillators: tuple = field(default_factory=tuple)
    name: str = "drude-lorentz"

    def __post_init__(self):
        osc = tuple(tuple(float(v) for v in o) for o in self.oscillators)
        if any(len(o) != 3 for o in osc):
            raise ValueError("oscillators must be (strength, center, width) triples")
        if self.damping < 0 or any(o[0] < 0 or o[2] < 0 for o in osc):
            raise ValueError("negative damping or strength makes the medium active")
        object.__setattr__(self, "oscillators", osc)

    def __call__(self, energy: ArrayLike):
        e = _as_energy(energy)
        wp2 = self.plasma_energy**2
        eps = self.eps_inf - wp2 / (e * (e + 1j * self.damping))
        for strength, center, width in self.oscillators:
            eps = eps + strength * wp2 / (center**2 - e**2 - 1j * e * width)
        return np.asarray(eps, dtype=complex)[()]

    def describe(self) -> str:
        osc = ";".join("{:.6g},{:.6g},{:.6g}".format(*o) for o in self.oscillators)
        return (
            f"dl({self.eps_inf:.6g},{self.plasma_energy:.6g},"
            f"{self.damping:.6g},[{osc}])"
        )


DielectricModel = Union[ConstantPermittivity, TabulatedPermittivity, DrudeLorentz]


def evaluate_permittivity(model: DielectricModel, energy: ArrayLike):
    """Complex permittivity of ``model`` at photon energy ``energy`` (eV)."""
    return model(energy)


VACUUM = ConstantPermittivity(1.0, name="vacuum")
SIO2 = ConstantPermittivity(2.13, name="SiO2")
SI3N4 = ConstantPermittivity(4.0, name="Si3N4")


def gold_johnson_christy() -> TabulatedPermittivity:
    ref = resources.files("cherenkov2d") / "data" / "au_johnson_christy.txt"
    with resources.as_file(ref) as path:
        return TabulatedPermittivity.from_file(path, name="Au-JC")


# Rakic et al., Appl. Opt. 37, 5271 (1998), rescaled so that the Drude
# plasma energy is sqrt(f0) * 9.03 eV and the Lorentz strengths are f_j / f0.
_RAKIC_F0 = 0.760
_RAKIC_WP = 9.03
GOLD_DRUDE_LORENTZ = DrudeLorentz(
    eps_inf=1.0,
    plasma_energy=np.sqrt(_RAKIC_F0) * _RAKIC_WP,
    damping=0.053,
    oscillators=tuple(
        (f / _RAKIC_F0, w, g)
        for f, g, w in [
            (0.024, 0.241, 0.415),
            (0.010, 0.345, 0.830),
            (0.071, 0.870, 2.969),
            (0.601, 2.494, 4.304),
            (4.384, 2.214, 13.32),
        ]
    ),
    name="Au-DL",
)


def gold(model: str = "tabulated") -> DielectricModel:
    """Gold permittivity; falls back to Drude-Lorentz if the table is missing."""
    if model == "drude_lorentz":
        return GOLD_DRUDE_LORENTZ
    if model != "tabulated":
        raise ValueError(f"unknown gold model {model!r}")
    try:
        return gold_johnson_christy()
    except (FileNotFoundError, OSError):
        return GOLD_DRUDE_LORENTZ


@dataclass(frozen=True)
class Layer:
    thickness: float  # nm
    material: DielectricModel

    def __post_init__(self):
        t = float(self.thickness)
        if not (np.isfinite(t) and t > 0):
            raise ValueError("layer thickness must be finite and positive")
        object.__setattr__(self, "thickness", t)


@dataclass(frozen=True)
class LayerStack:
    """Superstrate / layers (superstrate side first) / substrate."""

    superstrate: DielectricModel = VACUUM
    layers: tuple = ()
    substrate: DielectricModel = VACUUM

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))

    @property
    def media(self):
        return (self.superstrate, *(l.material for l in self.layers), self.substrate)

    @property
    def thicknesses(self):
        return tuple(l.thickness for l in self.layers)

    def permittivities(self, energy):
        """Permittivity of every medium, shape ``(n_media,) + energy.shape``."""
        e = np.asarray(energy, dtype=float)
        return np.stack([np.broadcast_to(m(e), e.shape) for m in self.media])

    def describe(self) -> str:
        parts = [self.superstrate.describe()]
        parts += [f"{l.material.describe()}@{l.thickness:.6g}nm" for l in self.layers]
        parts.append(self.substrate.describe())
        return " / ".join(parts)

    def fingerprint(self) -> str:
        return hashlib.sha1(self.describe().encode()).hexdigest()[:12]


def build_experiment_stack(
    sio2_nm: float = 12.6,
    si3n4_nm: float = 27.8,
    *,
    gold_model: DielectricModel | None = None,
    sio2: DielectricModel = SIO2,
    si3n4: DielectricModel = SI3N4,
) -> LayerStack:
    """Vacuum / Si3N4 / SiO2 / semi-infinite Au.

    Defaults are the cross-section measured thicknesses; the nominal
    deposition values are ``(10, 30)``. The 200 nm gold film is opaque in the
    visible and is treated as the substrate.
    """
    if not (sio2_nm > 0 and si3n4_nm > 0):
        raise ValueError("layer thicknesses must be positive")
    return LayerStack(
        superstrate=VACUUM,
        layers=(Layer(si3n4_nm, si3n4), Layer(sio2_nm, sio2)),
        substrate=gold_model if gold_model is not None else gold(),
    )
