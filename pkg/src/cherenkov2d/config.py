"""Run configuration.

One INI file holds every input of a pipeline run. Sections map onto the
dataclasses below; list values are comma separated. Serialising a
:class:`RunConfig` and parsing the text back gives an equal object, and the
SHA-1 of the canonical text identifies the run in every output header.

Example::

    [stack]
    sio2_nm = 12.6
    si3n4_nm = 27.8
    gold_model = tabulated

    [electron]
    kev = 93, 120, 160, 200

    [run]
    out = results
    threads = 1
    seeds = 0, 1, 2, 3, 4, 5, 6, 7
"""

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, MissingInputError


@dataclass
class StackConfig:
    sio2_nm: float = 12.6
    si3n4_nm: float = 27.8
    gold_model: str = "tabulated"  # tabulated | drude_lorentz
    gold_file: str = ""  # optional permittivity table replacing the built-in gold
    sio2_eps: float = 2.13
    si3n4_eps: float = 4.0
    vacuum_only: bool = False


@dataclass
class ElectronConfig:
    kev: tuple = (93.0, 120.0, 160.0, 200.0)
    sub_threshold_kev: tuple = (25.0, 30.0)


@dataclass
class BeamConfig:
    x0_nm: float = 30.0
    sigma_nm: float = 30.0
    leff_um: float = 100.0
    lmax_um: float = 250.0
    beam_nodes: int = 41


@dataclass
class GridConfig:
    loss_start_ev: float = 1.5
    loss_stop_ev: float = 3.0
    loss_step_ev: float = 0.01
    ref_start_ev: float = 1.0
    ref_stop_ev: float = 4.0
    eels_min_ev: float = -3.0
    eels_max_ev: float = 12.0
    eels_step_ev: float = 0.01
    k_min_per_nm: float = 1e-3
    k_max_per_nm: float = 0.08
    k_points: int = 400
    e_min_ev: float = 1.6
    e_max_ev: float = 2.6
    e_points: int = 201


@dataclass
class ModelConfig:
    lam: float = 1.0
    s: float = 1.0
    p: float = 1.0
    zlp_fwhm_ev: float = 0.5
    calibration: float = 1.0
    eels_kev: float = 200.0
    delta_pqp: bool = False  # replace f_PQP by a grid delta at photon_energy_ev
    photon_energy_ev: float = 2.1


@dataclass
class FitConfig:
    measurements: tuple = ()
    zlp_reference: str = ""
    kev: float = 200.0
    fit_x0: bool = True
    x0_fixed_nm: float = 40.0
    family_x0_min_nm: float = 5.0
    family_x0_max_nm: float = 200.0
    family_x0_step_nm: float = 5.0
    peak_window_min_ev: float = 1.5
    peak_window_max_ev: float = 2.8


@dataclass
class QuantumConfig:
    g: float = 1.0
    combs: tuple = (1, 32)
    photon_energy_ev: float = 0.0  # 0 means: loss peak of the eels_kev spectrum


@dataclass
class SweepConfig:
    x0_nm: tuple = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0, 100.0)
    leff_um: tuple = (10.0, 25.0, 50.0, 100.0, 150.0, 200.0, 250.0)
    shape_x0_nm: tuple = (20.0, 30.0, 40.0, 50.0, 60.0)


@dataclass
class RunSection:
    out: str = "results"
    threads: int = 1
    seeds: tuple = (0, 1, 2, 3, 4, 5, 6, 7)


SECTIONS = {
    "stack": StackConfig,
    "electron": ElectronConfig,
    "beam": BeamConfig,
    "grids": GridConfig,
    "model": ModelConfig,
    "fit": FitConfig,
    "quantum": QuantumConfig,
    "sweep": SweepConfig,
    "run": RunSection,
}


@dataclass
class RunConfig:
    stack: StackConfig = field(default_factory=StackConfig)
    electron: ElectronConfig = field(default_factory=ElectronConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    grids: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    quantum: QuantumConfig = field(default_factory=QuantumConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    run: RunSection = field(default_factory=RunSection)
    base_dir: str = field(default=".", compare=False)

    # -- serialisation -------------------------------------------------
    def to_ini(self) -> str:
        lines = []
        for name in SECTIONS:
            lines.append(f"[{name}]")
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                lines.append(f"{f.name} = {_dump(getattr(section, f.name))}")
            lines.append("")
        return "\n".join(lines)

    @classmethod
    def from_ini(cls, text: str, base_dir=".") -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        unknown = set(parser.sections()) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        cfg = cls(base_dir=str(base_dir))
        for name in parser.sections():
            for key, raw in parser.items(name):
                cfg.set(name, key, raw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise MissingInputError([str(path)])
        return cls.from_ini(path.read_text(), base_dir=path.parent)

    def set(self, section: str, key: str, raw: str):
        """Set ``section.key`` from its text form (used for CLI overrides)."""
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        sec = getattr(self, section)
        names = {f.name: f for f in dataclasses.fields(sec)}
        if key not in names:
            raise ConfigError(f"unknown key {section}.{key}")
        default = names[key].default
        try:
            setattr(sec, key, _parse(raw, default))
        except ValueError as exc:
            raise ConfigError(f"{section}.{key}: cannot parse {raw!r}") from exc

    def config_hash(self) -> str:
        """SHA-1 prefix of the canonical text, ignoring keys that cannot change results."""
        text = "\n".join(
            line for line in self.to_ini().splitlines()
            if not line.startswith(("out = ", "threads = "))
        )
        return hashlib.sha1(text.encode()).hexdigest()[:16]

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- checks --------------------------------------------------------
    def validate(self):
        s, g, b, m = self.stack, self.grids, self.beam, self.model
        checks = [
            (s.sio2_nm > 0 and s.si3n4_nm > 0, "layer thicknesses must be positive"),
            (s.gold_model in ("tabulated", "drude_lorentz"), "gold_model must be tabulated or drude_lorentz"),
            (all(t > 0 for t in self.electron.kev), "electron energies must be positive"),
            (len(self.electron.kev) > 0, "at least one electron energy is required"),
            (b.x0_nm > 0 and b.sigma_nm >= 0, "beam geometry must be positive"),
            (0 < b.leff_um <= b.lmax_um, "need 0 < leff_um <= lmax_um"),
            (b.beam_nodes >= 33, "beam_nodes must be >= 33"),
            (g.loss_step_ev > 0 and g.loss_stop_ev > g.loss_start_ev > 0, "bad loss grid"),
            (g.eels_step_ev > 0 and g.eels_max_ev > 0 > g.eels_min_ev, "EELS grid must straddle zero"),
            (_aligned(g.eels_min_ev, g.eels_step_ev), "eels_min_ev must be a multiple of eels_step_ev"),
            (_aligned(g.loss_start_ev - g.eels_min_ev, g.eels_step_ev)
             and abs(g.loss_step_ev - g.eels_step_ev) < 1e-12,
             "loss grid must coincide with EELS channels"),
            (g.k_points >= 3 and g.e_points >= 3, "dispersion grids need >= 3 points"),
            (g.k_max_per_nm > g.k_min_per_nm > 0, "bad k range"),
            (g.e_max_ev > g.e_min_ev > 0, "bad energy range"),
            (m.lam >= 0 and 0 <= m.p <= 1 and 0 < m.s <= 1, "bad EELS model parameters"),
            (0.1 <= m.zlp_fwhm_ev <= 2.0, "zlp_fwhm_ev must lie in [0.1, 2.0]"),
            (m.calibration > 0, "calibration must be positive"),
            (self.fit.family_x0_step_nm <= 5.0, "family x0 spacing must be <= 5 nm"),
            (all(int(k) >= 1 for k in self.quantum.combs), "comb widths must be >= 1"),
            (self.run.threads >= 1, "threads must be >= 1"),
            (len(self.run.seeds) > 0, "seed list must not be empty"),
        ]
        bad = [msg for ok, msg in checks if not ok]
        if bad:
            raise ConfigError("; ".join(bad))
        return self

    def missing_files(self):
        paths = [self.stack.gold_file] if self.stack.gold_file else []
        paths += list(self.fit.measurements)
        if self.fit.zlp_reference:
            paths.append(self.fit.zlp_reference)
        return [str(self.resolve(p)) for p in paths if not self.resolve(p).exists()]


def _aligned(value, step) -> bool:
    q = value / step
    return abs(q - round(q)) < 1e-6


def _dump(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_dump(v) for v in value)
    return str(value)


def _parse(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(raw)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        items = [t.strip() for t in raw.split(",") if t.strip()]
        if default and isinstance(default[0], int) and not isinstance(default[0], bool):
            return tuple(int(t) for t in items)
        if default and isinstance(default[0], float):
            return tuple(float(t) for t in items)
        return tuple(items)
    return raw


def linspace_from(start, stop, step):
    n = int(round((stop - start) / step)) + 1
    return start + step * np.arange(n)
