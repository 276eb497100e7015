"""Physical constants in the toolkit's working units (eV, nm, keV)."""

from scipy import constants as _sc

#: hbar * c in eV nm
HBAR_C = _sc.hbar * _sc.c / _sc.e * 1e9
#: electron rest energy in keV
ME_C2_KEV = _sc.physical_constants["electron mass energy equivalent in MeV"][0] * 1e3
#: fine-structure constant
ALPHA = _sc.fine_structure
