# %% [markdown]
# # Guided mode, phase matching and loss spectra
#
# Walk through the stack response, find where each electron velocity meets
# the guided mode, and compare the loss spectra with the slow-electron
# surface-plasmon reference. Run with `python notebooks/01_dispersion_and_spectra.py`.

# %%
import numpy as np

from cherenkov2d.dispersion import dispersion_map, electron_kinematics, extract_ridge, phase_match
from cherenkov2d.errors import BelowThresholdError
from cherenkov2d.materials import build_experiment_stack
from cherenkov2d.spectrum import BeamGeometry, coupling_scaling, loss_density, sp_reference_spectrum

stack = build_experiment_stack()  # Au / SiO2 12.6 nm / Si3N4 27.8 nm, vacuum above
print(stack.describe())

# %% [markdown]
# Im r_p over (k, E); its ridge is the guided-mode dispersion.

# %%
dmap = dispersion_map(stack)
ridge = extract_ridge(dmap)
sel = ridge.present
print(f"ridge found at {sel.sum()} of {sel.size} energies")
for e, k in list(zip(ridge.energies[sel], ridge.k_ridge[sel]))[::60]:
    print(f"  E = {e:.3f} eV   k = {k:.5f} 1/nm")

# %%
for kev in (93, 120, 160, 200):
    kin = electron_kinematics(kev)
    try:
        pm = phase_match(ridge, kin)
        print(f"{kev:>4} keV  beta {kin.beta:.4f}  phase match at {pm.peak_energy:.3f} eV")
    except BelowThresholdError:
        print(f"{kev:>4} keV  beta {kin.beta:.4f}  slower than the mode (no crossing)")

# %% [markdown]
# Loss spectra for an aloof electron 30 nm above the surface over 100 um.
# The peak moves to lower energy as the electron speeds up.

# %%
beam = BeamGeometry(impact_parameter=30.0, beam_sigma=0.0, effective_length=100.0)
for kev in (93, 120, 160, 200):
    spec = loss_density(stack, electron_kinematics(kev), beam)
    print(f"{kev:>4} keV  peak {spec.peak():.3f} eV  lambda {spec.lam:.3f}")

ref25 = sp_reference_spectrum(stack, beam, sub_threshold_kev=25)
ref30 = sp_reference_spectrum(stack, beam, sub_threshold_kev=30)
print(f"surface-plasmon reference: {ref25.peak():.4f} eV (25 keV), {ref30.peak():.4f} eV (30 keV)")

# %% [markdown]
# Coupling strength against impact parameter and interaction length,
# averaged over a Gaussian beam of 30 nm width.

# %%
x0 = np.arange(20.0, 101.0, 20.0)
leff = np.array([10.0, 50.0, 100.0, 250.0])
table = coupling_scaling(stack, electron_kinematics(200), x0, leff, beam_sigma=30.0)
print("x0 \\ L_eff " + "".join(f"{l:>8.0f}" for l in leff))
for i, x in enumerate(x0):
    print(f"{x:>10.0f} " + "".join(f"{g:8.3f}" for g in table.g_qu[i]))
print(f"log-log slope in L_eff: {table.loglog_slope(0):.4f}")
print(f"semilog slope in x0: {table.semilog_slope(2):.5f} 1/nm, "
      f"kappa at the peak: {np.mean(table.kappa_peak):.5f} 1/nm")
