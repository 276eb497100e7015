# %% [markdown]
# # Entangled versus coherent photon states
#
# A narrow electron leaves the photon in a mixture of Fock states, while a
# coherent comb of electron energies leaves it close to a coherent state.
# Run with `python notebooks/03_quantum_regimes.py`.

# %%
import numpy as np

from cherenkov2d.quantum import ElectronPreparation, electron_marginal, photon_marginal, regime_diagnostics, simulate

for K in (1, 2, 4, 8, 16, 32):
    d = regime_diagnostics(1.0, K, photon_energy=2.07)
    print(f"K={K:>2}  purity {d['purity']:.4f}  max off-diagonal {d['max_off_diagonal']:.3f}  "
          f"coherent fidelity {d['coherent_fidelity']:.4f}")

# %%
state = simulate(1.0, ElectronPreparation.single_rung(), photon_energy=2.07)
rho = photon_marginal(state)
print("single rung photon populations:", np.round(rho.diagonal()[:5], 4))

eels = electron_marginal(state)
print("electron loss peaks:", np.round(eels.loss_peaks(), 3), "eV")
