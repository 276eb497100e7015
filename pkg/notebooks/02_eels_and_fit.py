# %% [markdown]
# # Quantised EELS and the inverse fit
#
# Build the Poisson-convolution spectrum, add noise, and recover the
# emission parameters. Run with `python notebooks/02_eels_and_fit.py`.

# %%
import numpy as np

from cherenkov2d.dispersion import electron_kinematics
from cherenkov2d.eels_model import EELSModelParams, ZLPModel, default_eels_grid, forward_eels, grid_delta, make_zlp
from cherenkov2d.inversion import (
    MeasuredSpectrum,
    PQPFamily,
    fit_first_peak,
    fit_quantum_coupling,
    normalize_and_subtract_zlp,
    simulate_measurement,
)
from cherenkov2d.materials import build_experiment_stack

u = default_eels_grid()
f0 = make_zlp(u, ZLPModel(0.5))

# %% [markdown]
# With a sharp 2.1 eV line the loss lobes carry Poisson weights.

# %%
sim = forward_eels(EELSModelParams(1.0), f0, grid_delta(u, 2.1), u)
print("lobe areas:", np.round(sim.lobe_areas(2.1, 5), 5))
print("peaks at:", np.round(sim.loss_peaks(), 3), "eV")

# %% [markdown]
# Emission spectra for a range of impact parameters at 200 keV feed the fit.

# %%
stack = build_experiment_stack()
family = PQPFamily.from_stack(stack, electron_kinematics(200), np.arange(5.0, 201.0, 5.0))

meas = simulate_measurement(1.0, 0.7, 40.0, family, noise=0.01, seed=1)
fit = fit_quantum_coupling(meas, family)
print(f"lambda {fit.lambda_hat:.4f}  s*p {fit.sp_hat:.4f}  x0 {fit.x0_hat:.1f} nm  g {fit.g_qu_hat:.4f}")
print("half-widths:", {k: round(v, 4) for k, v in fit.half_widths.items()})

# %% [markdown]
# First-lobe position after removing the zero-loss peak.

# %%
zlp_ref = MeasuredSpectrum(u, f0)
res = normalize_and_subtract_zlp(meas, zlp_ref)
pk = fit_first_peak(u, res.residual)
print(f"residual area {res.area:.4f}, expected {0.7 * (1 - np.exp(-1.0)):.4f}")
print(f"first lobe centre {pk.center:.3f} eV, emission maximum {family.e_grid[np.argmax(family.at(40.0))]:.3f} eV")
