import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cherenkov2d.eels_model import (
    EELSModelParams,
    SimulatedEELS,
    ZLPModel,
    area,
    convolve,
    default_eels_grid,
    forward_eels,
    grid_delta,
    make_zlp,
    measured_fwhm,
    poisson_weights,
    required_n_max,
)
from cherenkov2d.errors import GridError, TruncationError

U = default_eels_grid()
POISSON1 = [0.36788, 0.36788, 0.18394, 0.06131]


def gaussian(u, mu, sigma):
    return np.exp(-0.5 * ((u - mu) / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))


def test_zlp_sigma_and_area():
    zlp = ZLPModel()
    assert zlp.fwhm == 0.5
    assert zlp.sigma == pytest.approx(0.5 / 2.3548, rel=1e-4)
    f = make_zlp(U, zlp)
    assert area(U, f) == pytest.approx(1.0, abs=1e-9)
    assert U[np.argmax(f)] == pytest.approx(0.0, abs=1e-12)
    assert measured_fwhm(U, f) == pytest.approx(0.5, rel=1e-3)


def test_tabulated_zlp_resampled():
    e = np.linspace(-2, 2, 97) + 0.3  # off-centre and coarser than the grid
    prof = np.exp(-0.5 * ((e - 0.3) / 0.2) ** 2) * 1234.0
    f = make_zlp(U, ZLPModel.tabulated(e, prof))
    assert area(U, f) == pytest.approx(1.0, abs=1e-9)
    assert abs(U[np.argmax(f)]) <= 0.01


def test_zlp_validation():
    with pytest.raises(ValueError):
        ZLPModel(fwhm=0.05)
    with pytest.raises(ValueError):
        ZLPModel(fwhm=2.5)
    with pytest.raises(GridError):
        make_zlp(default_eels_grid(-1.0, 12.0), ZLPModel(0.5))


def test_convolve_delta_shifts_exactly():
    f = gaussian(U, 0.0, 0.2)
    shifted = convolve(f, grid_delta(U, 2.1), U)
    k = int(round(2.1 / 0.01))
    assert np.allclose(shifted[k:], f[:-k], atol=1e-12, rtol=0)


def test_convolve_gaussians():
    s1, s2 = 0.2, 0.3
    got = convolve(gaussian(U, 0.0, s1), gaussian(U, 2.0, s2), U)
    ref = gaussian(U, 2.0, np.hypot(s1, s2))
    assert np.max(np.abs(got - ref)) < 1e-6


def test_convolve_zero_and_mismatch():
    assert not convolve(gaussian(U, 0, 0.2), np.zeros_like(U), U).any()
    with pytest.raises(GridError):
        convolve(np.ones(5), np.ones(6), U)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 0.4), st.floats(0.1, 0.4), st.floats(0.5, 4.0))
def test_convolve_area_multiplies(s1, s2, mu):
    f = 0.7 * gaussian(U, 0.0, s1)
    g = 1.9 * gaussian(U, mu, s2)
    assert area(U, convolve(f, g, U)) == pytest.approx(area(U, f) * area(U, g), rel=1e-9)


def test_poisson_weights():
    w0 = poisson_weights(0.0, 10)
    assert w0[0] == 1 and not w0[1:].any()
    w1 = poisson_weights(1.0)
    assert w1[:2] == pytest.approx([0.36788, 0.36788], abs=1e-5)
    for lam in (0.3, 1.0, 2.7):
        w = poisson_weights(lam)
        assert w.sum() >= 1 - 1e-6
        assert np.dot(np.arange(w.size), w) == pytest.approx(lam, abs=1e-6)
    with pytest.raises(TruncationError):
        poisson_weights(3.0, 4)
    assert required_n_max(1.0) == 17


def test_params_validation():
    with pytest.raises(TruncationError):
        EELSModelParams(2.0, n_max=5)
    with pytest.raises(ValueError):
        EELSModelParams(-1.0)
    with pytest.raises(ValueError):
        EELSModelParams(1.0, p=1.2)
    assert EELSModelParams(0.81).g_qu == pytest.approx(0.9)


def test_lambda_zero_returns_zlp():
    f0 = make_zlp(U)
    out = forward_eels(EELSModelParams(0.0), f0, gaussian(U, 2.1, 0.05), U)
    assert np.allclose(out.density, f0, rtol=0, atol=1e-14)


def test_delta_lobes_are_poisson_exactly():
    f0 = grid_delta(U, 0.0)
    out = forward_eels(EELSModelParams(1.0), f0, grid_delta(U, 2.1), U)
    lobes = out.lobe_areas(2.1, 6)
    w = poisson_weights(1.0)
    assert np.allclose(lobes, w[:6], atol=1e-12)
    assert lobes[:4] == pytest.approx(POISSON1, abs=1e-4)


def test_peaks_equally_spaced_with_broad_zlp():
    f0 = make_zlp(U, ZLPModel(0.5))
    out = forward_eels(EELSModelParams(1.0), f0, gaussian(U, 2.1, 0.08), U)
    peaks = out.loss_peaks()
    assert peaks.size >= 4  # ZLP plus at least three loss peaks
    assert np.all(np.abs(np.diff(peaks[:4]) - 2.1) <= 0.01)


def test_s_drops_out_and_area_is_one():
    f0 = make_zlp(U)
    fp = gaussian(U, 2.1, 0.08)
    a = forward_eels(EELSModelParams(0.8, s=1.0, p=0.6), f0, fp, U)
    b = forward_eels(EELSModelParams(0.8, s=0.3, p=0.6), f0, fp, U)
    assert np.array_equal(a.density, b.density)
    wide = default_eels_grid(-3.0, 40.0)
    c = forward_eels(EELSModelParams(0.8, s=0.3, p=0.6), make_zlp(wide), gaussian(wide, 2.1, 0.08), wide)
    assert c.area() == pytest.approx(1.0, abs=1e-6)
    # on the default grid only the lobes beyond 12 eV are missing
    assert 1 - a.area() < 2e-4


@pytest.mark.parametrize("lam,p", [(0.5, 1.0), (1.0, 0.7), (2.0, 0.4)])
def test_mean_loss(lam, p):
    wide = default_eels_grid(-3.0, 40.0)  # negligible leakage up to n ~ 17
    f0 = make_zlp(wide)
    fp = gaussian(wide, 2.2, 0.1)
    out = forward_eels(EELSModelParams(lam, p=p), f0, fp, wide)
    mean_pqp = np.sum(wide * fp) / np.sum(fp)
    assert out.mean_loss() == pytest.approx(p * lam * mean_pqp, abs=1e-3)


def test_grid_refinement():
    fine = default_eels_grid(step=0.005)
    out = {}
    for grid in (U, fine):
        f0 = make_zlp(grid)
        out[grid.size] = forward_eels(EELSModelParams(1.0, p=0.8), f0, gaussian(grid, 2.1, 0.1), grid)
    coarse = out[U.size]
    ref = out[fine.size]
    resampled = np.interp(U, ref.e_grid, ref.density)
    assert np.sum(np.abs(coarse.density - resampled)) * 0.01 < 1e-3


def test_simulated_eels_rejects_negative():
    with pytest.raises(ValueError):
        SimulatedEELS(U, -np.ones_like(U))
