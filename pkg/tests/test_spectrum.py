import warnings

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import k0 as bessel_k0

from cherenkov2d.constants import ALPHA, HBAR_C
from cherenkov2d.dispersion import (
    dispersion_map,
    electron_kinematics,
    extract_ridge,
    phase_match,
)
from cherenkov2d.eels_model import measured_fwhm
from cherenkov2d.errors import DegenerateSpectrumError, GridError, UnsupportedInputError
from cherenkov2d.materials import VACUUM, ConstantPermittivity, DrudeLorentz, LayerStack
from cherenkov2d.spectrum import (
    AboveThresholdWarning,
    BeamGeometry,
    LossSpectrum,
    average_over_beam,
    broaden,
    calibrate_coupling,
    coupling_scaling,
    coupling_strength,
    decay_constant,
    default_loss_grid,
    frank_tamm_3d,
    loss_density,
    loss_integrals,
    sp_reference_spectrum,
    spectral_density,
)


def _k0_limit(eps, kin, e, x0, length_nm):
    return (4 * ALPHA * length_nm / (np.pi * kin.beta**2 * HBAR_C)
            * bessel_k0(2 * e * x0 / (HBAR_C * kin.beta)) * np.imag(-1 / (eps + 1)))


def test_nonretarded_half_space_oracle():
    """Slow electron above a Drude metal approaches the K0 closed form as beta^2."""
    metal = LayerStack(VACUUM, (), DrudeLorentz(1.0, 9.0, 0.4))
    e = np.linspace(5.0, 7.0, 9)
    errs = []
    for kev in (1.0, 0.1):
        kin = electron_kinematics(kev)
        x0 = 2.0 * np.sqrt(kev)  # same K0 argument at both speeds
        got = loss_density(metal, kin, BeamGeometry(x0, 0, 1.0), e).density
        ref = _k0_limit(metal.substrate(e), kin, e, x0, 1e3)
        errs.append(np.max(np.abs(got / ref - 1)))
    assert errs[1] < 5e-3
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.1)


def test_loss_integral_matches_scipy_quad(stack, kin200):
    """Independent route: scipy.quad on the same k_y integrand."""
    from cherenkov2d.dispersion import normal_wavevector, reflection_coefficient_p, reflection_coefficient_s

    e, x0 = 2.07, 30.0
    k0 = e / HBAR_C
    q0 = k0 / kin200.beta

    def integrand(ky):
        kp = np.hypot(q0, ky)
        kz = normal_wavevector(1.0, k0, kp)
        rp = reflection_coefficient_p(stack, kp, e)
        rs = reflection_coefficient_s(stack, kp, e)
        br = rp * kz**2 - rs * (kin200.beta * ky) ** 2
        return float(-(np.exp(2j * kz * x0) / (kz * kp**2) * br).real)

    ref = quad(integrand, 0, 0.05, limit=400, epsrel=1e-10)[0] + quad(integrand, 0.05, 1.0, limit=400)[0]
    got = loss_integrals(stack, kin200, e, x0)
    assert got == pytest.approx(ref, rel=1e-5)


def test_far_electron_decouples(stack, kin200):
    near = loss_density(stack, kin200, BeamGeometry(30, 0, 100)).density
    far = loss_density(stack, kin200, BeamGeometry(3000, 0, 100)).density
    assert far.max() < 1e-20 * near.max() + 1e-300


def test_linear_in_length(stack, kin200):
    a = loss_density(stack, kin200, BeamGeometry(30, 0, 50, 250)).density
    b = loss_density(stack, kin200, BeamGeometry(30, 0, 100, 250)).density
    assert np.allclose(b, 2 * a, rtol=1e-14)


def test_peak_near_phase_match_and_asymmetric(stack, kin200):
    spec = loss_density(stack, kin200, BeamGeometry(30, 0, 100))
    e0 = phase_match(extract_ridge(dispersion_map(stack)), kin200).peak_energy
    pk = spec.peak()
    assert abs(pk - e0) < 0.05
    d = spec.density
    half = d.max() / 2
    above = spec.e_grid[d >= half]
    left = pk - above.min()
    right = above.max() - pk
    assert right > left  # sharp onset, slow high-energy decay


def test_spectral_density_normalisation_and_scale(stack, kin200):
    spec = loss_density(stack, kin200, BeamGeometry(30, 0, 100))
    f = spectral_density(spec)
    assert f.lam == pytest.approx(1.0, abs=1e-9)
    scaled = LossSpectrum(spec.e_grid, 7 * spec.density, kin200)
    assert np.allclose(spectral_density(scaled).density, f.density, rtol=1e-14)
    with pytest.raises(DegenerateSpectrumError):
        spectral_density(LossSpectrum(spec.e_grid, np.zeros_like(spec.e_grid)))


def _fwhm(x, y):
    above = x[y >= y.max() / 2]
    return above.max() - above.min()


def test_fwhm_below_0p2(stack, kin200):
    f = spectral_density(loss_density(stack, kin200, BeamGeometry(30, 0, 100)))
    assert _fwhm(f.e_grid, f.density) < 0.2


def test_coupling_strength_trivial_cases():
    e = default_loss_grid()
    assert coupling_strength(LossSpectrum(e, np.zeros_like(e)), electron_kinematics(200)).g_qu == 0
    g = np.exp(-0.5 * ((e - 2.1) / 0.05) ** 2)
    g *= 0.81 / (g.sum() * 0.01)
    r = coupling_strength(LossSpectrum(e, g), electron_kinematics(200))
    assert r.g_qu == pytest.approx(0.9, rel=1e-12)
    assert r.lam == r.g_qu**2
    assert r.kappa_peak == pytest.approx(decay_constant(2.1, electron_kinematics(200)), rel=1e-3)


def test_lambda_additivity(stack, kin200):
    e = default_loss_grid()
    beam = BeamGeometry(30, 0, 100)
    full = loss_density(stack, kin200, beam, e).lam
    a = loss_density(stack, kin200, beam, e[:76]).lam
    b = loss_density(stack, kin200, beam, e[76:]).lam
    assert a + b == pytest.approx(full, rel=1e-9)


def test_parallel_matches_serial(stack, kin200):
    beam = BeamGeometry(30, 0, 100)
    a = loss_density(stack, kin200, beam, workers=1).density
    b = loss_density(stack, kin200, beam, workers=3).density
    assert np.array_equal(a, b)


def test_scaling_cache_coherence(stack, kin200):
    table = coupling_scaling(stack, kin200, [25.0, 60.0], [40.0, 160.0])
    for i, x0 in enumerate([25.0, 60.0]):
        for j, L in enumerate([40.0, 160.0]):
            fresh = coupling_strength(loss_density(stack, kin200, BeamGeometry(x0, 0, L, 250)))
            assert table.g_qu[i, j] == fresh.g_qu


def test_beam_scaling_matches_average_over_beam(stack, kin200):
    table = coupling_scaling(stack, kin200, [40.0], [100.0], beam_sigma=30.0)
    direct = average_over_beam(stack, kin200, BeamGeometry(40, 30, 100))
    assert table.g_qu[0, 0] == direct.g_qu


def test_square_root_law(stack, kin200):
    table = coupling_scaling(stack, kin200, [30.0, 70.0], [10.0, 40.0, 250.0])
    assert table.g_qu[:, 1] == pytest.approx(2 * table.g_qu[:, 0], rel=1e-12)
    assert table.loglog_slope(0) == pytest.approx(0.5, abs=1e-10)


def test_semilog_slope_pointwise_reported(stack, kin200):
    """ln g is close to affine in x0; its slope exceeds kappa_peak (see notes)."""
    x0 = np.arange(20.0, 121.0, 10.0)
    table = coupling_scaling(stack, kin200, x0, [100.0])
    slope = table.semilog_slope()
    kappa = float(np.mean(table.kappa_peak))
    assert -1.4 * kappa < slope < -kappa
    resid = np.log(table.g_qu[:, 0]) - np.polyval(np.polyfit(x0, np.log(table.g_qu[:, 0]), 1), x0)
    assert np.max(np.abs(resid)) < 0.05


def test_beam_average_limits(stack, kin200):
    point = coupling_strength(loss_density(stack, kin200, BeamGeometry(60, 0, 100)))
    narrow = average_over_beam(stack, kin200, BeamGeometry(60, 1e-4, 100))
    assert narrow.g_qu == pytest.approx(point.g_qu, rel=1e-6)
    wide = average_over_beam(stack, kin200, BeamGeometry(60, 30, 100))
    assert wide.g_qu > point.g_qu
    with pytest.raises(ValueError):
        average_over_beam(stack, kin200, BeamGeometry(60, 30, 100), n_nodes=21)


def test_beam_geometry_validation():
    with pytest.raises(ValueError):
        BeamGeometry(0, 30, 100)
    with pytest.raises(ValueError):
        BeamGeometry(30, -1, 100)
    with pytest.raises(ValueError):
        BeamGeometry(30, 30, 300, 250)


def test_calibration_recovers_multiplier(stack, kin200):
    e = default_loss_grid()
    obs = []
    for x0, L in [(30, 100), (50, 200)]:
        g = coupling_strength(loss_density(stack, kin200, BeamGeometry(x0, 0, L, 250), e,
                                           calibration=0.6)).g_qu
        obs.append((x0, L, g))
    assert calibrate_coupling(stack, kin200, obs, e) == pytest.approx(0.6, rel=1e-10)


def test_non_uniform_grid_rejected(stack, kin200):
    with pytest.raises(GridError):
        loss_density(stack, kin200, BeamGeometry(), np.array([2.0, 2.1, 2.3]))


def test_electron_must_be_in_vacuum(kin200):
    s = LayerStack(ConstantPermittivity(2.0), (), ConstantPermittivity(-10 + 1j))
    with pytest.raises(UnsupportedInputError):
        loss_density(s, kin200, BeamGeometry())


def test_sp_reference_invariance(stack):
    beam = BeamGeometry(30, 30, 100)
    with warnings.catch_warnings():
        warnings.simplefilter("error", AboveThresholdWarning)
        a = sp_reference_spectrum(stack, beam, sub_threshold_kev=25)
        b = sp_reference_spectrum(stack, beam, sub_threshold_kev=30)
    assert abs(a.peak() - b.peak()) < 0.01
    e0 = loss_density(stack, electron_kinematics(200), beam).peak()
    assert abs(a.peak() - e0) > 0.1


def test_sp_reference_warns_above_threshold(stack):
    with pytest.warns(AboveThresholdWarning):
        sp_reference_spectrum(stack, BeamGeometry(), default_loss_grid(1.6, 2.6), sub_threshold_kev=200)


def test_zero_zlp_is_identity(stack):
    raw = loss_density(stack, electron_kinematics(30), BeamGeometry(), default_loss_grid(1.0, 4.0))
    ref = sp_reference_spectrum(stack, BeamGeometry(), default_loss_grid(1.0, 4.0), zlp_fwhm=0.0)
    assert np.array_equal(raw.density, ref.density)


def test_broaden_preserves_area_and_adds_width():
    e = default_loss_grid(0.0, 6.0)
    line = LossSpectrum(e, np.exp(-0.5 * ((e - 3.0) / 0.1) ** 2))
    wide = broaden(line, 0.5)
    assert wide.lam == pytest.approx(line.lam, rel=1e-12)
    fwhm_line = 0.1 * 2 * np.sqrt(2 * np.log(2))
    assert measured_fwhm(e, wide.density) == pytest.approx(np.hypot(fwhm_line, 0.5), rel=1e-3)


def test_frank_tamm():
    kin = electron_kinematics(200)
    e = np.linspace(1.5, 3.0, 31)
    assert np.all(frank_tamm_3d(VACUUM, kin, e) == 0)
    flat = frank_tamm_3d(ConstantPermittivity(4.0), kin, e)
    assert np.allclose(flat, flat[0]) and flat[0] > 0
    assert flat[0] == pytest.approx(ALPHA / HBAR_C * (1 - 1 / (kin.beta**2 * 4.0)))

    class Dispersive:
        def __call__(self, energy):
            return (1.5 + 0.1 * np.asarray(energy)) ** 2 + 0j

    rising = frank_tamm_3d(Dispersive(), kin, e)
    assert np.all(np.diff(rising) > 0)
    with pytest.raises(UnsupportedInputError):
        frank_tamm_3d(ConstantPermittivity(4 + 0.5j), kin, e)
