"""Command line pipelines.

``cherenkov2d <command> [--config FILE] [--out DIR] [--threads N]
[--seed-list 0,1,...] [--set section.key=value ...]``

Commands: ``dispersion``, ``spectrum``, ``eels``, ``fit``, ``quantum`` and
``report``. Each writes plain CSV/JSON tables (no plots) into the output
directory together with the resolved ``config.ini``. Every file carries the
config hash and toolkit version; nothing time-dependent is written, so a
rerun with the same config reproduces the files byte for byte.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, linspace_from
from .dispersion import (
    dispersion_map,
    electron_kinematics,
    emission_angle,
    extract_ridge,
    phase_match,
)
from .eels_model import (
    EELSModelParams,
    ZLPModel,
    embed_on_grid,
    forward_eels,
    grid_delta,
    make_zlp,
)
from .errors import (
    BelowThresholdError,
    Cherenkov2DError,
    ConfigError,
    DegenerateSpectrumError,
    FitFailure,
    GridError,
    MissingInputError,
    NoPeakError,
    RangeError,
    TruncationError,
    UnsupportedInputError,
)
from .inversion import (
    MeasuredSpectrum,
    PQPFamily,
    average_peaks,
    fit_first_peak,
    fit_impact_parameter,
    fit_quantum_coupling,
    normalize_and_subtract_zlp,
)
from .io import complex_matrix_to_json, read_json, read_table, write_json, write_table
from .materials import (
    VACUUM,
    ConstantPermittivity,
    LayerStack,
    TabulatedPermittivity,
    build_experiment_stack,
    gold,
)
from .quantum import ElectronPreparation, best_coherent_fidelity, electron_marginal, photon_marginal, simulate
from .spectrum import (
    AboveThresholdWarning,
    BeamGeometry,
    average_over_beam,
    coupling_scaling,
    coupling_strength,
    frank_tamm_3d,
    loss_density,
    sp_reference_spectrum,
    spectral_density,
)

# most specific first; the first match along the exception's MRO wins
EXIT_CODES = {
    ConfigError: 2,
    MissingInputError: 4,
    GridError: 5,
    RangeError: 6,
    TruncationError: 7,
    FitFailure: 8,
    NoPeakError: 9,
    DegenerateSpectrumError: 10,
    UnsupportedInputError: 11,
    BelowThresholdError: 12,
    Cherenkov2DError: 3,
}

COMMANDS = ("dispersion", "spectrum", "eels", "fit", "quantum", "report")


def exit_code_for(exc: BaseException) -> int:
    for cls in type(exc).__mro__:
        if cls in EXIT_CODES:
            return EXIT_CODES[cls]
    return 3


# -- shared helpers ------------------------------------------------------


def build_stack(cfg: RunConfig) -> LayerStack:
    s = cfg.stack
    if s.vacuum_only:
        return LayerStack(VACUUM, (), VACUUM)
    if s.gold_file:
        au = TabulatedPermittivity.from_file(cfg.resolve(s.gold_file), name="Au-file")
    else:
        au = gold(s.gold_model)
    return build_experiment_stack(
        s.sio2_nm,
        s.si3n4_nm,
        gold_model=au,
        sio2=ConstantPermittivity(s.sio2_eps, "SiO2"),
        si3n4=ConstantPermittivity(s.si3n4_eps, "Si3N4"),
    )


def _meta(cfg: RunConfig, command: str, **extra):
    return {"config_hash": cfg.config_hash(), "version": __version__, "command": command, **extra}


def _beam(cfg):
    b = cfg.beam
    return BeamGeometry(b.x0_nm, b.sigma_nm, b.leff_um, b.lmax_um)


def _loss_grid(cfg):
    g = cfg.grids
    return linspace_from(g.loss_start_ev, g.loss_stop_ev, g.loss_step_ev)


def _eels_grid(cfg):
    g = cfg.grids
    return linspace_from(g.eels_min_ev, g.eels_max_ev, g.eels_step_ev)


def _kev_tag(kev) -> str:
    return f"{kev:g}keV"


def _out(cfg) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(cfg.to_ini())
    return out


def _pqp_on_eels_grid(cfg, stack):
    """Unit-area emission spectrum (or delta) on the EELS channels."""
    u = _eels_grid(cfg)
    m = cfg.model
    if m.delta_pqp:
        return grid_delta(u, m.photon_energy_ev), m.photon_energy_ev
    kin = electron_kinematics(m.eels_kev)
    spec = loss_density(stack, kin, _beam(cfg), _loss_grid(cfg), calibration=m.calibration,
                        workers=cfg.run.threads)
    dens = spectral_density(spec)
    return embed_on_grid(dens.e_grid, dens.density, u), spec.peak()


# -- commands ------------------------------------------------------------


def cmd_dispersion(cfg: RunConfig):
    out = _out(cfg)
    stack = build_stack(cfg)
    g = cfg.grids
    k = np.linspace(g.k_min_per_nm, g.k_max_per_nm, g.k_points)
    e = np.linspace(g.e_min_ev, g.e_max_ev, g.e_points)
    dmap = dispersion_map(stack, k, e, workers=cfg.run.threads)
    meta = _meta(cfg, "dispersion", stack=stack.describe(), **dmap.metadata())
    cols = {"energy_eV": e}
    for j, kj in enumerate(k):
        cols[f"k={kj!r}"] = dmap.values[:, j]
    write_table(out / "dispersion_map.csv", cols, meta)
    write_json(out / "dispersion_map.json", {"meta": meta, "k_per_nm": k, "energy_eV": e})
    ridge = extract_ridge(dmap)
    p = ridge.present
    write_table(out / "ridge.csv",
                {"energy_eV": ridge.energies[p], "k_ridge_per_nm": ridge.k_ridge[p]},
                _meta(cfg, "dispersion", stack=stack.describe()))
    results = []
    for kev in cfg.electron.kev:
        kin = electron_kinematics(kev)
        row = {"kev": kev, "beta": kin.beta}
        try:
            pm = phase_match(ridge, kin)
        except BelowThresholdError as exc:
            row.update(status="below_threshold", detail=str(exc))
        except RangeError as exc:
            row.update(status="out_of_range", detail=str(exc))
        else:
            row.update(
                status="matched",
                peak_energy_eV=pm.peak_energy,
                k_match_per_nm=pm.k_match,
                phase_velocity_c=pm.phase_velocity,
                angle_deg=float(np.degrees(emission_angle(pm.peak_energy, ridge, kin))),
            )
        results.append(row)
    write_json(out / "phase_match.json", {"meta": _meta(cfg, "dispersion"), "results": results})
    return out


def cmd_spectrum(cfg: RunConfig):
    out = _out(cfg)
    stack = build_stack(cfg)
    grid = _loss_grid(cfg)
    beam = _beam(cfg)
    workers = cfg.run.threads
    cal = cfg.model.calibration
    peaks = {"kev": [], "peak_energy_eV": [], "lambda": [], "g_qu": [], "g_qu_beam": [],
             "kappa_peak_per_nm": []}
    ft = {"energy_eV": grid}
    for kev in cfg.electron.kev:
        kin = electron_kinematics(kev)
        spec = loss_density(stack, kin, beam, grid, calibration=cal, workers=workers)
        write_table(out / f"spectrum_{_kev_tag(kev)}.csv",
                    {"energy_eV": grid, "gamma_per_eV": spec.density},
                    _meta(cfg, "spectrum", **spec.metadata))
        c = coupling_strength(spec)
        gb = average_over_beam(stack, kin, beam, grid, n_nodes=cfg.beam.beam_nodes,
                               calibration=cal, workers=workers)
        peaks["kev"].append(kev)
        peaks["peak_energy_eV"].append(c.peak_energy)
        peaks["lambda"].append(c.lam)
        peaks["g_qu"].append(c.g_qu)
        peaks["g_qu_beam"].append(gb.g_qu)
        peaks["kappa_peak_per_nm"].append(c.kappa_peak)
        ft[f"photons_per_nm_per_eV_{_kev_tag(kev)}"] = frank_tamm_3d(
            ConstantPermittivity(cfg.stack.si3n4_eps), kin, grid)
    write_table(out / "spectrum_peaks.csv", peaks, _meta(cfg, "spectrum", x0_nm=beam.impact_parameter))
    write_table(out / "frank_tamm_3d.csv", ft,
                _meta(cfg, "spectrum", medium_eps=cfg.stack.si3n4_eps))

    g = cfg.grids
    ref_grid = linspace_from(g.ref_start_ev, g.ref_stop_ev, g.loss_step_ev)
    for kev in cfg.electron.sub_threshold_kev:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", AboveThresholdWarning)
            ref = sp_reference_spectrum(stack, beam, ref_grid, kev, cfg.model.zlp_fwhm_ev)
        above = any(issubclass(w.category, AboveThresholdWarning) for w in caught)
        write_table(out / f"sp_reference_{_kev_tag(kev)}.csv",
                    {"energy_eV": ref_grid, "gamma_per_eV": ref.density},
                    _meta(cfg, "spectrum", kev=kev, zlp_fwhm=cfg.model.zlp_fwhm_ev,
                          above_threshold=str(above).lower(), peak_energy_eV=ref.peak()))

    kin = electron_kinematics(cfg.model.eels_kev)
    table = coupling_scaling(stack, kin, cfg.sweep.x0_nm, cfg.sweep.leff_um, grid,
                             beam_sigma=cfg.beam.sigma_nm, n_nodes=cfg.beam.beam_nodes,
                             calibration=cal, workers=workers)
    rows = list(table.rows())
    cols = {k: [r[k] for r in rows] for k in rows[0]}
    write_table(out / "coupling_surface.csv", cols,
                _meta(cfg, "spectrum", kev=cfg.model.eels_kev, beam_sigma_nm=cfg.beam.sigma_nm,
                      kappa_peak_per_nm=float(np.mean(table.kappa_peak)),
                      semilog_slope_per_nm=table.semilog_slope(
                          int(np.argmin(np.abs(np.asarray(cfg.sweep.leff_um) - cfg.beam.leff_um))))))
    fam = PQPFamily.from_stack(stack, kin, cfg.sweep.shape_x0_nm, grid, workers)
    shapes = {"energy_eV": grid}
    for x0, d in zip(fam.x0_nm, fam.densities):
        shapes[f"density_x0_{x0:g}nm"] = d
    write_table(out / "peak_shapes.csv", shapes, _meta(cfg, "spectrum", kev=cfg.model.eels_kev))
    return out


def cmd_eels(cfg: RunConfig):
    out = _out(cfg)
    stack = build_stack(cfg)
    u = _eels_grid(cfg)
    m = cfg.model
    f0 = make_zlp(u, ZLPModel(m.zlp_fwhm_ev))
    f_pqp, w0 = _pqp_on_eels_grid(cfg, stack)
    params = EELSModelParams(m.lam, m.s, m.p)
    sim = forward_eels(params, f0, f_pqp, u)
    meta = _meta(cfg, "eels", zlp=f"gaussian(fwhm={m.zlp_fwhm_ev:g})", photon_energy_eV=w0,
                 **params.as_dict())
    write_table(out / "eels.csv", {"energy_eV": u, "density_per_eV": sim.density}, meta)
    write_table(out / "zlp.csv", {"energy_eV": u, "density_per_eV": f0},
                _meta(cfg, "eels", zlp=f"gaussian(fwhm={m.zlp_fwhm_ev:g})"))
    return out


def cmd_fit(cfg: RunConfig):
    f = cfg.fit
    if not f.measurements:
        raise ConfigError("fit.measurements lists no spectra")
    missing = cfg.missing_files()
    if missing:
        raise MissingInputError(missing)
    out = _out(cfg)
    stack = build_stack(cfg)
    families = {}
    zlp_meas = None
    if f.zlp_reference:
        zlp_meas = MeasuredSpectrum.from_csv(cfg.resolve(f.zlp_reference))
        zlp_model = ZLPModel.tabulated(zlp_meas.channels, zlp_meas.counts)
    else:
        zlp_model = ZLPModel(cfg.model.zlp_fwhm_ev)
    window = (f.peak_window_min_ev, f.peak_window_max_ev)
    fits, peaks = [], []
    for path in f.measurements:
        meas = MeasuredSpectrum.from_csv(cfg.resolve(path))
        kev = float(meas.metadata.get("kev", f.kev))
        if kev not in families:
            x0s = linspace_from(f.family_x0_min_nm, f.family_x0_max_nm, f.family_x0_step_nm)
            families[kev] = PQPFamily.from_stack(stack, electron_kinematics(kev), x0s,
                                                 _loss_grid(cfg), cfg.run.threads)
        fam = families[kev]
        res = fit_quantum_coupling(meas, fam, zlp_model, fit_x0=f.fit_x0,
                                   x0_fixed=f.x0_fixed_nm, seeds=cfg.run.seeds,
                                   workers=cfg.run.threads)
        ref = zlp_meas or MeasuredSpectrum(meas.channels, make_zlp(meas.channels, zlp_model))
        sub = normalize_and_subtract_zlp(meas, ref)
        entry = {"file": str(path), "kev": kev, **res.to_dict(), "metadata": meas.metadata,
                 "zlp_shift_eV": sub.shift, "zlp_scale": sub.zlp_scale}
        try:
            pk = fit_first_peak(sub.e_grid, sub.residual, window)
        except NoPeakError as exc:
            entry["first_peak"] = None
            entry["first_peak_error"] = str(exc)
        else:
            peaks.append(pk)
            entry["first_peak"] = {"center_eV": pk.center, "sigma_eV": pk.sigma,
                                   "amplitude": pk.amplitude, "residual_rms": pk.residual_rms}
            sel = (sub.e_grid >= window[0]) & (sub.e_grid <= window[1])
            entry["x0_shape_nm"] = fit_impact_parameter(
                sub.e_grid[sel], sub.residual[sel], fam).x0_nm
        fits.append(entry)
    summary = {"meta": _meta(cfg, "fit", objective="least_squares", u_min_fit_eV=-1.0),
               "fits": fits}
    if peaks:
        mean, sem = average_peaks(peaks)
        summary["first_peak_mean_eV"] = mean
        summary["first_peak_sem_eV"] = sem
    write_json(out / "fit_result.json", summary)
    return out


def cmd_quantum(cfg: RunConfig):
    out = _out(cfg)
    q = cfg.quantum
    w0 = q.photon_energy_ev
    if w0 <= 0:
        kin = electron_kinematics(cfg.model.eels_kev)
        w0 = loss_density(build_stack(cfg), kin, _beam(cfg), _loss_grid(cfg),
                          workers=cfg.run.threads).peak()
    summary = {"K": [], "purity": [], "max_off_diagonal": [], "coherent_fidelity": [],
               "mean_photons": []}
    u = _eels_grid(cfg)
    for K in q.combs:
        state = simulate(q.g, ElectronPreparation.flat_comb(K), w0)
        rho = photon_marginal(state)
        fit = best_coherent_fidelity(rho)
        payload = {
            "meta": _meta(cfg, "quantum"),
            "K": int(K), "g": q.g, "photon_energy_eV": w0,
            "J": state.J, "N": state.N, "basis": rho.basis,
            "purity": rho.purity(), "trace": rho.trace,
            "max_off_diagonal": rho.max_off_diagonal(),
            "coherent_fidelity": fit.fidelity, "alpha": fit.alpha,
            "phase_convention": "alpha phase scanned",
            "rho": complex_matrix_to_json(rho.matrix),
        }
        write_json(out / f"rho_K{int(K)}.json", payload)
        eels = electron_marginal(state, ZLPModel(cfg.model.zlp_fwhm_ev), u)
        write_table(out / f"eels_K{int(K)}.csv", {"energy_eV": u, "density_per_eV": eels.density},
                    _meta(cfg, "quantum", K=int(K), g=q.g, photon_energy_eV=w0))
        for key, val in (("K", int(K)), ("purity", rho.purity()),
                         ("max_off_diagonal", rho.max_off_diagonal()),
                         ("coherent_fidelity", fit.fidelity), ("mean_photons", rho.mean_number())):
            summary[key].append(val)
    write_table(out / "quantum_summary.csv", summary, _meta(cfg, "quantum", g=q.g, photon_energy_eV=w0))
    return out


REPORT_INPUTS = ("spectrum_peaks.csv", "coupling_surface.csv", "peak_shapes.csv", "eels.csv",
                 "quantum_summary.csv")


def cmd_report(cfg: RunConfig):
    out = Path(cfg.run.out)
    needed = [out / n for n in REPORT_INPUTS]
    needed += [out / f"spectrum_{_kev_tag(k)}.csv" for k in cfg.electron.kev]
    needed += [out / f"sp_reference_{_kev_tag(k)}.csv" for k in cfg.electron.sub_threshold_kev]
    needed += [out / f"rho_K{int(k)}.json" for k in cfg.quantum.combs]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise MissingInputError(missing)
    meta = _meta(cfg, "report")
    lines = [f"toolkit {__version__}, config {cfg.config_hash()}"]

    peaks, _ = read_table(out / "spectrum_peaks.csv")
    order = np.argsort(peaks["kev"])
    kev = peaks["kev"][order]
    e_pk = peaks["peak_energy_eV"][order]
    write_table(out / "fig3b_peaks.csv", {"kev": kev, "peak_energy_eV": e_pk}, meta)
    decreasing = bool(np.all(np.diff(e_pk) < 0))
    inside = bool(np.all((e_pk >= 2.03) & (e_pk <= 2.35)))
    lines.append(f"peak energy vs keV strictly decreasing: {decreasing}")
    lines.append(f"peaks inside [2.03, 2.35] eV: {inside} ({', '.join(f'{v:.3f}' for v in e_pk)})")

    spectra = {}
    for k in cfg.electron.kev:
        cols, _ = read_table(out / f"spectrum_{_kev_tag(k)}.csv")
        spectra.setdefault("energy_eV", cols["energy_eV"])
        spectra[f"gamma_per_eV_{_kev_tag(k)}"] = cols["gamma_per_eV"]
    write_table(out / "fig3a_spectra.csv", spectra, meta)
    refs, ref_peaks = {}, []
    for k in cfg.electron.sub_threshold_kev:
        cols, m = read_table(out / f"sp_reference_{_kev_tag(k)}.csv")
        refs.setdefault("energy_eV", cols["energy_eV"])
        refs[f"gamma_per_eV_{_kev_tag(k)}"] = cols["gamma_per_eV"]
        ref_peaks.append(float(m.get("peak_energy_eV", np.nan)))
    write_table(out / "fig3a_sp_reference.csv", refs, meta)
    if len(ref_peaks) > 1:
        lines.append(f"sub-threshold peak spread: {max(ref_peaks) - min(ref_peaks):.4f} eV")
    lines.append(f"2D-CR peak shift over the keV list: {e_pk.max() - e_pk.min():.4f} eV")

    shapes, _ = read_table(out / "peak_shapes.csv")
    write_table(out / "fig3c_peak_shapes.csv", shapes, meta)
    eels, _ = read_table(out / "eels.csv")
    write_table(out / "fig4ab_eels.csv", eels, meta)
    qs, _ = read_table(out / "quantum_summary.csv")
    write_table(out / "fig4c_quantum.csv", qs, meta)
    for i, K in enumerate(qs["K"]):
        lines.append(f"K={int(K)}: purity {qs['purity'][i]:.4f}, max off-diagonal "
                     f"{qs['max_off_diagonal'][i]:.3g}, coherent fidelity {qs['coherent_fidelity'][i]:.4f}")
        read_json(out / f"rho_K{int(K)}.json")

    surf, smeta = read_table(out / "coupling_surface.csv")
    write_table(out / "fig5_surface.csv", surf, meta)
    slopes = np.unique(surf["loglog_slope_leff"])
    g = surf["g_qu"]
    lines.append(f"g_qu surface range: [{g.min():.3f}, {g.max():.3f}]")
    lines.append(f"log-log slope vs L_eff: {slopes.min():.4f} .. {slopes.max():.4f}")
    if "semilog_slope_per_nm" in smeta:
        lines.append(f"semilog slope of ln g vs x0: {smeta['semilog_slope_per_nm']:.5f} 1/nm")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return out


HANDLERS = {
    "dispersion": cmd_dispersion,
    "spectrum": cmd_spectrum,
    "eels": cmd_eels,
    "fit": cmd_fit,
    "quantum": cmd_quantum,
    "report": cmd_report,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    common.add_argument("--seed-list", help="comma-separated fit seeds (overrides run.seeds)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key; repeatable")
    parser = argparse.ArgumentParser(prog="cherenkov2d", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not (sep and dot):
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        cfg.set(section.strip(), name.strip(), value)
    if args.out:
        cfg.run.out = args.out
    if args.threads is not None:
        cfg.run.threads = args.threads
    if args.seed_list:
        cfg.set("run", "seeds", args.seed_list)
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        HANDLERS[args.command](cfg)
    except MissingInputError as exc:
        print("error: missing inputs:", file=sys.stderr)
        for m in exc.missing:
            print(f"  {m}", file=sys.stderr)
        return exit_code_for(exc)
    except Cherenkov2DError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
