"""From recorded EELS back to emission parameters.

Pipeline: normalise and subtract the zero-loss peak, fit a Gaussian to the
first loss lobe, average repetitions, and fit the full Poisson-convolution
model for ``(lambda, s*p, x0)`` against a family of emission spectra.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit, minimize

from .eels_model import (
    FWHM_TO_SIGMA,
    EELSModelParams,
    ZLPModel,
    _grid_step,
    default_eels_grid,
    embed_on_grid,
    forward_eels,
    make_zlp,
    measured_fwhm,
)
from .errors import DegenerateSpectrumError, FitFailure, GridError, NoPeakError
from .io import _jsonable, read_spectrum
from .spectrum import _parallel_integrals, check_uniform, default_loss_grid

DEFAULT_SEEDS = (0, 1, 2, 3, 4, 5, 6, 7)
FIRST_PEAK_WINDOW = (1.5, 2.8)
LAMBDA_BOUNDS = (0.0, 5.0)
X0_BOUNDS = (5.0, 200.0)
FIT_U_MIN = -1.0
MAX_FAMILY_SPACING = 5.0


@dataclass(frozen=True, eq=False)
class MeasuredSpectrum:
    channels: np.ndarray  # eV
    counts: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        g, _ = _grid_step(self.channels)
        c = np.asarray(self.counts, dtype=float)
        if c.shape != g.shape:
            raise GridError("counts and channels differ in length")
        if np.any(c < 0) or not c.sum() > 0:
            raise DegenerateSpectrumError("counts must be nonnegative with a positive total")
        object.__setattr__(self, "channels", g)
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_csv(cls, path):
        """Two-column ``energy_eV, counts`` file; ``# kev=``, ``# x0_nm=`` ... metadata."""
        e, counts, meta = read_spectrum(path)
        keep = {k: meta[k] for k in ("kev", "x0_nm", "lmax_um", "rep") if k in meta}
        return cls(e, counts, keep)

    @property
    def step(self) -> float:
        return _grid_step(self.channels)[1]

    @property
    def density(self):
        """Unit-area version of the counts (1/eV)."""
        return self.counts / (self.counts.sum() * self.step)

    def resampled(self, grid) -> "MeasuredSpectrum":
        g, _ = _grid_step(grid)
        return MeasuredSpectrum(
            g, np.interp(g, self.channels, self.counts, left=0.0, right=0.0), dict(self.metadata)
        )


def _same_grid(a, b) -> bool:
    return a.shape == b.shape and np.allclose(a, b, rtol=0, atol=1e-9)


@dataclass(frozen=True, eq=False)
class ZLPSubtraction:
    e_grid: np.ndarray
    residual: np.ndarray  # 1/eV, in units of the unit-area measurement
    zlp_scale: float
    shift: float  # eV applied to the reference
    sigma_zlp: float

    @property
    def area(self) -> float:
        return float(self.residual.sum() * _grid_step(self.e_grid)[1])


def _alignment_shift(u, meas, ref, fwhm, step):
    """Sub-channel lag maximising the cross-correlation near the zero-loss maximum."""
    near = np.abs(u) <= max(1.0, 2 * fwhm)
    centre = int(np.flatnonzero(near)[np.argmax(meas[near])])
    half = int(round(2 * fwhm / step))
    lo, hi = max(centre - half, 0), min(centre + half + 1, u.size)
    seg = meas[lo:hi]
    max_lag = int(round(fwhm / step))
    lags = np.arange(-max_lag, max_lag + 1)
    idx = np.arange(lo, hi)
    chan = np.arange(u.size)
    corr = np.array([
        np.dot(seg, np.interp(idx - l, chan, ref, left=0.0, right=0.0)) for l in lags
    ])
    k = int(np.argmax(corr))
    frac = 0.0
    if 0 < k < lags.size - 1:
        den = corr[k - 1] - 2 * corr[k] + corr[k + 1]
        if den < 0:
            frac = 0.5 * (corr[k - 1] - corr[k + 1]) / den
    return (lags[k] + frac) * step


def normalize_and_subtract_zlp(meas: MeasuredSpectrum, zlp_ref: MeasuredSpectrum) -> ZLPSubtraction:
    """Unit-area measurement minus the aligned, height-matched reference ZLP.

    Negative residuals are clipped only in the loss region ``u > 3 sigma_ZLP``.
    """
    u = meas.channels
    step = meas.step
    if not _same_grid(u, zlp_ref.channels):
        lo, hi = zlp_ref.channels[0], zlp_ref.channels[-1]
        if lo > 0 or hi < 0:
            raise GridError("reference ZLP does not cover zero loss")
        zlp_ref = zlp_ref.resampled(u)
    m = meas.density
    z = zlp_ref.density
    fwhm = measured_fwhm(u, z)
    sigma = fwhm * FWHM_TO_SIGMA
    shift = _alignment_shift(u, m, z, fwhm, step)
    z_al = np.interp(u - shift, u, z, left=0.0, right=0.0)
    core = np.abs(u - shift) <= 0.5 * fwhm
    scale = float(np.dot(m[core], z_al[core]) / np.dot(z_al[core], z_al[core]))
    res = m - scale * z_al
    loss = u > 3 * sigma
    res[loss] = np.maximum(res[loss], 0.0)
    return ZLPSubtraction(u, res, scale, float(shift), float(sigma))


@dataclass(frozen=True)
class PeakFit:
    center: float  # eV
    sigma: float  # eV
    amplitude: float
    residual_rms: float


def _noise_level(y):
    if y.size < 5:
        return 0.0
    d2 = y[2:] - 2 * y[1:-1] + y[:-2]
    return float(1.4826 * np.median(np.abs(d2 - np.median(d2))) / np.sqrt(6.0))


def fit_first_peak(energy, values, window=FIRST_PEAK_WINDOW) -> PeakFit:
    """Least-squares Gaussian on the first loss lobe; its mean is the peak energy."""
    x = np.asarray(energy, dtype=float)
    y = np.asarray(values, dtype=float)
    sel = (x >= window[0]) & (x <= window[1])
    if sel.sum() < 5:
        raise NoPeakError("fit window holds fewer than five channels")
    xw, yw = x[sel], y[sel]
    smooth = uniform_filter1d(yw, 5, mode="nearest")
    i = int(np.argmax(smooth))
    noise = _noise_level(yw)
    if not smooth[i] > 3 * noise or i in (0, yw.size - 1):
        raise NoPeakError(f"no significant peak in [{window[0]}, {window[1]}] eV")

    def gauss(t, a, c, s):
        return a * np.exp(-0.5 * ((t - c) / s) ** 2)

    step = xw[1] - xw[0]
    p0 = (smooth[i], xw[i], 0.1)
    bounds = ([0.0, window[0], step / 2], [np.inf, window[1], window[1] - window[0]])
    try:
        popt, _ = curve_fit(gauss, xw, yw, p0=p0, bounds=bounds, max_nfev=10000)
    except RuntimeError as exc:
        raise NoPeakError(f"Gaussian fit failed: {exc}") from exc
    a, c, s = popt
    if not window[0] < c < window[1]:
        raise NoPeakError("fitted centre left the window")
    rms = float(np.sqrt(np.mean((gauss(xw, *popt) - yw) ** 2)))
    return PeakFit(float(c), float(s), float(a), rms)


def average_peaks(fits):
    """Unweighted mean centre and its standard error."""
    centers = np.array([f.center for f in fits], dtype=float)
    if centers.size == 0:
        raise ValueError("no fits to average")
    if centers.size == 1:
        return float(centers[0]), 0.0
    return float(centers.mean()), float(centers.std(ddof=1) / np.sqrt(centers.size))


def _interp_members(x, members, x0):
    """Linear interpolation between neighbouring members (clamped at the ends)."""
    if x.size == 1 or x0 <= x[0]:
        return members[0]
    if x0 >= x[-1]:
        return members[-1]
    i = int(np.searchsorted(x, x0)) - 1
    w = (x0 - x[i]) / (x[i + 1] - x[i])
    return (1 - w) * members[i] + w * members[i + 1]


@dataclass(frozen=True, eq=False)
class PQPFamily:
    """Unit-area emission spectra on a common loss grid, indexed by impact parameter."""

    x0_nm: np.ndarray
    e_grid: np.ndarray
    densities: np.ndarray  # (len(x0_nm), len(e_grid))

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x0_nm, dtype=float))
        g, step = check_uniform(self.e_grid)
        d = np.atleast_2d(np.asarray(self.densities, dtype=float))
        if d.shape != (x.size, g.size):
            raise GridError("densities must have shape (n_x0, n_energy)")
        if np.any(np.diff(x) <= 0):
            raise GridError("impact parameters must increase")
        total = d.sum(axis=1, keepdims=True) * step
        if np.any(~(total > 0)) or np.any(d < 0):
            raise DegenerateSpectrumError("family members need positive weight")
        object.__setattr__(self, "x0_nm", x)
        object.__setattr__(self, "e_grid", g)
        object.__setattr__(self, "densities", d / total)

    @classmethod
    def from_stack(cls, stack, kin, x0_nm=None, e_grid=None, workers=1):
        x0 = np.arange(5.0, 200.0 + 1e-9, 5.0) if x0_nm is None else np.asarray(x0_nm, float)
        grid = default_loss_grid() if e_grid is None else np.asarray(e_grid, float)
        integrals = _parallel_integrals(stack, kin, grid[None, :], x0[:, None], workers)
        return cls(x0, grid, np.maximum(integrals, 0.0))

    @classmethod
    def fixed(cls, e_grid, density, x0_nm=np.nan):
        return cls(np.array([x0_nm if np.isfinite(x0_nm) else 0.0]), e_grid, density)

    def at(self, x0: float):
        return _interp_members(self.x0_nm, self.densities, x0)

    def on_grid(self, grid) -> "_EmbeddedFamily":
        emb = np.array([embed_on_grid(self.e_grid, d, grid) for d in self.densities])
        return _EmbeddedFamily(self.x0_nm, emb)


@dataclass(frozen=True, eq=False)
class _EmbeddedFamily:
    x0_nm: np.ndarray
    members: np.ndarray

    def at(self, x0):
        return _interp_members(self.x0_nm, self.members, x0)


@dataclass(frozen=True)
class FitResult:
    lambda_hat: float
    sp_hat: float
    x0_hat: float
    residual_norm: float
    half_widths: dict
    start_index: int
    converged_starts: int
    fit_x0: bool
    null_model: bool = False
    objective: str = "least_squares"
    u_min_fit: float = FIT_U_MIN
    seeds: tuple = DEFAULT_SEEDS

    @property
    def g_qu_hat(self) -> float:
        return float(np.sqrt(self.lambda_hat))

    def to_dict(self):
        d = asdict(self)
        d["g_qu_hat"] = self.g_qu_hat
        d["seeds"] = list(self.seeds)
        return d

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)


def _unscale(theta, fit_x0, x0_fixed):
    lam = LAMBDA_BOUNDS[0] + theta[0] * (LAMBDA_BOUNDS[1] - LAMBDA_BOUNDS[0])
    sp = theta[1]
    x0 = X0_BOUNDS[0] + theta[2] * (X0_BOUNDS[1] - X0_BOUNDS[0]) if fit_x0 else x0_fixed
    return lam, sp, x0


def model_spectrum(lam, sp, f0, f_pqp, grid):
    """Model with the identifiable product ``s*p``, unit area on ``grid``.

    Lobes beyond the last channel are not recorded, so the model is
    renormalised over the same window as the measurement.
    """
    sim = forward_eels(EELSModelParams(lam, s=1.0, p=sp), f0, f_pqp, grid)
    return sim.density / sim.area()


def fit_quantum_coupling(
    meas: MeasuredSpectrum,
    family: PQPFamily,
    zlp=ZLPModel(),
    *,
    fit_x0: bool = True,
    x0_fixed: float | None = None,
    seeds=DEFAULT_SEEDS,
    workers: int = 1,
    xatol: float = 1e-4,
) -> FitResult:
    """Least-squares fit of ``(lambda, s*p, x0)`` with a fixed multi-start list.

    The objective is the plain sum of squared differences between unit-area
    spectra over channels ``u >= -1 eV``. Each seed draws one start in the
    scaled box; every start is refined by bounded Nelder-Mead and the best
    result, ranked by (objective, start index), is returned.
    """
    u = meas.channels
    data = meas.density
    f0 = make_zlp(u, zlp) if isinstance(zlp, ZLPModel) else np.asarray(zlp, dtype=float)
    fam = family.on_grid(u)
    if not fit_x0:
        if x0_fixed is None:
            if fam.x0_nm.size != 1:
                raise ValueError("x0_fixed is required when x0 is not fitted")
            x0_fixed = float(fam.x0_nm[0])
    mask = u >= FIT_U_MIN
    ndim = 3 if fit_x0 else 2

    def objective(theta):
        lam, sp, x0 = _unscale(np.clip(theta, 0.0, 1.0), fit_x0, x0_fixed)
        model = model_spectrum(lam, sp, f0, fam.at(x0), u)
        r = model[mask] - data[mask]
        return float(np.dot(r, r))

    starts = [np.random.default_rng(int(s)).uniform(0.05, 0.95, 3)[:ndim] for s in seeds]

    def run(theta0):
        return minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            bounds=[(0.0, 1.0)] * ndim,
            options={"xatol": xatol, "fatol": 1e-14, "maxiter": 4000, "maxfev": 8000},
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            results = list(pool.map(run, starts))
    else:
        results = [run(t) for t in starts]

    ok = [i for i, r in enumerate(results) if r.success and np.isfinite(r.fun)]
    if not ok:
        diag = {"messages": [r.message for r in results], "fun": [float(r.fun) for r in results]}
        raise FitFailure("no start converged", diag)
    best = min(ok, key=lambda i: (results[i].fun, i))
    theta = np.clip(results[best].x, 0.0, 1.0)
    lam, sp, x0 = _unscale(theta, fit_x0, x0_fixed)
    fmin = float(results[best].fun)
    half = _half_widths(objective, theta, fmin, int(mask.sum()), ndim)
    scale = [LAMBDA_BOUNDS[1] - LAMBDA_BOUNDS[0], 1.0, X0_BOUNDS[1] - X0_BOUNDS[0]]
    names = ["lambda", "sp", "x0_nm"]
    widths = {names[k]: float(half[k] * scale[k]) for k in range(ndim)}

    # With no emission the spectrum is the bare ZLP and lambda, s*p, x0 are
    # not separately identifiable (s*p = 0 makes lambda arbitrary). Report
    # the null model when it fits within one unit of the noise variance.
    r0 = f0[mask] / (f0.sum() * meas.step) - data[mask]
    f_null = float(np.dot(r0, r0))
    sigma2 = fmin / max(int(mask.sum()) - ndim, 1)
    null = f_null - fmin <= sigma2
    if null:
        lam, sp, fmin = 0.0, 0.0, min(f_null, fmin)
        widths = {k: float("inf") if k != "lambda" else v for k, v in widths.items()}
    return FitResult(
        lambda_hat=float(lam),
        sp_hat=float(sp),
        x0_hat=float(x0),
        residual_norm=float(np.sqrt(fmin)),
        half_widths=widths,
        start_index=int(best),
        converged_starts=len(ok),
        fit_x0=bool(fit_x0),
        null_model=bool(null),
        seeds=tuple(int(s) for s in seeds),
    )


def _half_widths(objective, theta, fmin, n_points, ndim, h=2e-3):
    """One-sigma widths from a parabola through the objective along each axis."""
    dof = max(n_points - ndim, 1)
    sigma2 = fmin / dof
    out = np.full(ndim, np.inf)
    for k in range(ndim):
        lo = min(max(theta[k] - h, 0.0), 1.0 - 2 * h)
        ts = lo + h * np.arange(3)
        fs = []
        for t in ts:
            th = theta.copy()
            th[k] = t
            fs.append(objective(th))
        curv = 2.0 * np.polyfit(ts, fs, 2)[0]
        if curv > 0:
            out[k] = np.sqrt(2.0 * sigma2 / curv)
    return out


@dataclass(frozen=True, eq=False)
class ImpactParameterFit:
    x0_nm: float
    distances: np.ndarray  # squared L2 distance to each family member
    best_index: int


def fit_impact_parameter(energy, shape, family: PQPFamily) -> ImpactParameterFit:
    """Match a first-peak shape against the family; parabolic refinement in x0."""
    x = family.x0_nm
    if x.size < 3 or np.max(np.diff(x)) > MAX_FAMILY_SPACING + 1e-9:
        raise GridError(f"family spacing must be <= {MAX_FAMILY_SPACING} nm with >= 3 members")
    g = family.e_grid
    step = g[1] - g[0]
    y = np.interp(g, np.asarray(energy, float), np.asarray(shape, float), left=0.0, right=0.0)
    total = y.sum() * step
    if not total > 0:
        raise DegenerateSpectrumError("shape has no weight on the family grid")
    y = y / total
    dist = np.sum((family.densities - y[None, :]) ** 2, axis=1) * step
    i = int(np.argmin(dist))
    x0 = float(x[i])
    exact = dist[i] <= 1e-12 * dist.max()
    if 0 < i < x.size - 1 and not exact:
        a, b, _ = np.polyfit(x[i - 1: i + 2], dist[i - 1: i + 2], 2)
        if a > 0:
            x0 = float(np.clip(-b / (2 * a), x[i - 1], x[i + 1]))
    return ImpactParameterFit(x0, dist, i)


def simulate_measurement(
    lam,
    sp,
    x0,
    family: PQPFamily,
    zlp=ZLPModel(),
    grid=None,
    *,
    noise: float = 0.0,
    seed: int = 0,
    metadata=None,
) -> MeasuredSpectrum:
    """Forward model with optional multiplicative Gaussian noise."""
    u = default_eels_grid() if grid is None else np.asarray(grid, float)
    f0 = make_zlp(u, zlp) if isinstance(zlp, ZLPModel) else np.asarray(zlp, dtype=float)
    dens = model_spectrum(lam, sp, f0, family.on_grid(u).at(x0), u)
    if noise > 0:
        rng = np.random.default_rng(seed)
        dens = np.maximum(dens * (1.0 + noise * rng.standard_normal(dens.shape)), 0.0)
    return MeasuredSpectrum(u, dens, dict(metadata or {}))
