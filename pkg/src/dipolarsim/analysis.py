"""
Fitting and inference: exponential decays, power laws in density, density
extraction from a pair of coherence times, double-Lorentzian splittings and
implantation-dose arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, signal, stats

from .system_builder import HBN_ATOMIC_DENSITY


class FitError(RuntimeError):
    """A fit did not converge or produced unphysical parameters."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _curve_arrays(curve, contrast=None, sigma=None):
    if contrast is None:
        t, y = curve.times_ns, curve.contrast
        sigma = curve.stderr if sigma is None else sigma
    else:
        t, y = curve, contrast
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if sigma is not None:
        sigma = np.asarray(sigma, dtype=float)
        if sigma.shape != y.shape or np.any(sigma <= 0):
            sigma = None
    return t, y, sigma


# --------------------------------------------------------------------------
# Exponential decay


@dataclass
class DecayFit:
    """``amplitude * exp(-t / t2_ns) + offset``; ``offset`` is 0 unless fitted."""

    t2_ns: float
    amplitude: float
    residual_rms: float
    covariance: np.ndarray
    offset: float = 0.0

    @property
    def t2_stderr_ns(self) -> float:
        return float(np.sqrt(self.covariance[1, 1]))

    def __call__(self, t):
        return self.amplitude * np.exp(-np.asarray(t, dtype=float) / self.t2_ns) + self.offset


def fit_exponential(curve, contrast=None, sigma=None, floor: bool = False, weighted: bool = False,
                    max_t2_span: float = 1e3) -> DecayFit:
    """Least-squares fit of ``A exp(-t/T2)``, optionally plus a constant floor.

    Parameters
    ----------
    curve : DecayCurve or array_like
        A :class:`~dipolarsim.ensemble.DecayCurve`, or the time axis (ns) when
        ``contrast`` is given.
    contrast, sigma : array_like, optional
        Data and per-point standard errors when ``curve`` is a time axis.
    floor : bool
        Fit ``A exp(-t/T2) + c`` instead of the pure exponential.
    weighted : bool
        Weight residuals by ``1/sigma`` when standard errors are available.
    max_t2_span : float
        Reject fits whose ``T2`` exceeds this multiple of the largest sampled
        time; such a decay is not resolved by the data.

    Raises
    ------
    FitError
        Fewer than 4 (5 with ``floor``) points, constant data, non-convergence,
        a non-positive amplitude, or an unresolved ``T2``.
    """
    t, y, sigma = _curve_arrays(curve, contrast, sigma)
    n_par = 3 if floor else 2
    if t.size < n_par + 2:
        raise FitError(f"need at least {n_par + 2} points, got {t.size}")
    if np.ptp(y) == 0:
        raise FitError("contrast is constant", contrast=float(y[0]))
    w = 1.0 / sigma if (weighted and sigma is not None) else np.ones_like(y)
    tscale = float(np.max(np.abs(t))) or 1.0
    u = t / tscale

    # log-linear start on the positive part of the data
    pos = y - (np.min(y) - 0.05 * np.ptp(y) if floor else 0.0)
    ok = pos > 0
    if ok.sum() >= 2 and np.ptp(u[ok]) > 0:
        slope, icpt = np.polyfit(u[ok], np.log(pos[ok]), 1)
        k0 = max(-slope, 1e-3)
        a0 = np.exp(icpt)
    else:
        k0, a0 = 1.0, float(y[0])
    p0 = [a0, np.log(k0)] + ([float(np.min(y))] if floor else [])

    # rate parametrized as exp(q) keeps T2 positive during the search
    def resid(p):
        m = p[0] * np.exp(-np.exp(p[1]) * u) + (p[2] if floor else 0.0)
        return (m - y) * w

    def jac(p):
        e = np.exp(-np.exp(p[1]) * u)
        cols = [e, -p[0] * e * u * np.exp(p[1])]
        if floor:
            cols.append(np.ones_like(u))
        return np.column_stack(cols) * w[:, None]

    res = optimize.least_squares(resid, p0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                                 max_nfev=20000)
    if not res.success:
        raise FitError(f"fit did not converge: {res.message}", nfev=res.nfev)
    amp, q = res.x[0], res.x[1]
    if not np.isfinite(q) or q < -np.log(max_t2_span):
        raise FitError(f"decay not resolved: T2 exceeds {max_t2_span:g} x the sampled span", params=res.x.tolist())
    if not amp > 0:
        raise FitError(f"non-positive amplitude {amp}", params=res.x.tolist())
    t2 = tscale / np.exp(q)
    r = (resid(res.x) / w)
    rms = float(np.sqrt(np.mean(r**2)))

    # covariance of (A, T2[, c]) from the Jacobian in natural parameters
    e = np.exp(-t / t2)
    cols = [e, amp * t / t2**2 * e] + ([np.ones_like(t)] if floor else [])
    Jn = np.column_stack(cols) * w[:, None]
    dof = max(t.size - n_par, 1)
    s2 = float(np.sum((r * w) ** 2) / dof)
    try:
        cov = np.linalg.pinv(Jn.T @ Jn) * s2
    except np.linalg.LinAlgError:
        cov = np.full((n_par, n_par), np.nan)
    return DecayFit(float(t2), float(amp), rms, cov, float(res.x[2]) if floor else 0.0)


# --------------------------------------------------------------------------
# Power law in density


@dataclass
class PowerLawFit:
    """``ln T = prefactor_log - alpha * ln rho`` (natural logs, ns and ppm)."""

    prefactor_log: float
    alpha: float
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def predict(self, rho_ppm):
        return np.exp(self.prefactor_log - self.alpha * np.log(np.asarray(rho_ppm, dtype=float)))


def fit_power_law(densities, t2s) -> PowerLawFit:
    """Ordinary least squares of ``ln T2`` on ``ln rho``; the slope is ``-alpha``."""
    rho = np.asarray(densities, dtype=float)
    t2 = np.asarray(t2s, dtype=float)
    if rho.shape != t2.shape or rho.size < 2:
        raise ValueError("need at least two (density, T2) pairs of equal length")
    if np.any(rho <= 0) or np.any(t2 <= 0) or not np.all(np.isfinite(t2)):
        raise ValueError("densities and T2 values must be positive and finite")
    x, y = np.log(rho), np.log(t2)
    if np.ptp(x) == 0:
        raise ValueError("densities must not all be equal")
    lr = stats.linregress(x, y)
    resid = y - (lr.intercept + lr.slope * x)
    return PowerLawFit(float(lr.intercept), float(-lr.slope), resid)


# --------------------------------------------------------------------------
# Density extraction


@dataclass
class DensityEstimate:
    rho_ppm: float
    band_low_ppm: float
    band_high_ppm: float
    residual_curve: np.ndarray
    min_residual: float = 0.0
    boundary: bool = False


def density_residual(rho_ppm, fits: dict, measured: dict):
    """Sum over families of ``((ln T_fit(rho) - ln T_meas) / ln T_meas)**2`` with T in ns."""
    rho = np.asarray(rho_ppm, dtype=float)
    total = np.zeros_like(rho)
    for key, meas in measured.items():
        lm = np.log(meas)
        total = total + ((np.log(fits[key].predict(rho)) - lm) / lm) ** 2
    return total


def extract_density(fits: dict, measured: dict, grid=(10.0, 1e4), points_per_decade: int = 200,
                    band_factor: float = 1.05) -> DensityEstimate:
    """Density minimizing the summed relative log residual, with its tolerance band.

    ``fits`` and ``measured`` map family names (``"xy8"``, ``"droid"``) to a
    :class:`PowerLawFit` and a measured ``T2`` in ns.  The residual is scanned
    on a log-spaced grid, the minimum refined by a parabola in ``ln rho``, and
    the band edges are the points where the residual equals
    ``band_factor * min``.  A minimum on the grid edge sets ``boundary``.
    """
    if set(fits) != set(measured):
        raise ValueError("fits and measured values must cover the same families")
    if any(not (v > 0 and np.isfinite(v)) for v in measured.values()):
        raise ValueError("measured T2 values must be positive")
    if any(np.isclose(np.log(v), 0.0) for v in measured.values()):
        raise ValueError("measured T2 of 1 ns makes the relative log residual undefined")
    lo, hi = float(grid[0]), float(grid[1])
    if not (0 < lo < hi) or np.log10(hi / lo) < 1.0 - 1e-12:
        raise ValueError("grid must be positive and cover at least one decade")
    n = int(np.ceil(points_per_decade * np.log10(hi / lo))) + 1
    rho = np.geomspace(lo, hi, n)
    res = density_residual(rho, fits, measured)
    i = int(np.argmin(res))
    boundary = i in (0, n - 1)
    f = lambda x: float(density_residual(np.exp(x), fits, measured))

    x_best = np.log(rho[i])
    if not boundary:
        xs = np.log(rho[i - 1:i + 2])
        out = optimize.minimize_scalar(f, bracket=(xs[0], xs[1], xs[2]), method="brent", tol=1e-12) \
            if res[i - 1] > res[i] < res[i + 1] else None
        if out is not None and xs[0] <= out.x <= xs[2] and out.fun <= res[i]:
            x_best = float(out.x)
    r_min = f(x_best)
    target = band_factor * r_min

    def edge(direction):
        g = lambda x: f(x) - target
        j = i
        while 0 <= j + direction < n and res[j + direction] <= target:
            j += direction
        if not 0 <= j + direction < n:
            return rho[j]
        a, b = sorted((x_best if j == i else np.log(rho[j]), np.log(rho[j + direction])))
        if g(a) * g(b) > 0:
            return float(np.exp(x_best))
        return float(np.exp(optimize.brentq(g, a, b, xtol=1e-14)))

    if r_min == 0.0:
        low = high = float(np.exp(x_best))
    else:
        low, high = edge(-1), edge(+1)
    rho_hat = float(np.exp(x_best))
    curve = np.column_stack([rho, res])
    return DensityEstimate(rho_hat, min(low, rho_hat), max(high, rho_hat), curve, r_min, boundary)


# --------------------------------------------------------------------------
# ESR splitting


@dataclass
class LorentzianFit:
    centers_mhz: tuple
    widths_mhz: tuple
    depths: tuple
    baseline: float
    splitting_mhz: float
    single_peak: bool
    residual_rms: float


def _lorentz(f, c, w):
    return w**2 / ((f - c) ** 2 + w**2)


def two_lorentzian_model(f, baseline, d1, c1, w1, d2, c2, w2):
    """Constant minus two Lorentzian dips; ``w`` are half widths at half depth."""
    f = np.asarray(f, dtype=float)
    return baseline - d1 * _lorentz(f, c1, w1) - d2 * _lorentz(f, c2, w2)


def fit_two_lorentzians(spectrum, intensity=None, min_depth_ratio: float = 0.05) -> LorentzianFit:
    """Fit a constant minus two Lorentzians and return the center separation.

    Initial centers come from the two deepest dips found by peak picking; when
    only one dip is visible, starts symmetric about it at several offsets are
    tried.  The result is flagged ``single_peak`` when one component carries
    less than ``min_depth_ratio`` of the total depth or the centers are closer
    than the mean half width (the dips are not resolved).
    """
    if intensity is None:
        f, y = np.asarray(spectrum.freqs_mhz, float), np.asarray(spectrum.intensity, float)
    else:
        f, y = np.asarray(spectrum, float), np.asarray(intensity, float)
    if f.size < 20:
        raise FitError("need at least 20 spectral points")
    if np.ptp(y) == 0:
        raise FitError("flat spectrum")
    span = float(np.ptp(f))
    df = span / (f.size - 1)
    base0 = float(np.max(y))
    dip = base0 - y
    peaks, props = signal.find_peaks(dip, prominence=0.05 * np.ptp(y))
    order = np.argsort(props["prominences"])[::-1] if peaks.size else []
    starts = []
    if len(order) >= 2:
        a, b = sorted(f[peaks[order[:2]]])
        w0 = max((b - a) / 2, 2 * df)
        starts.append((a, b, w0))
    c0 = float(f[peaks[order[0]]]) if len(order) else float(f[np.argmax(dip)])
    half = dip >= 0.5 * np.max(dip)
    hw = max(0.5 * (f[half].max() - f[half].min()), 2 * df)
    for k in (0.25, 0.5, 0.75):
        starts.append((c0 - k * hw, c0 + k * hw, hw / 2))
    if len(order) == 1:
        starts.append((c0, c0 + hw, hw / 2))
        starts.append((c0 - hw, c0, hw / 2))

    def resid(p):
        return two_lorentzian_model(f, *p) - y

    def jac(p):
        b, d1, c1, w1, d2, c2, w2 = p
        cols = [np.ones_like(f)]
        for d, c, w in ((d1, c1, w1), (d2, c2, w2)):
            den = (f - c) ** 2 + w**2
            L = w**2 / den
            cols += [-L, -d * 2 * w**2 * (f - c) / den**2, -d * 2 * w * (f - c) ** 2 / den**2]
        return np.column_stack(cols)

    depth0 = float(np.max(dip))
    lb = [-np.inf, 0, f.min(), df / 4, 0, f.min(), df / 4]
    ub = [np.inf, np.inf, f.max(), span, np.inf, f.max(), span]
    best = None
    for a, b, w in starts:
        p0 = [base0, depth0 / 2, a, w, depth0 / 2, b, w]
        p0 = np.clip(p0, np.array(lb) + 1e-9, np.array(ub) - 1e-9)
        try:
            out = optimize.least_squares(resid, p0, jac=jac, bounds=(lb, ub), xtol=1e-12, ftol=1e-12,
                                         max_nfev=5000)
        except ValueError:
            continue
        if out.status > 0 and (best is None or out.cost < best.cost):
            best = out
    if best is None:
        raise FitError("two-Lorentzian fit did not converge")
    b, d1, c1, w1, d2, c2, w2 = best.x
    if c2 < c1:
        d1, c1, w1, d2, c2, w2 = d2, c2, w2, d1, c1, w1
    sep = float(c2 - c1)
    weak = min(d1, d2) < min_depth_ratio * (d1 + d2)
    single = bool(weak or sep < 0.5 * (w1 + w2) / 2)
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return LorentzianFit((float(c1), float(c2)), (float(w1), float(w2)), (float(d1), float(d2)), float(b),
                         sep, single, rms)


# --------------------------------------------------------------------------
# Implantation arithmetic


def dose_to_ppm(dose_per_nm2: float, vacancies_per_ion: float = 11.0, depth_nm: float = 60.0,
                atomic_density: float = HBN_ATOMIC_DENSITY) -> float:
    """Boron-vacancy density (ppm) created by an ion dose spread over ``depth_nm``."""
    for name, v in (("dose_per_nm2", dose_per_nm2), ("vacancies_per_ion", vacancies_per_ion),
                    ("depth_nm", depth_nm), ("atomic_density", atomic_density)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    return dose_per_nm2 * vacancies_per_ion / depth_nm / atomic_density * 1e6


def charged_ratio(rho_vbm_ppm: float, rho_vb_ppm: float) -> float:
    """Fraction of created vacancies in the negative charge state."""
    if not (rho_vbm_ppm > 0 and rho_vb_ppm > 0):
        raise ValueError("densities must be positive")
    return rho_vbm_ppm / rho_vb_ppm
