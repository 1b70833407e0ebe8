"""SVG figures for the CLI report path.  Plots are conveniences; the CSV files are the data contract."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "dipolarsim"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated runs byte-identical
_SVG_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_decay(curves, path, fits=None, title: str = "") -> Path:
    """Contrast versus total sequence time, with optional fitted exponentials."""
    fits = fits or {}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for c in curves:
        ax.errorbar(c.times_ns, c.contrast, yerr=c.stderr, fmt="o", ms=3, label=c.label)
        fit = fits.get(c.label)
        if fit is not None:
            t = np.linspace(0, c.times_ns.max(), 200)
            ax.plot(t, fit(t), "-", lw=1, label=f"{c.label}: T2 = {fit.t2_ns:.0f} ns")
    ax.set_xlabel("total time (ns)")
    ax.set_ylabel("normalized contrast")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_density_sweep(densities, t2s: dict, path, power_laws=None) -> Path:
    """Log-log coherence time versus density with optional power-law lines."""
    power_laws = power_laws or {}
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rho = np.asarray(densities, dtype=float)
    grid = np.geomspace(rho.min() / 1.5, rho.max() * 1.5, 100)
    for fam, vals in t2s.items():
        ax.loglog(rho, vals, "o", label=fam)
        pl = power_laws.get(fam)
        if pl is not None:
            ax.loglog(grid, pl.predict(grid), "-", lw=1, label=f"{fam}: alpha = {pl.alpha:.2f}")
    ax.set_xlabel("density (ppm)")
    ax.set_ylabel("T2 (ns)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_residual(estimate, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    rho, res = estimate.residual_curve[:, 0], estimate.residual_curve[:, 1]
    ax.semilogx(rho, res, "-")
    ax.axvspan(estimate.band_low_ppm, estimate.band_high_ppm, alpha=0.25)
    ax.axvline(estimate.rho_ppm, ls="--", lw=1)
    ax.set_xlabel("density (ppm)")
    ax.set_ylabel("residual")
    fig.tight_layout()
    return _save(fig, path)


def plot_spectra(spectra: dict, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, s in spectra.items():
        ax.plot(s.freqs_mhz, s.intensity, "-", label=label)
    ax.set_xlabel("frequency (MHz)")
    ax.set_ylabel("normalized intensity")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_splitting_table(table, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for j, dp in enumerate(table.d_perp_hz_per_v_cm):
        ax.plot(table.densities_ppm, table.delta_mhz[:, j], "o-", label=f"d_perp = {dp:g}")
    ax.set_xlabel("density (ppm)")
    ax.set_ylabel("splitting (MHz)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
