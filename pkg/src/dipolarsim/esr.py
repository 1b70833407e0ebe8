"""
Zero-field ESR of a spin-1 defect in a random electric-field environment.

Charged defects are scattered around the probed spin; the in-plane field of
the closest ones mixes ``|+1>`` and ``|-1>`` and splits the zero-field line.
The three nearest nitrogen nuclei act as a classical longitudinal field.
Every charge configuration contributes two lines for each of the 27 nuclear
configurations, each broadened by a Gaussian.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from scipy import constants

from .analysis import FitError, fit_two_lorentzians
from .spin_algebra import spin_one_ops
from .system_builder import HBN_ATOMIC_DENSITY

D_GS_MHZ = 3480.0
A_ZZ_MHZ = 47.0
D_PERP_HZ_PER_V_CM = 40.0
BROADENING_STD_MHZ = 25.0
EXCLUSION_RADIUS_NM = 1.0
DIP_CONTRAST = 0.1

# e / (4 pi eps0) is 1.44 V nm; field at 1 nm in V/cm is 1.44e7
_COULOMB_V_CM_NM2 = constants.e / (4 * np.pi * constants.epsilon_0) * 1e9 * 1e7

NUCLEAR_CONFIGS = np.array(list(itertools.product((-1, 0, 1), repeat=3)))


@dataclass(frozen=True)
class ChargeModel:
    """Random charge environment around one defect.

    ``n_sampled`` charges (half donors, half acceptors) are drawn in a cube
    centred on the defect at number density ``charge_density_factor * rho``;
    only the ``n_nearest`` enter the field.  ``pairing_distance_nm`` places
    each donor at that distance from an acceptor instead of independently.
    """

    rho_vbm_ppm: float
    charge_density_factor: float = 2.0
    d_perp_hz_per_v_cm: float = D_PERP_HZ_PER_V_CM
    n_nearest: int = 10
    relative_permittivity: float = 1.0
    broadening_std_mhz: float = BROADENING_STD_MHZ
    n_charge_configs: int = 1000
    exclusion_radius_nm: float = EXCLUSION_RADIUS_NM
    n_sampled: int = 200
    pairing_distance_nm: float | None = None
    atomic_density: float = HBN_ATOMIC_DENSITY

    def __post_init__(self):
        for name in ("rho_vbm_ppm", "charge_density_factor", "relative_permittivity", "broadening_std_mhz",
                     "exclusion_radius_nm", "atomic_density"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.d_perp_hz_per_v_cm < 0:
            raise ValueError("d_perp_hz_per_v_cm must be non-negative")
        if self.n_nearest < 1 or self.n_charge_configs < 1:
            raise ValueError("n_nearest and n_charge_configs must be >= 1")
        if self.n_sampled < self.n_nearest:
            raise ValueError("n_sampled must be at least n_nearest")
        if self.pairing_distance_nm is not None and self.pairing_distance_nm <= 0:
            raise ValueError("pairing_distance_nm must be positive")

    @property
    def charge_density_nm3(self) -> float:
        return self.charge_density_factor * self.rho_vbm_ppm * 1e-6 * self.atomic_density

    @property
    def box_side_nm(self) -> float:
        return (self.n_sampled / self.charge_density_nm3) ** (1 / 3)


@dataclass(frozen=True)
class GroundStateParams:
    d_gs_mhz: float = D_GS_MHZ
    a_zz_mhz: float = A_ZZ_MHZ

    def __post_init__(self):
        if not self.d_gs_mhz > 10 * abs(self.a_zz_mhz):
            raise ValueError("zero-field splitting must dominate the hyperfine coupling")


@dataclass
class Charges:
    positions: np.ndarray
    signs: np.ndarray


@dataclass
class EsrSpectrum:
    """``intensity = 1 - DIP_CONTRAST * profile / max(profile)``; ``profile`` is the raw line density."""

    freqs_mhz: np.ndarray
    intensity: np.ndarray
    profile: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (len(self.freqs_mhz) == len(self.intensity) == len(self.profile)):
            raise ValueError("frequency and intensity arrays must match")


def sample_charges(model: ChargeModel, seed) -> Charges:
    """Uniform charges in a cube centred on the defect, outside the exclusion sphere."""
    rng = np.random.default_rng(seed)
    n = model.n_sampled
    half = model.box_side_nm / 2
    n_acc = n // 2
    n_don = n - n_acc
    signs = np.concatenate([-np.ones(n_acc), np.ones(n_don)])

    def draw(k):
        pts = rng.uniform(-half, half, size=(k, 3))
        bad = np.linalg.norm(pts, axis=1) < model.exclusion_radius_nm
        while bad.any():
            pts[bad] = rng.uniform(-half, half, size=(int(bad.sum()), 3))
            bad = np.linalg.norm(pts, axis=1) < model.exclusion_radius_nm
        return pts

    if model.pairing_distance_nm is None:
        return Charges(draw(n), signs)
    acc = draw(n_acc)
    don = np.empty((n_don, 3))
    for k in range(n_don):
        while True:
            v = rng.normal(size=3)
            p = acc[k % n_acc] + model.pairing_distance_nm * v / np.linalg.norm(v)
            if np.linalg.norm(p) >= model.exclusion_radius_nm:
                don[k] = p
                break
    return Charges(np.vstack([acc, don]), signs)


def electric_field(charges: Charges, model: ChargeModel) -> np.ndarray:
    """Field (V/cm) at the origin from the ``n_nearest`` charges, all three components."""
    pos = np.asarray(charges.positions, dtype=float)
    if len(pos) < model.n_nearest:
        raise ValueError(f"need at least {model.n_nearest} charges, got {len(pos)}")
    r = np.linalg.norm(pos, axis=1)
    if np.any(r < model.exclusion_radius_nm):
        raise ValueError("a charge lies inside the exclusion radius")
    idx = np.argsort(r, kind="stable")[: model.n_nearest]
    q = np.asarray(charges.signs, dtype=float)[idx]
    # field of a charge at p evaluated at the origin points along -p
    vec = -pos[idx] / r[idx, None] ** 3
    return _COULOMB_V_CM_NM2 / model.relative_permittivity * (q[:, None] * vec).sum(axis=0)


def transverse_field(charges: Charges, model: ChargeModel) -> tuple[float, float]:
    """In-plane field components ``(Ex, Ey)`` in V/cm; the z component is dropped."""
    e = electric_field(charges, model)
    return float(e[0]), float(e[1])


def ground_state_hamiltonian(params: GroundStateParams, pi_x_mhz: float, pi_y_mhz: float, nuclear_m) -> np.ndarray:
    """``D Sz^2 + Px (Sy^2 - Sx^2) + Py (Sx Sy + Sy Sx) + A (sum m) Sz`` in MHz."""
    ops = spin_one_ops()
    sx, sy, sz = ops["Sx"], ops["Sy"], ops["Sz"]
    return (params.d_gs_mhz * sz @ sz
            + pi_x_mhz * (sy @ sy - sx @ sx)
            + pi_y_mhz * (sx @ sy + sy @ sx)
            + params.a_zz_mhz * float(np.sum(nuclear_m)) * sz)


def transition_lines(params: GroundStateParams, pi_x_mhz: float, pi_y_mhz: float, nuclear_m) -> np.ndarray:
    """The two ``|0> -> |+/->`` transition frequencies (MHz), ascending."""
    return _lines_batch(params, np.array([pi_x_mhz]), np.array([pi_y_mhz]), np.array([np.sum(nuclear_m)]))[0]


def _lines_batch(params, pi_x, pi_y, msum) -> np.ndarray:
    ops = spin_one_ops()
    sx, sy, sz = ops["Sx"], ops["Sy"], ops["Sz"]
    H = (params.d_gs_mhz * (sz @ sz)[None]
         + pi_x[:, None, None] * (sy @ sy - sx @ sx)[None]
         + pi_y[:, None, None] * (sx @ sy + sy @ sx)[None]
         + (params.a_zz_mhz * msum)[:, None, None] * sz[None])
    w, V = np.linalg.eigh(H)
    # |0> is the eigenvector with the largest weight on the middle basis state
    k0 = np.argmax(np.abs(V[:, 1, :]) ** 2, axis=1)
    e0 = w[np.arange(len(w)), k0]
    others = np.sort(np.where(np.arange(3)[None, :] == k0[:, None], np.inf, w), axis=1)[:, :2]
    return others - e0[:, None]


def _config_profile(model: ChargeModel, params: GroundStateParams, freqs: np.ndarray, seed, index: int) -> np.ndarray:
    charges = sample_charges(model, np.random.SeedSequence([seed, index]))
    ex, ey = transverse_field(charges, model)
    scale = model.d_perp_hz_per_v_cm * 1e-6
    n_nuc = len(NUCLEAR_CONFIGS)
    lines = _lines_batch(params, np.full(n_nuc, ex * scale), np.full(n_nuc, ey * scale),
                         NUCLEAR_CONFIGS.sum(axis=1).astype(float)).ravel()
    s = model.broadening_std_mhz
    g = np.exp(-0.5 * ((freqs[:, None] - lines[None, :]) / s) ** 2) / (s * math.sqrt(2 * math.pi))
    return g.mean(axis=1)


def _profile_chunk(model, params, freqs, seed, indices) -> np.ndarray:
    return np.array([_config_profile(model, params, freqs, seed, i) for i in indices])


def config_profiles(model: ChargeModel, params: GroundStateParams, freq_grid_mhz, seed: int,
                    workers: int = 1, indices=None) -> np.ndarray:
    """Per-configuration line densities, shape ``(n_configs, n_freqs)``."""
    freqs = np.asarray(freq_grid_mhz, dtype=float)
    idx = list(range(model.n_charge_configs)) if indices is None else list(indices)
    if workers == 1:
        return _profile_chunk(model, params, freqs, seed, idx)
    bounds = np.linspace(0, len(idx), 4 * workers + 1).round().astype(int)
    parts = Parallel(n_jobs=workers)(
        delayed(_profile_chunk)(model, params, freqs, seed, idx[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a
    )
    return np.vstack(parts)


def default_grid(params: GroundStateParams = GroundStateParams(), half_span_mhz: float = 700.0,
                 step_mhz: float = 1.0) -> np.ndarray:
    n = int(round(2 * half_span_mhz / step_mhz)) + 1
    return np.linspace(params.d_gs_mhz - half_span_mhz, params.d_gs_mhz + half_span_mhz, n)


def simulate_spectrum(model: ChargeModel, params: GroundStateParams = GroundStateParams(), freq_grid_mhz=None,
                      seed: int = 0, workers: int = 1) -> EsrSpectrum:
    """Configuration-averaged, Gaussian-broadened ESR spectrum."""
    freqs = default_grid(params) if freq_grid_mhz is None else np.asarray(freq_grid_mhz, dtype=float)
    if freqs.size < 2 or np.any(np.diff(freqs) <= 0):
        raise ValueError("frequency grid must be strictly increasing")
    profile = config_profiles(model, params, freqs, seed, workers).mean(axis=0)
    peak = profile.max()
    intensity = 1.0 - DIP_CONTRAST * profile / peak if peak > 0 else np.ones_like(profile)
    meta = {"model": asdict(model), "params": asdict(params), "seed": seed}
    return EsrSpectrum(freqs, intensity, profile, meta)


@dataclass
class SplittingTable:
    densities_ppm: np.ndarray
    d_perp_hz_per_v_cm: np.ndarray
    delta_mhz: np.ndarray
    single_peak: np.ndarray
    errors: dict

    def is_monotone(self) -> tuple[bool, bool]:
        """Non-decreasing along density (rows) and along d_perp (columns)."""
        d = self.delta_mhz
        return bool(np.all(np.diff(d, axis=0) >= 0)), bool(np.all(np.diff(d, axis=1) >= 0))


def splitting_vs_density(densities, d_perp_list, template: ChargeModel, params: GroundStateParams = GroundStateParams(),
                         freq_grid_mhz=None, seed: int = 0, workers: int = 1) -> SplittingTable:
    """Fitted splitting for every ``(density, d_perp)`` pair.

    All cells use the same charge seeds, so the configurations differ only by
    the density scaling of the box and the value of ``d_perp``.
    """
    densities = np.asarray(list(densities), dtype=float)
    dps = np.asarray(list(d_perp_list), dtype=float)
    if densities.size == 0 or dps.size == 0:
        raise ValueError("density and d_perp lists must be non-empty")
    delta = np.full((densities.size, dps.size), np.nan)
    single = np.zeros_like(delta, dtype=bool)
    errors = {}
    for i, rho in enumerate(densities):
        for j, dp in enumerate(dps):
            model = replace(template, rho_vbm_ppm=float(rho), d_perp_hz_per_v_cm=float(dp))
            spec = simulate_spectrum(model, params, freq_grid_mhz, seed, workers)
            try:
                fit = fit_two_lorentzians(spec)
            except FitError as exc:
                errors[(float(rho), float(dp))] = str(exc)
                continue
            delta[i, j] = fit.splitting_mhz
            single[i, j] = fit.single_peak
    return SplittingTable(densities, dps, delta, single, errors)
