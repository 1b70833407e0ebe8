"""
Disorder-averaged decay curves.

Every realization draws fresh spin positions and on-site fields from a seed
derived from ``(master_seed, realization_index, attempt)``, runs the bright and
dark versions of every sweep point, and records the differential contrast of
the central spin.  Realizations are distributed over a joblib worker pool and
aggregated in realization order, so the result does not depend on the number
of workers.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed
from threadpoolctl import threadpool_limits

from .evolution import ConvergenceError, PropagatorConfig, SequenceRunner
from .pulse_engine import (
    BRIGHT_PHASE,
    DARK_PHASE,
    INTERVAL_NS,
    RABI_MHZ,
    SweepPlan,
    droid_block,
    expand_sweep,
    pi_duration_ns,
)
from .system_builder import (
    DISORDER_STD_MHZ,
    HBN_ATOMIC_DENSITY,
    J0_MHZ_NM3,
    MIN_SEPARATION_NM,
    DensitySpec,
    InfeasibleGeometryError,
    SpinSystem,
    random_system,
    sample_disorder,
)

log = logging.getLogger(__name__)

MAX_RESAMPLE_FRACTION = 0.01
MAX_ATTEMPTS_PER_REALIZATION = 20

# Desk scale keeps the acceptance suite in minutes; paper scale matches the
# published simulation size.
PROFILES = {
    "desk": {"n_spins": 8, "n_realizations": 200},
    "paper": {"n_spins": 12, "n_realizations": 1000},
}


class EnsembleError(RuntimeError):
    """Too many realizations failed, or the curve cannot be normalized."""


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines a disorder-averaged curve.

    ``freeze_positions`` keeps one geometry (drawn from ``master_seed``) for all
    realizations and only redraws the on-site fields.
    """

    density_ppm: float
    sweep: SweepPlan
    n_spins: int = 12
    n_realizations: int = 1000
    disorder_std_mhz: float = DISORDER_STD_MHZ
    rabi_mhz: float = RABI_MHZ
    master_seed: int = 0
    workers: int = 1
    propagator: PropagatorConfig = field(default_factory=lambda: PropagatorConfig(method="dense"))
    j0: float = J0_MHZ_NM3
    atomic_density: float = HBN_ATOMIC_DENSITY
    min_separation_nm: float = MIN_SEPARATION_NM
    freeze_positions: bool = False

    def __post_init__(self):
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.n_spins < 1 or self.workers < 1:
            raise ValueError("n_spins and workers must be >= 1")
        for name in ("density_ppm", "disorder_std_mhz", "rabi_mhz", "j0", "atomic_density"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")

    @classmethod
    def from_profile(cls, profile: str, **kwargs) -> "EnsembleConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; expected one of {sorted(PROFILES)}")
        return cls(**{**PROFILES[profile], **kwargs})

    @property
    def density_spec(self) -> DensitySpec:
        return DensitySpec(self.density_ppm, self.atomic_density, self.n_spins)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class DecayCurve:
    """Averaged differential contrast, normalized to 1 at the first sweep point."""

    times_ns: np.ndarray
    contrast: np.ndarray
    stderr: np.ndarray
    n_realizations: int
    label: str = ""
    raw_first: float = 1.0
    n_resampled: int = 0

    def __post_init__(self):
        self.times_ns = np.asarray(self.times_ns, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if not (len(self.times_ns) == len(self.contrast) == len(self.stderr)):
            raise ValueError("times, contrast and stderr must have equal length")
        if np.any(self.stderr < 0):
            raise ValueError("stderr must be non-negative")


def realization_seed(master_seed: int, index: int, attempt: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence([master_seed, index, attempt])


def _build_system(config: EnsembleConfig, index: int, attempt: int) -> SpinSystem:
    seed = realization_seed(config.master_seed, index, attempt)
    spec = config.density_spec
    if not config.freeze_positions:
        return random_system(spec, seed, config.disorder_std_mhz, config.min_separation_nm, config.j0)
    base = random_system(spec, np.random.SeedSequence([config.master_seed]), config.disorder_std_mhz,
                         config.min_separation_nm, config.j0)
    return base.with_disorder(sample_disorder(config.n_spins, config.disorder_std_mhz, seed))


def _one_realization(config: EnsembleConfig, seq_lists, index: int) -> tuple[list[np.ndarray], int]:
    """Contrast traces of one realization (one per sweep) and the number of failed attempts."""
    for attempt in range(MAX_ATTEMPTS_PER_REALIZATION):
        try:
            system = _build_system(config, index, attempt)
            runner = SequenceRunner(system, config.propagator)
            traces = []
            for seqs in seq_lists:
                out = runner.run_readouts(seqs, [BRIGHT_PHASE, DARK_PHASE])
                traces.append(out[:, 0] - out[:, 1])
            return traces, attempt
        except (InfeasibleGeometryError, ConvergenceError) as exc:
            log.warning("realization %d attempt %d failed: %s", index, attempt, exc)
    raise EnsembleError(f"realization {index} failed {MAX_ATTEMPTS_PER_REALIZATION} times")


def _run_chunk(config: EnsembleConfig, plans, indices) -> list:
    seq_lists = [expand_sweep(p) for p in plans]
    with threadpool_limits(limits=1):
        return [_one_realization(config, seq_lists, r) for r in indices]


def _chunks(n: int, n_chunks: int) -> list[range]:
    bounds = np.linspace(0, n, n_chunks + 1).round().astype(int)
    return [range(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def simulate_traces(config: EnsembleConfig, plans=None) -> tuple[list[np.ndarray], int]:
    """Raw per-realization contrast for each sweep plan, plus the resample count.

    ``plans`` defaults to ``[config.sweep]``.  Each returned array has shape
    ``(n_realizations, n_points)``.  All plans share one spin system and one
    set of cached propagators per realization.
    """
    plans = [config.sweep] if plans is None else list(plans)
    plans = [replace(p, rabi_mhz=config.rabi_mhz) for p in plans]
    n = config.n_realizations
    if config.workers == 1:
        results = _run_chunk(config, plans, range(n))
    else:
        chunks = _chunks(n, 4 * config.workers)
        parts = Parallel(n_jobs=config.workers)(delayed(_run_chunk)(config, plans, c) for c in chunks)
        results = [item for part in parts for item in part]
    resampled = sum(r[1] for r in results)
    if resampled > MAX_RESAMPLE_FRACTION * n:
        raise EnsembleError(f"{resampled} of {n} realizations needed resampling")
    traces = [np.array([r[0][k] for r in results]) for k in range(len(plans))]
    return traces, resampled


def aggregate(traces: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Compensated mean and standard error over axis 0."""
    n = traces.shape[0]
    mean = np.array([math.fsum(col) / n for col in traces.T])
    if n == 1:
        return mean, np.zeros_like(mean)
    var = np.array([math.fsum((col - m) ** 2) / (n - 1) for col, m in zip(traces.T, mean)])
    return mean, np.sqrt(var / n)


def _curve(plan: SweepPlan, traces: np.ndarray, n: int, label: str, resampled: int) -> DecayCurve:
    mean, err = aggregate(traces)
    first = mean[0]
    if abs(first) < 1e-12:
        raise EnsembleError("contrast at the first sweep point is zero; cannot normalize")
    times = np.array([s.sweep_time_ns for s in expand_sweep(plan)])
    return DecayCurve(times, mean / first, err / abs(first), n, label, float(first), resampled)


def run_ensembles(config: EnsembleConfig, plans: dict) -> dict:
    """Curves for several sweeps (``label -> SweepPlan``) over the same realizations."""
    if not plans or any(not p.points for p in plans.values()):
        raise ValueError("every sweep needs at least one point")
    plans = {k: replace(p, rabi_mhz=config.rabi_mhz) for k, p in plans.items()}
    traces, resampled = simulate_traces(config, plans.values())
    return {label: _curve(plan, tr, config.n_realizations, label, resampled)
            for (label, plan), tr in zip(plans.items(), traces)}


def run_ensemble(config: EnsembleConfig, label: str | None = None) -> DecayCurve:
    """Disorder-averaged differential contrast over ``config.sweep``."""
    label = label or config.sweep.family
    return run_ensembles(config, {label: config.sweep})[label]


# --------------------------------------------------------------------------
# Density sweeps


def interaction_time_ns(density_ppm: float, j0: float = J0_MHZ_NM3, atomic_density: float = HBN_ATOMIC_DENSITY) -> float:
    """``1/<J>`` in ns, with ``<J> = j0 * n`` the mean coupling at number density ``n``."""
    return 1e3 / (j0 * density_ppm * 1e-6 * atomic_density)


def default_sweep(family: str, density_ppm: float, window: float = 2.0, interval_ns: float = INTERVAL_NS,
                  rabi_mhz: float = RABI_MHZ, min_points: int = 4) -> SweepPlan:
    """Every XY-8 cycle or DROID block up to ``window`` interaction times.

    Scaling the window with ``1/density`` samples each curve over the same
    number of interaction times, so the fitted decay constants of different
    densities are comparable.
    """
    t_max = window * interaction_time_ns(density_ppm)
    if family == "xy8":
        cycle = 8 * (interval_ns + pi_duration_ns(rabi_mhz))
        n = max(min_points, int(t_max // cycle))
        pts = 8 * np.arange(1, n + 1)
    elif family == "droid":
        block = sum(s.duration_ns for s in droid_block(interval_ns, rabi_mhz))
        n = max(min_points, int(t_max // block))
        pts = np.arange(1, n + 1)
    else:
        raise ValueError(f"no default density sweep for family {family!r}")
    return SweepPlan(family, tuple(int(p) for p in pts), interval_ns=interval_ns, rabi_mhz=rabi_mhz)


@dataclass
class DensityRow:
    density_ppm: float
    curves: dict
    fits: dict
    errors: dict

    def t2(self, family: str) -> float:
        fit = self.fits.get(family)
        return fit.t2_ns if fit is not None else float("nan")


def run_density_sweep(densities, template: EnsembleConfig, families=("xy8", "droid"), sweeps=None,
                      window: float = 2.0) -> list[DensityRow]:
    """Ensemble plus exponential fit for every density and sequence family.

    ``sweeps`` optionally maps ``(family, density)`` or ``family`` to a
    :class:`SweepPlan`; otherwise :func:`default_sweep` is used.  Fit failures
    are recorded in ``DensityRow.errors`` and do not stop the sweep.
    """
    from .analysis import FitError, fit_exponential

    densities = [float(d) for d in densities]
    if not densities:
        raise ValueError("densities must be non-empty")
    if any(b <= a for a, b in zip(densities, densities[1:])):
        raise ValueError("densities must be strictly increasing")
    sweeps = sweeps or {}
    rows = []
    for rho in densities:
        plans = {}
        for fam in families:
            plans[fam] = (sweeps.get((fam, rho)) or sweeps.get(fam)
                          or default_sweep(fam, rho, window, template.sweep.interval_ns, template.rabi_mhz))
        curves = run_ensembles(replace(template, density_ppm=rho), plans)
        fits, errors = {}, {}
        for fam, curve in curves.items():
            try:
                fits[fam] = fit_exponential(curve)
            except FitError as exc:
                errors[fam] = str(exc)
                log.warning("fit failed at %s ppm for %s: %s", rho, fam, exc)
        rows.append(DensityRow(rho, curves, fits, errors))
    return rows
