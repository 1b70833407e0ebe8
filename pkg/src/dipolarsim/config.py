"""
Run configuration: one YAML document with a section per module.

Every section and key is optional; omitted values take the defaults below.
Unknown sections or keys raise :class:`ConfigError`.

.. code-block:: yaml

    ensemble:
      profile: desk          # desk (8 spins, 200 realizations) or paper (12, 1000)
      density_ppm: 236
      master_seed: 0
      workers: 1
    sweep:
      family: xy8            # xy8, droid, echo, ramsey, rabi, spin_lock, t1
      points: null           # null: every cycle up to `window` interaction times
      window: 2.0
    propagator:
      method: dense          # dense or krylov
    density_sweep:
      densities: [50, 123, 236, 500]
    esr:
      densities: [123, 149, 236]
      d_perp_list: [0, 20, 40, 60]
    output:
      out_dir: out
      svg: false
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .ensemble import PROFILES
from .esr import A_ZZ_MHZ, BROADENING_STD_MHZ, D_GS_MHZ, D_PERP_HZ_PER_V_CM, EXCLUSION_RADIUS_NM
from .evolution import PropagatorConfig
from .pulse_engine import INTERVAL_NS, RABI_MHZ
from .system_builder import DISORDER_STD_MHZ, J0_MHZ_NM3, MIN_SEPARATION_NM


class ConfigError(ValueError):
    pass


@dataclass
class EnsembleSection:
    profile: str = "desk"
    density_ppm: float = 236.0
    n_spins: int | None = None  # None: taken from the profile
    n_realizations: int | None = None
    disorder_std_mhz: float = DISORDER_STD_MHZ
    rabi_mhz: float = RABI_MHZ
    master_seed: int = 0
    workers: int = 1
    j0: float = J0_MHZ_NM3
    min_separation_nm: float = MIN_SEPARATION_NM
    freeze_positions: bool = False

    def resolved(self) -> dict:
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}; expected one of {sorted(PROFILES)}")
        base = dict(PROFILES[self.profile])
        if self.n_spins is not None:
            base["n_spins"] = self.n_spins
        if self.n_realizations is not None:
            base["n_realizations"] = self.n_realizations
        return base


@dataclass
class SweepSection:
    family: str = "xy8"
    points: list | None = None
    mode: str = "fixed_interval"
    interval_ns: float = INTERVAL_NS
    n_pulses: int = 8
    ideal: bool = False
    timing: str = "edge"
    window: float = 2.0


@dataclass
class DensitySweepSection:
    densities: list = field(default_factory=lambda: [50.0, 123.0, 236.0, 500.0])
    families: list = field(default_factory=lambda: ["xy8", "droid"])


@dataclass
class EsrSection:
    densities: list = field(default_factory=lambda: [123.0, 149.0, 236.0])
    d_perp_list: list = field(default_factory=lambda: [0.0, 20.0, 40.0, 60.0])
    d_perp_hz_per_v_cm: float = D_PERP_HZ_PER_V_CM
    charge_density_factor: float = 2.0
    n_nearest: int = 10
    relative_permittivity: float = 1.0
    broadening_std_mhz: float = BROADENING_STD_MHZ
    n_charge_configs: int = 1000
    exclusion_radius_nm: float = EXCLUSION_RADIUS_NM
    n_sampled: int = 200
    pairing_distance_nm: float | None = None
    d_gs_mhz: float = D_GS_MHZ
    a_zz_mhz: float = A_ZZ_MHZ
    freq_half_span_mhz: float = 700.0
    freq_step_mhz: float = 1.0
    seed: int = 0


@dataclass
class OutputSection:
    out_dir: str = "out"
    svg: bool = False


@dataclass
class RunConfig:
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    propagator: PropagatorConfig = field(default_factory=lambda: PropagatorConfig(method="dense"))
    density_sweep: DensitySweepSection = field(default_factory=DensitySweepSection)
    esr: EsrSection = field(default_factory=EsrSection)
    output: OutputSection = field(default_factory=OutputSection)

    def to_dict(self) -> dict:
        return asdict(self)


def _section(default, doc, name):
    if doc is None:
        return default
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    cls = type(default)
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    try:
        # omitted keys keep the RunConfig defaults, which may differ from the class defaults
        return cls(**{**asdict(default), **doc})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def config_from_dict(doc: dict | None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping of sections")
    types = {f.name: f.default_factory for f in fields(RunConfig)}
    unknown = set(doc) - set(types)
    if unknown:
        raise ConfigError(f"unknown sections: {sorted(unknown)}")
    sections = {}
    for name, factory in types.items():
        sections[name] = _section(factory(), doc.get(name), name)
    return RunConfig(**sections)


def load_config(path) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    return config_from_dict(doc)
