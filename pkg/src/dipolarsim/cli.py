"""
Command-line entry point.

Every subcommand writes its data as CSV (plus a JSON manifest) under
``--out-dir`` and prints a short human-readable report.  ``--svg`` adds
figures.  Exit codes: 0 success, 2 configuration error, 3 simulation error,
4 fit or extraction error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as dio
from .analysis import FitError, charged_ratio, dose_to_ppm, extract_density, fit_exponential, fit_power_law
from .config import ConfigError, RunConfig, load_config
from .ensemble import EnsembleConfig, EnsembleError, default_sweep, run_density_sweep, run_ensembles
from .esr import ChargeModel, GroundStateParams, default_grid, simulate_spectrum, splitting_vs_density
from .evolution import ConvergenceError
from .pulse_engine import BUILTIN_SEQUENCES, SweepPlan, build_droid, build_echo, build_xy8, load_sequence, toggling_frames
from .spin_algebra import spin_half_ops
from .system_builder import (
    DensitySpec,
    InfeasibleGeometryError,
    average_hamiltonian,
    dipolar_hamiltonian,
    heisenberg_effective,
    random_system,
)

EXIT_OK, EXIT_CONFIG, EXIT_SIM, EXIT_FIT = 0, 2, 3, 4
MATCH_ATOL = 1e-10

log = logging.getLogger("dipolarsim")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# Shared plumbing


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    ens = cfg.ensemble
    if args.seed is not None:
        ens = replace(ens, master_seed=args.seed)
        cfg.esr = replace(cfg.esr, seed=args.seed)
    if args.workers is not None:
        ens = replace(ens, workers=args.workers)
    if args.profile is not None:
        ens = replace(ens, profile=args.profile)
    cfg.ensemble = ens
    if args.out_dir is not None:
        cfg.output = replace(cfg.output, out_dir=args.out_dir)
    if args.svg:
        cfg.output = replace(cfg.output, svg=True)
    return cfg


def _ensemble_template(cfg: RunConfig, density: float | None = None) -> EnsembleConfig:
    e = cfg.ensemble
    try:
        return EnsembleConfig(
            density_ppm=float(density if density is not None else e.density_ppm),
            sweep=SweepPlan(cfg.sweep.family),
            disorder_std_mhz=e.disorder_std_mhz,
            rabi_mhz=e.rabi_mhz,
            master_seed=e.master_seed,
            workers=e.workers,
            propagator=cfg.propagator,
            j0=e.j0,
            min_separation_nm=e.min_separation_nm,
            freeze_positions=e.freeze_positions,
            **e.resolved(),
        )
    except ValueError as exc:
        raise CliError(f"invalid ensemble configuration: {exc}", EXIT_CONFIG) from exc


def _sweep_plan(cfg: RunConfig, family: str, density: float) -> SweepPlan:
    s = cfg.sweep
    try:
        if s.points is None:
            if family in ("xy8", "droid"):
                plan = default_sweep(family, density, s.window, s.interval_ns, cfg.ensemble.rabi_mhz)
                return replace(plan, ideal=s.ideal, timing=s.timing)
            raise CliError(f"sweep.points is required for family {family!r}", EXIT_CONFIG)
        return SweepPlan(family, tuple(s.points), s.mode, s.interval_ns, s.n_pulses, cfg.ensemble.rabi_mhz,
                         s.ideal, s.timing)
    except ValueError as exc:
        raise CliError(f"invalid sweep: {exc}", EXIT_CONFIG) from exc


def _manifest(cfg: RunConfig, command: str, out_dir: Path, extra: dict | None = None) -> None:
    doc = {"command": command, "version": __version__, "config": cfg.to_dict()}
    if extra:
        doc.update(extra)
    dio.write_manifest(out_dir / f"{command}_manifest.json", doc)


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _fit_line(label: str, fit) -> str:
    return f"{label:>8s}  T2 = {fit.t2_ns:10.1f} +/- {fit.t2_stderr_ns:8.1f} ns   A = {fit.amplitude:.3f}"


# --------------------------------------------------------------------------
# Subcommands


def cmd_simulate_decay(cfg: RunConfig, args) -> int:
    density = args.density if args.density is not None else cfg.ensemble.density_ppm
    families = args.sequence or [cfg.sweep.family]
    template = _ensemble_template(cfg, density)
    plans = {fam: _sweep_plan(cfg, fam, density) for fam in families}
    try:
        curves = run_ensembles(template, plans)
    except (EnsembleError, InfeasibleGeometryError, ConvergenceError) as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIM) from exc
    out = _out_dir(cfg)
    dio.write_decay_csv(out / "decay.csv", list(curves.values()), density, template.master_seed)
    _manifest(cfg, "simulate-decay", out, {"density_ppm": density, "sequences": families,
                                           "sweeps": {k: asdict(v) for k, v in plans.items()}})
    print(f"density {density:g} ppm, {template.n_spins} spins, {template.n_realizations} realizations")
    fits, failed = {}, []
    for fam, curve in curves.items():
        try:
            fits[fam] = fit_exponential(curve)
            print(_fit_line(fam, fits[fam]))
        except FitError as exc:
            failed.append(fam)
            print(f"{fam:>8s}  fit failed: {exc}")
    with (out / "decay_fits.csv").open("w") as fh:
        fh.write("sequence,t2_ns,t2_stderr_ns,amplitude,residual_rms\n")
        for fam, f in fits.items():
            fh.write(f"{fam},{f.t2_ns!r},{f.t2_stderr_ns!r},{f.amplitude!r},{f.residual_rms!r}\n")
    if cfg.output.svg:
        from .plotting import plot_decay

        plot_decay(list(curves.values()), out / "decay.svg", fits, f"{density:g} ppm")
    return EXIT_FIT if failed else EXIT_OK


def cmd_density_sweep(cfg: RunConfig, args) -> int:
    densities = args.densities or cfg.density_sweep.densities
    template = _ensemble_template(cfg)
    sweeps = {}
    if cfg.sweep.points is not None:
        sweeps = {fam: _sweep_plan(cfg, fam, densities[0]) for fam in cfg.density_sweep.families}
    try:
        rows = run_density_sweep(densities, template, tuple(cfg.density_sweep.families), sweeps, cfg.sweep.window)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    except (EnsembleError, InfeasibleGeometryError, ConvergenceError) as exc:
        raise CliError(f"simulation failed: {exc}", EXIT_SIM) from exc
    out = _out_dir(cfg)
    for r in rows:
        dio.write_decay_csv(out / f"decay_{r.density_ppm:g}ppm.csv", list(r.curves.values()), r.density_ppm,
                            template.master_seed)
    dio.write_density_sweep_csv(out / "density_sweep.csv", rows)
    _manifest(cfg, "density-sweep", out, {"densities": list(densities)})
    print(f"{'ppm':>8s} " + " ".join(f"{'T2_' + f + ' (ns)':>16s}" for f in cfg.density_sweep.families))
    for r in rows:
        print(f"{r.density_ppm:8g} " + " ".join(f"{r.t2(f):16.1f}" for f in cfg.density_sweep.families))
    laws = {}
    for fam in cfg.density_sweep.families:
        rho = [r.density_ppm for r in rows if fam in r.fits]
        t2 = [r.t2(fam) for r in rows if fam in r.fits]
        if len(rho) >= 2:
            laws[fam] = fit_power_law(rho, t2)
            print(f"{fam}: alpha = {laws[fam].alpha:.3f}")
    if cfg.output.svg:
        from .plotting import plot_density_sweep

        plot_density_sweep([r.density_ppm for r in rows],
                           {f: [r.t2(f) for r in rows] for f in cfg.density_sweep.families},
                           out / "density_sweep.svg", laws)
    return EXIT_FIT if any(r.errors for r in rows) else EXIT_OK


def cmd_extract_density(cfg: RunConfig, args) -> int:
    try:
        table = dio.read_density_sweep_csv(args.sweep)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read sweep results: {exc}", EXIT_CONFIG) from exc
    out = _out_dir(cfg)
    try:
        fits = {}
        for fam in ("xy8", "droid"):
            ok = np.isfinite(table[fam])
            fits[fam] = fit_power_law(table["density_ppm"][ok], table[fam][ok])
        est = extract_density(fits, {"xy8": args.t2_xy8, "droid": args.t2_droid}, tuple(args.grid))
    except (ValueError, FitError) as exc:
        raise CliError(f"density extraction failed: {exc}", EXIT_FIT) from exc
    dio.write_residual_csv(out / "residual.csv", est)
    _manifest(cfg, "extract-density", out, {"sweep": str(args.sweep), "t2_xy8_ns": args.t2_xy8,
                                            "t2_droid_ns": args.t2_droid, "grid": list(args.grid),
                                            "estimate": {"rho_ppm": est.rho_ppm, "band_low_ppm": est.band_low_ppm,
                                                         "band_high_ppm": est.band_high_ppm,
                                                         "boundary": est.boundary}})
    for fam, f in fits.items():
        print(f"{fam}: alpha = {f.alpha:.3f}, ln prefactor = {f.prefactor_log:.3f}")
    print(f"density = {est.rho_ppm:.1f} ppm  (+{est.band_high_ppm - est.rho_ppm:.1f} / "
          f"-{est.rho_ppm - est.band_low_ppm:.1f}), min residual {est.min_residual:.3e}")
    if est.boundary:
        print("WARNING: residual minimum lies on the grid boundary")
    if cfg.output.svg:
        from .plotting import plot_residual

        plot_residual(est, out / "residual.svg")
    return EXIT_OK


def cmd_esr(cfg: RunConfig, args) -> int:
    e = cfg.esr
    try:
        params = GroundStateParams(e.d_gs_mhz, e.a_zz_mhz)
        template = ChargeModel(
            rho_vbm_ppm=float(e.densities[0]),
            charge_density_factor=e.charge_density_factor,
            d_perp_hz_per_v_cm=e.d_perp_hz_per_v_cm,
            n_nearest=e.n_nearest,
            relative_permittivity=e.relative_permittivity,
            broadening_std_mhz=e.broadening_std_mhz,
            n_charge_configs=e.n_charge_configs,
            exclusion_radius_nm=e.exclusion_radius_nm,
            n_sampled=e.n_sampled,
            pairing_distance_nm=e.pairing_distance_nm,
        )
        grid = default_grid(params, e.freq_half_span_mhz, e.freq_step_mhz)
    except (ValueError, IndexError) as exc:
        raise CliError(f"invalid esr configuration: {exc}", EXIT_CONFIG) from exc
    workers = cfg.ensemble.workers
    out = _out_dir(cfg)
    spectra = {}
    for rho in e.densities:
        spec = simulate_spectrum(replace(template, rho_vbm_ppm=float(rho)), params, grid, e.seed, workers)
        spectra[f"{rho:g} ppm"] = spec
        dio.write_spectrum_csv(out / f"spectrum_{rho:g}ppm.csv", spec)
    table = None
    if not args.skip_table:
        table = splitting_vs_density(e.densities, e.d_perp_list, template, params, grid, e.seed, workers)
        dio.write_splitting_table_csv(out / "splitting_table.csv", table)
    _manifest(cfg, "esr", out)
    print(f"d_perp = {e.d_perp_hz_per_v_cm:g} Hz/(V/cm), {e.n_charge_configs} charge configurations")
    if table is not None:
        print(f"{'ppm':>8s} " + " ".join(f"{'d=' + format(d, 'g'):>10s}" for d in table.d_perp_hz_per_v_cm))
        for i, rho in enumerate(table.densities_ppm):
            cells = " ".join(f"{v:9.1f}{'*' if s else ' '}" for v, s in zip(table.delta_mhz[i], table.single_peak[i]))
            print(f"{rho:8g} {cells}")
        print("splitting in MHz; * marks unresolved (single-peak) fits")
    if cfg.output.svg:
        from .plotting import plot_spectra, plot_splitting_table

        plot_spectra(spectra, out / "spectra.svg")
        if table is not None:
            plot_splitting_table(table, out / "splitting_table.svg")
    if table is not None and table.errors:
        for k, v in table.errors.items():
            print(f"fit failed at {k}: {v}")
        return EXIT_FIT
    return EXIT_OK


def pair_decomposition(H: np.ndarray, n: int) -> dict:
    """Coefficients ``c[(i, j, a, b)]`` of ``S^a_i S^b_j`` in ``H`` (orthogonal projection)."""
    ops = spin_half_ops()
    local = {"x": ops["Sx"], "y": ops["Sy"], "z": ops["Sz"]}
    coeffs = {}
    dim = 2**n
    for i in range(n):
        for j in range(i + 1, n):
            for a, A in local.items():
                for b, B in local.items():
                    mats = [np.eye(2)] * n
                    mats[i], mats[j] = A, B
                    P = mats[0]
                    for m in mats[1:]:
                        P = np.kron(P, m)
                    # Tr[(S^a S^b)^2] = dim / 16
                    c = np.trace(P.conj().T @ H).real / (dim / 16)
                    if abs(c) > 1e-12:
                        coeffs[(i, j, a, b)] = c
    return coeffs


def cmd_avg_hamiltonian(cfg: RunConfig, args) -> int:
    if args.file:
        try:
            seq = load_sequence(args.file)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot load sequence: {exc}", EXIT_CONFIG) from exc
    else:
        seq = {"echo": lambda: build_echo(8.0, ideal=True), "xy8": lambda: build_xy8(4.0, 8, ideal=True),
               "droid": lambda: build_droid(1, ideal=True)}[args.sequence]()
    n = args.n_spins
    try:
        system = random_system(DensitySpec(cfg.ensemble.density_ppm, n_spins=n), cfg.ensemble.master_seed)
    except (InfeasibleGeometryError, ValueError) as exc:
        raise CliError(f"cannot build spin system: {exc}", EXIT_SIM) from exc
    frames = toggling_frames(seq, n)
    if not frames:
        raise CliError("sequence has no free-evolution windows", EXIT_CONFIG)
    H_dip = dipolar_hamiltonian(system)
    H_avg = average_hamiltonian(H_dip, frames)
    coeffs = pair_decomposition(H_avg, n)
    print(f"sequence {seq.label or args.sequence}: {len(frames)} toggling frames, {n} spins")
    for (i, j, a, b), c in sorted(coeffs.items()):
        Jij = system.couplings[i, j]
        print(f"  S{a}_{i} S{b}_{j}: {c:+.6f} MHz  ({c / Jij:+.4f} J_ij)")
    checks = {
        "Heisenberg/3": heisenberg_effective(system),
        "dipolar": H_dip,
    }
    for name, ref in checks.items():
        dev = float(np.max(np.abs(H_avg - ref)))
        print(f"{name}: {'MATCH' if dev < MATCH_ATOL else 'NO MATCH'} (max deviation {dev:.2e})")
    out = _out_dir(cfg)
    with (out / "avg_hamiltonian.csv").open("w") as fh:
        fh.write("site_i,site_j,axis_i,axis_j,coefficient_mhz\n")
        for (i, j, a, b), c in sorted(coeffs.items()):
            fh.write(f"{i},{j},{a},{b},{c!r}\n")
    return EXIT_OK


def cmd_convert_dose(cfg: RunConfig, args) -> int:
    rows = []
    try:
        for d in args.doses:
            ppm = dose_to_ppm(d, args.vacancies_per_ion, args.depth_nm, args.atomic_density)
            eta = charged_ratio(args.vbm_ppm, ppm) if args.vbm_ppm else None
            rows.append((d, ppm, eta))
    except ValueError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    out = _out_dir(cfg)
    with (out / "dose.csv").open("w") as fh:
        fh.write("dose_per_nm2,vb_ppm,charged_ratio\n")
        for d, ppm, eta in rows:
            fh.write(f"{d!r},{ppm!r},{'' if eta is None else repr(eta)}\n")
    for d, ppm, eta in rows:
        line = f"dose {d:g} /nm^2 -> {ppm:.0f} ppm"
        if eta is not None:
            line += f", charged ratio {eta:.3f}"
        print(line)
    return EXIT_OK


def cmd_dump_geometry(cfg: RunConfig, args) -> int:
    e = cfg.ensemble
    density = args.density if args.density is not None else e.density_ppm
    n = args.n_spins or e.resolved()["n_spins"]
    try:
        system = random_system(DensitySpec(density, n_spins=n), np.random.SeedSequence([e.master_seed, args.index, 0]),
                               e.disorder_std_mhz, e.min_separation_nm, e.j0)
    except (InfeasibleGeometryError, ValueError) as exc:
        raise CliError(f"cannot build spin system: {exc}", EXIT_SIM) from exc
    out = _out_dir(cfg)
    dio.write_geometry_csv(out / "geometry.csv", system)
    J = np.abs(system.couplings[system.central_index])
    print(f"{n} spins at {density:g} ppm, box side {DensitySpec(density, n_spins=n).box_side_nm:.2f} nm, "
          f"central spin {system.central_index}, strongest coupling to it {J.max():.3f} MHz")
    return EXIT_OK


COMMANDS = {
    "simulate-decay": cmd_simulate_decay,
    "density-sweep": cmd_density_sweep,
    "extract-density": cmd_extract_density,
    "esr": cmd_esr,
    "avg-hamiltonian": cmd_avg_hamiltonian,
    "convert-dose": cmd_convert_dose,
    "dump-geometry": cmd_dump_geometry,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--profile", choices=("desk", "paper"), help="ensemble size preset")
    common.add_argument("--out-dir", help="directory for CSV, manifest and SVG output")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dipolarsim", description=__doc__.split("\n\n")[0].strip())
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate-decay", parents=[common], help="disorder-averaged decay curve(s)")
    s.add_argument("--sequence", nargs="+", choices=("xy8", "droid", "echo", "ramsey", "spin_lock", "rabi", "t1"))
    s.add_argument("--density", type=float, help="density in ppm")

    s = sub.add_parser("density-sweep", parents=[common], help="T2 of XY-8 and DROID versus density")
    s.add_argument("--densities", type=float, nargs="+")

    s = sub.add_parser("extract-density", parents=[common], help="density from a measured T2 pair")
    s.add_argument("--sweep", type=Path, required=True, help="density_sweep.csv from density-sweep")
    s.add_argument("--t2-xy8", type=float, required=True, help="measured XY-8 T2 (ns)")
    s.add_argument("--t2-droid", type=float, required=True, help="measured DROID T2 (ns)")
    s.add_argument("--grid", type=float, nargs=2, default=(10.0, 1e4), metavar=("LOW", "HIGH"))

    s = sub.add_parser("esr", parents=[common], help="zero-field ESR spectra and splitting table")
    s.add_argument("--skip-table", action="store_true", help="only write the spectra")

    s = sub.add_parser("avg-hamiltonian", parents=[common], help="toggling-frame average of the dipolar Hamiltonian")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--sequence", choices=sorted(BUILTIN_SEQUENCES), default="droid")
    g.add_argument("--file", type=Path, help="YAML sequence description")
    s.add_argument("--n-spins", type=int, default=4)

    s = sub.add_parser("convert-dose", parents=[common], help="implantation dose to vacancy density")
    s.add_argument("doses", type=float, nargs="+", help="ion doses per nm^2")
    s.add_argument("--vacancies-per-ion", type=float, default=11.0)
    s.add_argument("--depth-nm", type=float, default=60.0)
    s.add_argument("--atomic-density", type=float, default=101.9)
    s.add_argument("--vbm-ppm", type=float, help="negatively charged density, to report the charged ratio")

    s = sub.add_parser("dump-geometry", parents=[common], help="write one sampled spin geometry")
    s.add_argument("--density", type=float)
    s.add_argument("--n-spins", type=int)
    s.add_argument("--index", type=int, default=0, help="realization index")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
