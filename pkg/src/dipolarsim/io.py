"""CSV and JSON persistence.  Floats are written with ``repr`` precision so identical runs give identical bytes."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

DECAY_COLUMNS = ("time_ns", "contrast", "stderr", "sequence", "density_ppm", "n_realizations", "master_seed")
SWEEP_COLUMNS = ("density_ppm", "t2_xy8_ns", "t2_xy8_stderr_ns", "t2_droid_ns", "t2_droid_stderr_ns", "fit_errors")


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def _write(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def _read(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_decay_csv(path, curves, density_ppm: float, master_seed: int) -> Path:
    """One row per sweep point; ``curves`` is a DecayCurve or a list of them (one per sequence)."""
    if not isinstance(curves, (list, tuple)):
        curves = [curves]
    rows = []
    for c in curves:
        for t, y, e in zip(c.times_ns, c.contrast, c.stderr):
            rows.append((float(t), float(y), float(e), c.label, float(density_ppm), c.n_realizations, master_seed))
    return _write(path, DECAY_COLUMNS, rows)


def read_decay_csv(path) -> dict:
    """Map ``sequence -> {"times_ns", "contrast", "stderr", "density_ppm", "n_realizations"}``."""
    out: dict = {}
    for rec in _read(path):
        missing = set(DECAY_COLUMNS) - set(rec)
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        d = out.setdefault(rec["sequence"], {"times_ns": [], "contrast": [], "stderr": [],
                                             "density_ppm": float(rec["density_ppm"]),
                                             "n_realizations": int(rec["n_realizations"])})
        d["times_ns"].append(float(rec["time_ns"]))
        d["contrast"].append(float(rec["contrast"]))
        d["stderr"].append(float(rec["stderr"]))
    for d in out.values():
        for k in ("times_ns", "contrast", "stderr"):
            d[k] = np.array(d[k])
    return out


def write_density_sweep_csv(path, rows) -> Path:
    recs = []
    for r in rows:
        vals = [r.density_ppm]
        for fam in ("xy8", "droid"):
            fit = r.fits.get(fam)
            vals += [fit.t2_ns, fit.t2_stderr_ns] if fit else [float("nan"), float("nan")]
        vals.append(";".join(f"{k}: {v}" for k, v in sorted(r.errors.items())))
        recs.append(vals)
    return _write(path, SWEEP_COLUMNS, recs)


def read_density_sweep_csv(path) -> dict:
    """``{"density_ppm": array, "xy8": array, "droid": array}`` with T2 in ns."""
    recs = _read(path)
    if not recs:
        raise ValueError(f"{path}: no rows")
    missing = {"density_ppm", "t2_xy8_ns", "t2_droid_ns"} - set(recs[0])
    if missing:
        raise ValueError(f"{path}: missing columns {sorted(missing)}")
    return {
        "density_ppm": np.array([float(r["density_ppm"]) for r in recs]),
        "xy8": np.array([float(r["t2_xy8_ns"]) for r in recs]),
        "droid": np.array([float(r["t2_droid_ns"]) for r in recs]),
    }


def write_residual_csv(path, estimate) -> Path:
    return _write(path, ("density_ppm", "residual"), [(float(a), float(b)) for a, b in estimate.residual_curve])


def write_spectrum_csv(path, spectrum) -> Path:
    return _write(path, ("freq_mhz", "intensity"),
                  [(float(f), float(y)) for f, y in zip(spectrum.freqs_mhz, spectrum.intensity)])


def write_splitting_table_csv(path, table) -> Path:
    """Rows are densities, columns are ``d_perp`` values; cells are the fitted splitting in MHz."""
    header = ["density_ppm"] + [f"dperp_{_fmt(float(d))}" for d in table.d_perp_hz_per_v_cm]
    rows = [[float(rho)] + [float(v) for v in table.delta_mhz[i]] for i, rho in enumerate(table.densities_ppm)]
    return _write(path, header, rows)


def write_geometry_csv(path, system) -> Path:
    rows = [(k, *map(float, system.positions[k]), float(system.disorder[k]), int(k == system.central_index))
            for k in range(system.n_spins)]
    return _write(path, ("site", "x_nm", "y_nm", "z_nm", "disorder_mhz", "central"), rows)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def write_manifest(path, document: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(document), indent=2, sort_keys=True) + "\n")
    return path
