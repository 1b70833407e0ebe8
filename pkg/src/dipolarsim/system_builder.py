"""
Random defect geometries and the Hamiltonians built on them.

All Hamiltonians are dense complex matrices in MHz.  Interacting spins are
effective two-level systems (see :mod:`dipolarsim.spin_algebra`); the only
spin-1 object here is the lab-frame pair Hamiltonian used to check the
rotating-wave approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spin_algebra import (
    collective,
    embed,
    global_rotation,
    kron_all,
    rotation,
    spin_half_ops,
    spin_one_ops,
)

J0_MHZ_NM3 = 52.0
HBN_ATOMIC_DENSITY = 101.9  # atoms / nm^3
MIN_SEPARATION_NM = 0.25
DISORDER_STD_MHZ = 80.0
MAX_PLACEMENT_ATTEMPTS = 100_000

_OPS = spin_half_ops()
SX, SY, SZ = _OPS["Sx"], _OPS["Sy"], _OPS["Sz"]


class InfeasibleGeometryError(RuntimeError):
    """Raised when spins cannot be placed (or coincide)."""


@dataclass(frozen=True)
class DensitySpec:
    density_ppm: float
    atomic_density: float = HBN_ATOMIC_DENSITY
    n_spins: int = 12

    def __post_init__(self):
        if not (self.density_ppm > 0 and self.atomic_density > 0 and self.n_spins >= 1):
            raise ValueError(f"invalid density spec {self}")
        if not np.isfinite(self.box_volume_nm3):
            raise ValueError(f"box volume is not finite for {self}")

    @property
    def number_density(self) -> float:
        """Spins per nm^3."""
        return self.density_ppm * 1e-6 * self.atomic_density

    @property
    def box_volume_nm3(self) -> float:
        return self.n_spins / (self.density_ppm * 1e-6 * self.atomic_density)

    @property
    def box_side_nm(self) -> float:
        return self.box_volume_nm3 ** (1.0 / 3.0)


def angular_factor(direction) -> float:
    """``3 n_z^2 - 1`` for a unit vector ``direction``."""
    n = np.asarray(direction, dtype=float)
    if n.shape != (3,) or abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError(f"direction must be a unit 3-vector, got {direction!r}")
    return 3.0 * n[2] ** 2 - 1.0


def coupling_matrix(positions: np.ndarray, j0: float = J0_MHZ_NM3) -> np.ndarray:
    """Symmetric matrix ``J_ij = j0 * (3 n_z^2 - 1) / r_ij^3`` (MHz), zero diagonal."""
    pos = np.asarray(positions, dtype=float)
    d = pos[:, None, :] - pos[None, :, :]
    r = np.linalg.norm(d, axis=-1)
    n = len(pos)
    off = ~np.eye(n, dtype=bool)
    if np.any(r[off] <= 0):
        raise InfeasibleGeometryError("two spins occupy the same position")
    J = np.zeros((n, n))
    nz2 = (d[..., 2][off] / r[off]) ** 2
    J[off] = j0 * (3.0 * nz2 - 1.0) / r[off] ** 3
    return J


def _centroid_index(positions: np.ndarray) -> int:
    c = positions.mean(axis=0)
    return int(np.argmin(np.linalg.norm(positions - c, axis=1)))


@dataclass(frozen=True)
class SpinSystem:
    """One disorder realization: positions (nm), couplings and on-site fields (MHz)."""

    positions: np.ndarray
    disorder: np.ndarray
    j0: float = J0_MHZ_NM3
    couplings: np.ndarray = field(init=False, repr=False)
    central_index: int = field(init=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 3)
        h = np.array(self.disorder, dtype=float).reshape(-1)
        if len(h) != len(pos):
            raise ValueError("disorder vector length must equal number of spins")
        pos.setflags(write=False)
        h.setflags(write=False)
        J = coupling_matrix(pos, self.j0)
        J.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "disorder", h)
        object.__setattr__(self, "couplings", J)
        object.__setattr__(self, "central_index", _centroid_index(pos))

    @property
    def n_spins(self) -> int:
        return len(self.positions)

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    def with_disorder(self, disorder) -> "SpinSystem":
        return SpinSystem(self.positions, disorder, self.j0)


def sample_positions(
    spec: DensitySpec,
    seed,
    min_separation: float = MIN_SEPARATION_NM,
    max_attempts: int = MAX_PLACEMENT_ATTEMPTS,
) -> np.ndarray:
    """Uniform positions in a cube of volume ``n_spins / number_density``.

    Points are placed one at a time and redrawn whenever they fall closer than
    ``min_separation`` to an accepted point.  ``seed`` is anything accepted by
    :func:`numpy.random.default_rng` (including a Generator, which is consumed).
    """
    rng = np.random.default_rng(seed)
    side = spec.box_side_nm
    pts = np.empty((spec.n_spins, 3))
    k = 0
    attempts = 0
    while k < spec.n_spins:
        if attempts >= max_attempts:
            raise InfeasibleGeometryError(
                f"could not place {spec.n_spins} spins at {spec.density_ppm} ppm "
                f"with min separation {min_separation} nm"
            )
        attempts += 1
        p = rng.uniform(0.0, side, size=3)
        if k and np.min(np.linalg.norm(pts[:k] - p, axis=1)) < min_separation:
            continue
        pts[k] = p
        k += 1
    return pts


def sample_disorder(n_spins: int, std_mhz: float, seed) -> np.ndarray:
    """I.i.d. Gaussian on-site fields (MHz)."""
    return np.random.default_rng(seed).normal(0.0, std_mhz, size=n_spins)


def random_system(
    spec: DensitySpec,
    seed,
    disorder_std_mhz: float = DISORDER_STD_MHZ,
    min_separation: float = MIN_SEPARATION_NM,
    j0: float = J0_MHZ_NM3,
) -> SpinSystem:
    """Disorder then positions, both drawn from one generator seeded by ``seed``.

    Drawing the fixed-size disorder vector first keeps it identical across
    densities for a given seed, and positions are uniform draws scaled by the
    box side, so sweeps over density reuse the same random numbers unless a
    placement is rejected.
    """
    rng = np.random.default_rng(seed)
    h = sample_disorder(spec.n_spins, disorder_std_mhz, rng)
    pos = sample_positions(spec, rng, min_separation)
    return SpinSystem(pos, h, j0)


def mean_nearest_coupling(system: SpinSystem) -> float:
    """Mean over spins of the largest |J_ij| to any partner (MHz)."""
    return float(np.mean(np.max(np.abs(system.couplings), axis=1)))


# --------------------------------------------------------------------------
# Hamiltonians


def _pair_sum(J: np.ndarray, terms) -> np.ndarray:
    """``sum_{i<j} J_ij sum_a c_a S^a_i S^a_j`` as a dense matrix."""
    n = len(J)
    coef = dict.fromkeys("xyz", 0.0)
    for axis, c in terms:
        coef[axis] += c
    dim = 2**n
    H = np.zeros((dim, dim), dtype=complex)
    if coef["x"] != coef["y"]:
        local = {"x": SX, "y": SY, "z": SZ}
        eye = np.eye(2, dtype=complex)
        for i in range(n):
            for j in range(i + 1, n):
                for axis, c in coef.items():
                    if J[i, j] != 0.0 and c != 0.0:
                        mats = [eye] * n
                        mats[i] = mats[j] = local[axis]
                        H += J[i, j] * c * kron_all(mats)
        return H
    # equal x and y weights: Sz Sz is diagonal and SxSx + SySy = (S+S- + S-S+)/2
    # only swaps antiparallel bits, so the matrix is built from bit operations
    idx = np.arange(dim)
    bits = (idx[None, :] >> (n - 1 - np.arange(n))[:, None]) & 1
    sz = 0.5 - bits
    diag = np.zeros(dim)
    for i in range(n):
        for j in range(i + 1, n):
            if J[i, j] == 0.0:
                continue
            diag += J[i, j] * coef["z"] * sz[i] * sz[j]
            if coef["x"] != 0.0:
                src = idx[bits[i] != bits[j]]
                mask = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
                H[src ^ mask, src] += 0.5 * J[i, j] * coef["x"]
    H[idx, idx] += diag
    return H


def dipolar_hamiltonian(system: SpinSystem) -> np.ndarray:
    """``sum_{i<j} -J_ij (Sz Sz - Sx Sx - Sy Sy)``."""
    if system.n_spins < 2:
        raise ValueError("dipolar Hamiltonian needs at least two spins")
    return _pair_sum(system.couplings, (("z", -1.0), ("x", 1.0), ("y", 1.0)))


def heisenberg_effective(system: SpinSystem) -> np.ndarray:
    """``sum_{i<j} (J_ij / 3) S_i . S_j``."""
    if system.n_spins < 2:
        raise ValueError("Heisenberg Hamiltonian needs at least two spins")
    third = 1.0 / 3.0
    return _pair_sum(system.couplings, (("x", third), ("y", third), ("z", third)))


def disorder_hamiltonian(system: SpinSystem) -> np.ndarray:
    n = system.n_spins
    return sum(h * embed(SZ, i, n) for i, h in enumerate(system.disorder))


def drive_hamiltonian(n_spins: int, rabi_mhz: float, phase: float) -> np.ndarray:
    """``rabi * sum_i (cos(phase) Sx_i + sin(phase) Sy_i)``."""
    if not rabi_mhz > 0:
        raise ValueError("rabi_mhz must be positive")
    local = rabi_mhz * (np.cos(phase) * SX + np.sin(phase) * SY)
    return collective(local, n_spins)


def average_hamiltonian(base: np.ndarray, frames) -> np.ndarray:
    """Weighted toggling-frame average ``sum_k w_k U_k^dag H U_k`` (weights renormalized)."""
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame")
    weights = np.array([w for _, w in frames], dtype=float)
    if np.any(weights <= 0):
        raise ValueError("frame weights must be positive")
    weights = weights / weights.sum()
    out = np.zeros_like(base, dtype=complex)
    for (U, _), w in zip(frames, weights):
        U = np.asarray(U)
        if np.max(np.abs(U.conj().T @ U - np.eye(len(U)))) > 1e-9:
            raise ValueError("frame rotation is not unitary")
        out += w * (U.conj().T @ base @ U)
    return out


def droid_frames(n_spins: int) -> list[tuple[np.ndarray, float]]:
    """Six equal-weight global rotations taking Sz to +x, -x, +y, -y, +z, -z."""
    ry = lambda a: global_rotation(a, np.pi / 2, n_spins)  # noqa: E731
    rx = lambda a: global_rotation(a, 0.0, n_spins)  # noqa: E731
    rots = [
        ry(-np.pi / 2),  # U^dag Sz U = +Sx
        ry(np.pi / 2),
        rx(np.pi / 2),  # +Sy
        rx(-np.pi / 2),
        np.eye(2**n_spins, dtype=complex),
        rx(np.pi),
    ]
    return [(U, 1.0 / 6.0) for U in rots]


def frame_axis(U: np.ndarray) -> str | None:
    """Name the signed axis that ``U^dag Sz U`` equals for a single spin, if any."""
    F = U.conj().T @ SZ @ U
    for name, op in (("+x", SX), ("-x", -SX), ("+y", SY), ("-y", -SY), ("+z", SZ), ("-z", -SZ)):
        if np.allclose(F, op, atol=1e-9):
            return name
    return None


# --------------------------------------------------------------------------
# Two-spin lab frame (restricted spin-1 operators) for the RWA check


def _restricted_pair_ops():
    r = spin_one_ops(restricted=True)
    return [[embed(r[a], k, 2) for a in ("Sx", "Sy", "Sz")] for k in range(2)]


def lab_frame_pair_hamiltonian(
    splitting_mhz: float, r_nm: float, direction, j0: float = J0_MHZ_NM3
) -> np.ndarray:
    """Two defects on ``{|0>,|-1>}^2`` in the lab frame, before the RWA.

    ``Delta (Sz_1 + Sz_2) - (j0/r^3) [3 (S_1.n)(S_2.n) - S_1.S_2]`` with the
    spin-1 operators restricted to the two-level subspace.
    """
    if not r_nm > 0:
        raise ValueError("r_nm must be positive")
    n = np.asarray(direction, dtype=float)
    angular_factor(n)  # unit-vector check
    S1, S2 = _restricted_pair_ops()
    s1n = sum(c * o for c, o in zip(n, S1))
    s2n = sum(c * o for c, o in zip(n, S2))
    dot = sum(a @ b for a, b in zip(S1, S2))
    J = j0 / r_nm**3
    return splitting_mhz * (S1[2] + S2[2]) - J * (3.0 * s1n @ s2n - dot)


def rwa_pair_hamiltonian(r_nm: float, direction, j0: float = J0_MHZ_NM3) -> np.ndarray:
    """Energy-conserving part of the pair interaction in the rotating frame.

    ``-(j0 A / 2 r^3) [2 Sz Sz - Sx Sx - Sy Sy]`` with restricted spin-1
    operators.  Differs from the spin-1/2 form of :func:`dipolar_hamiltonian`
    only by single-site ``Sz`` terms and a constant.
    """
    A = angular_factor(direction)
    S1, S2 = _restricted_pair_ops()
    J = j0 * A / r_nm**3
    return -0.5 * J * (2.0 * S1[2] @ S2[2] - S1[0] @ S2[0] - S1[1] @ S2[1])


def rotating_frame(splitting_mhz: float, t_ns: float) -> np.ndarray:
    """``exp(+i 2 pi Delta (Sz_1 + Sz_2) t)`` for the restricted pair (diagonal)."""
    S1, S2 = _restricted_pair_ops()
    d = np.real(np.diag(S1[2] + S2[2]))
    return np.diag(np.exp(2j * np.pi * 1e-3 * splitting_mhz * d * t_ns))


__all__ = [
    "DensitySpec",
    "SpinSystem",
    "InfeasibleGeometryError",
    "angular_factor",
    "coupling_matrix",
    "sample_positions",
    "sample_disorder",
    "random_system",
    "mean_nearest_coupling",
    "dipolar_hamiltonian",
    "heisenberg_effective",
    "disorder_hamiltonian",
    "drive_hamiltonian",
    "average_hamiltonian",
    "droid_frames",
    "frame_axis",
    "lab_frame_pair_hamiltonian",
    "rwa_pair_hamiltonian",
    "rotating_frame",
    "rotation",
]
