"""
Dense spin-operator algebra for spin-1/2 and spin-1 sites.

Basis conventions
-----------------
- Two-level (effective spin-1/2) sites use the ordered basis ``{|0>, |-1>}``;
  ``|m_s=0>`` is the ``Sz = +1/2`` state.
- Spin-1 sites use ``{|+1>, |0>, |-1>}``.
- Many-body kets are Kronecker products with site 0 leftmost, so site ``k`` of
  an ``n``-site register lives in bit ``n - 1 - k`` of the basis index.

Hamiltonians are expressed in MHz (linear frequency, h = 1); the factor 2*pi
only enters the propagators in :mod:`dipolarsim.evolution`.
"""

from __future__ import annotations

from functools import reduce

import numpy as np

HERMITIAN_ATOL = 1e-12

_SQ2 = np.sqrt(2.0)


def spin_half_ops() -> dict[str, np.ndarray]:
    """Return the spin-1/2 matrices ``Sx, Sy, Sz, Splus, Sminus``.

    ``Splus = |0><-1|`` raises ``Sz`` from -1/2 to +1/2.
    """
    sx = 0.5 * np.array([[0, 1], [1, 0]], dtype=complex)
    sy = 0.5 * np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = 0.5 * np.array([[1, 0], [0, -1]], dtype=complex)
    splus = np.array([[0, 1], [0, 0]], dtype=complex)
    sminus = np.array([[0, 0], [1, 0]], dtype=complex)
    return {"Sx": sx, "Sy": sy, "Sz": sz, "Splus": splus, "Sminus": sminus}


def spin_one_ops(restricted: bool = False) -> dict[str, np.ndarray]:
    """Return spin-1 operators.

    Parameters
    ----------
    restricted : bool
        If False (default) return the 3x3 matrices in the ``{|+1>,|0>,|-1>}``
        basis.  If True return the spin-1 operators projected onto the
        ``{|0>, |-1>}`` two-level subspace, together with the raising and
        lowering operators of that subspace.
    """
    if restricted:
        return {
            "Sx": np.array([[0, 1], [1, 0]], dtype=complex) / _SQ2,
            "Sy": np.array([[0, -1j], [1j, 0]], dtype=complex) / _SQ2,
            "Sz": np.array([[0, 0], [0, -1]], dtype=complex),
            "Splus": np.array([[0, 1], [0, 0]], dtype=complex),
            "Sminus": np.array([[0, 0], [1, 0]], dtype=complex),
        }
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / _SQ2
    sy = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / _SQ2
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    return {"Sx": sx, "Sy": sy, "Sz": sz}


def embed(op: np.ndarray, site: int, n_sites: int, local_dim: int | None = None) -> np.ndarray:
    """Place ``op`` on ``site`` of an ``n_sites`` register: ``I x ... x op x ... x I``."""
    op = np.asarray(op)
    if local_dim is None:
        local_dim = op.shape[0]
    if op.ndim != 2 or op.shape != (local_dim, local_dim):
        raise ValueError(f"operator shape {op.shape} does not match local_dim={local_dim}")
    if not 0 <= site < n_sites:
        raise ValueError(f"site {site} outside register of {n_sites} sites")
    left = np.eye(local_dim**site)
    right = np.eye(local_dim ** (n_sites - site - 1))
    return np.kron(np.kron(left, op), right)


def kron_all(ops) -> np.ndarray:
    """Kronecker product of a sequence of (possibly differently sized) operators."""
    return reduce(np.kron, ops)


def collective(op: np.ndarray, n_sites: int) -> np.ndarray:
    """Sum of ``op`` embedded on every site."""
    return sum(embed(op, k, n_sites) for k in range(n_sites))


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def is_hermitian(h: np.ndarray, atol: float = HERMITIAN_ATOL) -> bool:
    return bool(np.max(np.abs(h - h.conj().T), initial=0.0) < atol)


def rotation(angle: float, phase: float) -> np.ndarray:
    """Single spin-1/2 rotation ``exp(-i angle (cos(phase) Sx + sin(phase) Sy))``."""
    c, s = np.cos(angle / 2), np.sin(angle / 2)
    off = -1j * s * np.exp(-1j * phase)
    return np.array([[c, off], [-1j * s * np.exp(1j * phase), c]], dtype=complex)


def global_rotation(angle: float, phase: float, n_sites: int) -> np.ndarray:
    """The same spin-1/2 rotation applied to every site (dense, ``2**n`` square)."""
    return kron_all([rotation(angle, phase)] * n_sites)


def product_state(single: np.ndarray, n_sites: int) -> np.ndarray:
    """Normalized product ket ``single x single x ...``."""
    single = np.asarray(single, dtype=complex)
    single = single / np.linalg.norm(single)
    return kron_all([single] * n_sites)
