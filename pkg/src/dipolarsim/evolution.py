"""
State-vector propagation through piecewise-constant Hamiltonians.

Units: Hamiltonians in MHz, times in ns, so a segment propagator is
``exp(-i 2 pi 1e-3 H t)``.

Two propagators are provided: :func:`dense_propagate` (full
eigendecomposition, used as the oracle and for small registers) and
:func:`krylov_propagate` (Lanczos projection with adaptive sub-stepping, which
only needs matrix-vector products).  :class:`SequenceRunner` binds either one
to a :class:`~dipolarsim.system_builder.SpinSystem` and applies pulse
sequences to it, building the many-body Hamiltonian as a sparse matrix from bit
operations instead of dense Kronecker products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal

from .pulse_engine import PulseSequence, Segment
from .spin_algebra import global_rotation, rotation
from .system_builder import SpinSystem

TWO_PI_NS_MHZ = 2 * np.pi * 1e-3
METHODS = ("krylov", "dense")


class ConvergenceError(RuntimeError):
    """Krylov propagation did not reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class PropagatorConfig:
    method: str = "krylov"
    krylov_dim: int = 30
    tolerance: float = 1e-10
    max_substeps: int = 10_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown propagation method {self.method!r}")
        if self.krylov_dim < 2:
            raise ValueError("krylov_dim must be at least 2")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def _check_hermitian(H, atol=1e-10):
    if sp.issparse(H):
        diff = abs(H - H.getH())
        bad = diff.max() if diff.nnz else 0.0
    else:
        H = np.asarray(H)
        bad = np.max(np.abs(H - H.conj().T), initial=0.0)
    if bad > atol * max(1.0, _scale(H)):
        raise ValueError(f"Hamiltonian is not Hermitian (max deviation {bad:.2e})")


def _scale(H) -> float:
    if sp.issparse(H):
        return float(abs(H).max()) if H.nnz else 0.0
    return float(np.max(np.abs(H), initial=0.0))


def dense_propagate(H, t_ns: float, psi: np.ndarray) -> np.ndarray:
    """``exp(-i 2 pi H t) psi`` by full eigendecomposition."""
    if sp.issparse(H):
        H = H.toarray()
    H = np.asarray(H)
    if H.shape[0] != len(psi):
        raise ValueError("dimension mismatch between H and psi")
    _check_hermitian(H)
    w, V = np.linalg.eigh(H)
    return V @ (np.exp(-1j * TWO_PI_NS_MHZ * w * t_ns) * (V.conj().T @ psi))


def lanczos(matvec, v0: np.ndarray, m: int, breakdown_tol: float = 1e-12):
    """Hermitian Lanczos with full reorthogonalization.

    Returns ``(V, alpha, beta)`` with ``V`` of shape ``(k, dim)`` holding the
    orthonormal Krylov basis as rows, ``alpha`` the ``k`` diagonal entries and
    ``beta`` the ``k`` sub-diagonal entries, where ``beta[k-1]`` couples the
    basis to the next (unbuilt) vector; ``k < m`` signals an invariant
    subspace (``beta[k-1] == 0``).
    """
    dim = len(v0)
    m = min(m, dim)
    V = np.zeros((m, dim), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v0 / np.linalg.norm(v0)
    for j in range(m):
        w = matvec(V[j])
        alpha[j] = np.real(np.vdot(V[j], w))
        w = w - alpha[j] * V[j]
        if j:
            w = w - beta[j - 1] * V[j - 1]
        for _ in range(2):  # twice is enough
            w = w - V[: j + 1].T @ (V[: j + 1].conj() @ w)
        b = np.linalg.norm(w)
        beta[j] = b
        if b < breakdown_tol * max(1.0, abs(alpha[j])):
            beta[j] = 0.0
            return V[: j + 1], alpha[: j + 1], beta[: j + 1]
        if j + 1 < m:
            V[j + 1] = w / b
    return V, alpha, beta


def krylov_propagate(H, t_ns: float, psi: np.ndarray, config: PropagatorConfig | None = None) -> np.ndarray:
    """``exp(-i 2 pi H t) psi`` from Lanczos projections.

    The step is shrunk until the a-posteriori estimate
    ``beta_m |e_m^T exp(-i 2 pi T dt) e_1|`` falls below ``tolerance * dt / t``
    so that the errors of all sub-steps add up to at most ``tolerance``.
    """
    cfg = config or PropagatorConfig()
    psi = np.asarray(psi, dtype=complex)
    if H.shape[0] != len(psi):
        raise ValueError("dimension mismatch between H and psi")
    if t_ns == 0:
        return psi.copy()
    matvec = H.dot if hasattr(H, "dot") else (lambda v: H @ v)
    total = abs(t_ns)
    sign = np.sign(t_ns)
    remaining = total
    step = total
    substeps = 0
    out = psi.copy()
    while remaining > 0:
        nrm = np.linalg.norm(out)
        if nrm == 0:
            return out
        V, a, b = lanczos(matvec, out, cfg.krylov_dim)
        k = len(a)
        theta, Q = eigh_tridiagonal(a, b[: k - 1]) if k > 1 else (a, np.ones((1, 1)))
        exact = b[k - 1] == 0.0
        step = min(step, remaining)
        while True:
            y = Q @ (np.exp(-1j * TWO_PI_NS_MHZ * theta * sign * step) * Q[0].conj())
            err = 0.0 if exact else b[k - 1] * abs(y[-1]) * nrm
            budget = cfg.tolerance * step / total
            if err <= budget:
                break
            substeps += 1
            if substeps > cfg.max_substeps:
                raise ConvergenceError("Krylov propagation exceeded max_substeps", err)
            # local error behaves like step**k
            step *= max(0.1, min(0.9, 0.9 * (budget / err) ** (1.0 / k)))
        out = nrm * (V.T @ y)
        remaining -= step
        substeps += 1
        if substeps > cfg.max_substeps and remaining > 0:
            raise ConvergenceError("Krylov propagation exceeded max_substeps", err)
        step = step * 2.0 if not exact else remaining
    return out


# --------------------------------------------------------------------------
# Sparse many-body operators


def _bits(n: int) -> np.ndarray:
    idx = np.arange(2**n)
    return np.array([(idx >> (n - 1 - k)) & 1 for k in range(n)])


def sz_diagonal(n: int, site: int) -> np.ndarray:
    """Diagonal of ``Sz`` on ``site``: +1/2 for bit 0 (``|0>``), -1/2 for bit 1."""
    return 0.5 - ((np.arange(2**n) >> (n - 1 - site)) & 1)


def sparse_system_hamiltonian(system: SpinSystem, include_dipolar: bool = True) -> sp.csr_matrix:
    """``H_dip + sum_i h_i Sz_i`` as a CSR matrix."""
    n = system.n_spins
    dim = 2**n
    bits = _bits(n)
    sz = 0.5 - bits
    diag = system.disorder @ sz
    rows, cols, vals = [np.arange(dim)], [np.arange(dim)], []
    J = system.couplings
    idx = np.arange(dim)
    if include_dipolar:
        for i in range(n):
            for j in range(i + 1, n):
                if J[i, j] == 0.0:
                    continue
                diag = diag - J[i, j] * sz[i] * sz[j]
                mask = bits[i] != bits[j]
                flip = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
                r = idx[mask]
                rows.append(r)
                cols.append(r ^ flip)
                vals.append(np.full(len(r), 0.5 * J[i, j], dtype=complex))
    vals.insert(0, diag.astype(complex))
    H = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim)
    )
    return H.tocsr()


def sparse_drive(n: int, rabi_mhz: float, phase: float) -> sp.csr_matrix:
    """``rabi * sum_i (cos(phase) Sx_i + sin(phase) Sy_i)`` as CSR."""
    dim = 2**n
    idx = np.arange(dim)
    rows, cols, vals = [], [], []
    for k in range(n):
        m = 1 << (n - 1 - k)
        col_down = (idx & m) != 0
        rows.append(idx ^ m)
        cols.append(idx)
        # <up| S+ |down> = 1 carries exp(-i phase); the lowering element exp(+i phase)
        vals.append(np.where(col_down, np.exp(-1j * phase), np.exp(1j * phase)) * (rabi_mhz / 2))
    H = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(dim, dim))
    return H.tocsr()


def apply_global_rotation(psi: np.ndarray, angle: float, phase: float, n: int) -> np.ndarray:
    """Apply the same single-spin rotation to every site without forming the 2^n matrix."""
    R = rotation(angle, phase)
    out = psi.reshape((2,) * n)
    for k in range(n):
        out = np.moveaxis(np.tensordot(R, out, axes=([1], [k])), 0, k)
    return out.reshape(-1)


def ground_state(n: int) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    return psi


class SequenceRunner:
    """Applies pulse sequences to one spin system.

    Segment Hamiltonians are ``H_dip + H_disorder`` plus the drive term during
    drive segments.  In ``dense`` mode the eigendecomposition of every distinct
    segment Hamiltonian is computed once and reused, which is the fast path for
    registers up to ~10 spins.  Each runner owns its caches; use one runner per
    thread.
    """

    def __init__(self, system: SpinSystem, config: PropagatorConfig | None = None, include_dipolar: bool = True):
        self.system = system
        self.config = config or PropagatorConfig()
        self.n = system.n_spins
        self.h0 = sparse_system_hamiltonian(system, include_dipolar)
        self.sz_central = sz_diagonal(self.n, system.central_index)
        self._drives: dict = {}
        self._eig: dict = {}
        self._units: dict = {}

    def hamiltonian(self, seg: Segment) -> sp.csr_matrix:
        if seg.kind == "free":
            return self.h0
        key = (seg.rabi_mhz, seg.phase)
        if key not in self._drives:
            self._drives[key] = self.h0 + sparse_drive(self.n, seg.rabi_mhz, seg.phase)
        return self._drives[key]

    def _eigh(self, seg: Segment):
        key = None if seg.kind == "free" else (seg.rabi_mhz, seg.phase)
        if key not in self._eig:
            self._eig[key] = np.linalg.eigh(self.hamiltonian(seg).toarray())
        return self._eig[key]

    def apply(self, seg: Segment, psi: np.ndarray) -> np.ndarray:
        if seg.kind == "ideal":
            return apply_global_rotation(psi, seg.angle, seg.phase, self.n)
        if self.config.method == "dense":
            w, V = self._eigh(seg)
            return V @ (np.exp(-1j * TWO_PI_NS_MHZ * w * seg.duration_ns) * (V.conj().T @ psi))
        return krylov_propagate(self.hamiltonian(seg), seg.duration_ns, psi, self.config)

    def segment_unitary(self, seg: Segment) -> np.ndarray:
        """Dense propagator of one segment."""
        if seg.kind == "ideal":
            return global_rotation(seg.angle, seg.phase, self.n)
        w, V = self._eigh(seg)
        return (V * np.exp(-1j * TWO_PI_NS_MHZ * w * seg.duration_ns)) @ V.conj().T

    def unit_unitary(self, unit: tuple) -> np.ndarray:
        """Dense propagator of a segment cycle, cached per cycle."""
        # keyed by object identity; the stored tuple keeps the ids valid
        key = tuple(map(id, unit))
        if key not in self._units:
            U = np.eye(2**self.n, dtype=complex)
            for seg in unit:
                U = self.segment_unitary(seg) @ U
            self._units[key] = (unit, U)
        return self._units[key][1]

    def apply_segments(self, segments, psi: np.ndarray, unit: tuple = ()) -> np.ndarray:
        """Apply ``segments`` in order; in dense mode whole copies of ``unit`` use one cached matrix."""
        segments = tuple(segments)
        p = len(unit) if self.config.method == "dense" else 0
        i = 0
        while i < len(segments):
            if p and segments[i : i + p] == unit:
                psi = self.unit_unitary(unit) @ psi
                i += p
            else:
                psi = self.apply(segments[i], psi)
                i += 1
        return psi

    def central_sz(self, psi: np.ndarray) -> float:
        return float(np.dot(np.abs(psi) ** 2, self.sz_central))

    def run(self, seq: PulseSequence, record: bool = False, psi0: np.ndarray | None = None):
        """Final central-spin ``<Sz>``; with ``record`` the value after every segment."""
        psi = ground_state(self.n) if psi0 is None else np.array(psi0, dtype=complex)
        traj = []
        for seg in seq.segments:
            psi = self.apply(seg, psi)
            if record:
                traj.append(self.central_sz(psi))
        return np.array(traj) if record else self.central_sz(psi)

    def final_state(self, segments, psi0: np.ndarray | None = None) -> np.ndarray:
        psi = ground_state(self.n) if psi0 is None else np.array(psi0, dtype=complex)
        for seg in segments:
            psi = self.apply(seg, psi)
        return psi

    def run_readouts(self, seqs, readout_phases) -> np.ndarray:
        """Central ``<Sz>`` for each sequence under each readout phase.

        Returns an array of shape ``(len(seqs), len(readout_phases))``.  The
        pre-readout state of a sequence is propagated incrementally from the
        previous one whenever the previous sequence's segments are a prefix.
        Sequences without a readout pulse report their final ``<Sz>`` in every
        column.
        """
        out = np.empty((len(seqs), len(readout_phases)))
        prev: tuple = ()
        state = ground_state(self.n)
        for i, seq in enumerate(seqs):
            head = seq.segments[:-1] if seq.has_readout else seq.segments
            if len(head) >= len(prev) and head[: len(prev)] == prev:
                rest = head[len(prev):]
            else:
                rest, state = head, ground_state(self.n)
            state = self.apply_segments(rest, state, seq.unit)
            prev = head
            if not seq.has_readout:
                out[i, :] = self.central_sz(state)
                continue
            last = seq.segments[-1]
            for j, ph in enumerate(readout_phases):
                seg = Segment(last.kind, last.duration_ns, ph, last.rabi_mhz, last.angle)
                out[i, j] = self.central_sz(self.apply(seg, state))
        return out


def run_sequence(
    system: SpinSystem,
    seq: PulseSequence,
    config: PropagatorConfig | None = None,
    record: bool = False,
):
    """Central-spin ``<Sz>`` after ``seq`` starting from all spins in ``|0>``."""
    return SequenceRunner(system, config).run(seq, record=record)
