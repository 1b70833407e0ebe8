"""
Pulse-sequence representation and builders.

A :class:`PulseSequence` is an ordered tuple of piecewise-constant
:class:`Segment` objects.  Sequences that end in a pi/2 readout pulse carry the
readout phase explicitly so that :func:`differential_pair` can produce the
bright (-y readout) and dark (+y readout) variants.

Timing convention: ``interval_ns`` is the free time between pulse *edges*
unless ``timing="center"`` is requested, in which case it is the spacing of
pulse centers.  The sweep time reported for a sequence excludes the state
preparation and readout pulses, so an XY-8 run with ``N`` pulses at edge
interval ``tau`` sits at ``N * (tau + t_pi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from .spin_algebra import kron_all, rotation

RABI_MHZ = 83.0
INTERVAL_NS = 4.0

PHASE_X = 0.0
PHASE_Y = np.pi / 2
PHASE_MX = np.pi
PHASE_MY = -np.pi / 2
BRIGHT_PHASE = PHASE_MY
DARK_PHASE = PHASE_Y

XY8_PHASES = (PHASE_X, PHASE_Y, PHASE_X, PHASE_Y, PHASE_Y, PHASE_X, PHASE_Y, PHASE_X)

# One interaction-decoupling cycle: "W" is a free window, other tokens are
# (angle, phase) rotations.  Toggling frames of Sz visit +z, -z, -x, +x, +y, -y
# in equal windows, each +/- pair separated by a pi pulse so static on-site
# fields are echoed away inside the cycle; the net rotation is the identity.
DROID_BLOCK = (
    "W", (np.pi, PHASE_X),
    "W", (np.pi / 2, PHASE_X), (np.pi / 2, PHASE_Y),
    "W", (np.pi, PHASE_X),
    "W", (np.pi / 2, PHASE_Y),
    "W", (np.pi, PHASE_X),
    "W", (np.pi / 2, PHASE_X),
)  # fmt: skip

SEGMENT_KINDS = ("drive", "free", "ideal")


@dataclass(frozen=True)
class Segment:
    """A piecewise-constant stretch of the sequence.

    ``drive`` segments apply a rectangular pulse of Rabi frequency ``rabi_mhz``
    and phase ``phase`` for ``duration_ns``.  ``ideal`` segments are
    instantaneous rotations by ``angle``.  ``free`` segments carry no drive.
    """

    kind: str
    duration_ns: float = 0.0
    phase: float = 0.0
    rabi_mhz: float = 0.0
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ValueError(f"unknown segment kind {self.kind!r}")
        if self.kind == "ideal":
            if self.duration_ns != 0:
                raise ValueError("ideal rotations have zero duration")
        elif not self.duration_ns > 0:
            raise ValueError(f"{self.kind} segment needs a positive duration")
        if self.kind == "drive" and not self.rabi_mhz > 0:
            raise ValueError("drive segment needs rabi_mhz > 0")
        if self.kind == "free" and (self.rabi_mhz or self.phase or self.angle):
            raise ValueError("free segments carry no drive fields")

    @property
    def is_pulse(self) -> bool:
        return self.kind != "free"

    @property
    def rotation_angle(self) -> float:
        """Nominal rotation angle (radians) ignoring off-resonance errors."""
        if self.kind == "drive":
            return 2 * np.pi * self.rabi_mhz * self.duration_ns * 1e-3
        return self.angle if self.kind == "ideal" else 0.0


# Segments are immutable, so equal ones are shared; this makes sequence
# comparisons hit the identity fast path.
@lru_cache(maxsize=4096)
def free(duration_ns: float) -> Segment:
    return Segment("free", float(duration_ns))


@lru_cache(maxsize=4096)
def pulse(angle: float, phase: float, rabi_mhz: float = RABI_MHZ, ideal: bool = False) -> Segment:
    """Rotation by ``angle`` about the in-plane axis at ``phase``.

    Finite pulses last ``angle / (2 pi rabi)``, i.e. 1/(4 rabi) for pi/2 and
    1/(2 rabi) for pi.
    """
    if ideal:
        return Segment("ideal", 0.0, float(phase), 0.0, float(angle))
    duration = angle / (2 * np.pi * rabi_mhz * 1e-3)
    return Segment("drive", duration, float(phase), float(rabi_mhz))


def pi_duration_ns(rabi_mhz: float = RABI_MHZ) -> float:
    return 1e3 / (2 * rabi_mhz)


@dataclass(frozen=True)
class PulseSequence:
    segments: tuple[Segment, ...]
    readout_phase: float | None = None
    label: str = ""
    prep_segments: int = 0
    period: int = 0

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if self.period < 0:
            raise ValueError("period must be non-negative")
        if self.readout_phase is not None:
            if not self.segments or not self.segments[-1].is_pulse:
                raise ValueError("a sequence with a readout phase must end in a pulse")
            if not np.isclose(self.segments[-1].phase, self.readout_phase):
                raise ValueError("readout_phase disagrees with the final segment")

    @property
    def total_ns(self) -> float:
        return float(sum(s.duration_ns for s in self.segments))

    @property
    def has_readout(self) -> bool:
        return self.readout_phase is not None

    @property
    def body(self) -> tuple[Segment, ...]:
        """Segments between state preparation and readout."""
        end = len(self.segments) - 1 if self.has_readout else len(self.segments)
        return self.segments[self.prep_segments : end]

    @property
    def sweep_time_ns(self) -> float:
        return float(sum(s.duration_ns for s in self.body))

    @property
    def unit(self) -> tuple[Segment, ...]:
        """The repeated cycle of the body (empty if the body is not periodic)."""
        return self.body[: self.period] if self.period else ()

    @property
    def n_pulses(self) -> int:
        return sum(1 for s in self.body if s.is_pulse)


def _readout(rabi_mhz: float, ideal: bool, phase: float = BRIGHT_PHASE) -> Segment:
    return pulse(np.pi / 2, phase, rabi_mhz, ideal)


def _assemble(body, rabi_mhz, ideal, label, prep=True, readout=True, period=0) -> PulseSequence:
    segs = []
    if prep:
        segs.append(pulse(np.pi / 2, PHASE_Y, rabi_mhz, ideal))
    segs.extend(s for s in body if s.kind != "free" or s.duration_ns > 0)
    readout_phase = None
    if readout:
        segs.append(_readout(rabi_mhz, ideal))
        readout_phase = BRIGHT_PHASE
    return PulseSequence(tuple(segs), readout_phase, label, 1 if prep else 0, period)


def _free_if(t: float) -> list[Segment]:
    if t < 0:
        raise ValueError(f"negative free evolution time {t}")
    return [free(t)] if t > 0 else []


def build_echo(total_free_ns: float, rabi_mhz: float = RABI_MHZ, ideal: bool = False) -> PulseSequence:
    """pi/2(y) - t/2 - pi(x) - t/2 - pi/2 readout."""
    half = total_free_ns / 2
    body = _free_if(half) + [pulse(np.pi, PHASE_X, rabi_mhz, ideal)] + _free_if(half)
    return _assemble(body, rabi_mhz, ideal, "echo")


def build_xy8(
    interval_ns: float,
    n_pulses: int,
    rabi_mhz: float = RABI_MHZ,
    ideal: bool = False,
    timing: str = "edge",
) -> PulseSequence:
    """pi/2(y), then ``n_pulses`` pi pulses in the XYXYYXYX pattern, then readout."""
    if n_pulses % 8 != 0 or n_pulses < 0:
        raise ValueError(f"XY-8 needs a multiple of 8 pulses, got {n_pulses}")
    if timing == "edge":
        gap = interval_ns
    elif timing == "center":
        gap = interval_ns - (0.0 if ideal else pi_duration_ns(rabi_mhz))
    else:
        raise ValueError(f"unknown timing convention {timing!r}")
    body = []
    for k in range(n_pulses):
        body += _free_if(gap / 2)
        body.append(pulse(np.pi, XY8_PHASES[k % 8], rabi_mhz, ideal))
        body += _free_if(gap / 2)
    return _assemble(body, rabi_mhz, ideal, "xy8", period=len(body) // max(n_pulses // 8, 1))


def droid_block(interval_ns: float, rabi_mhz: float = RABI_MHZ, ideal: bool = False) -> list[Segment]:
    out = []
    for tok in DROID_BLOCK:
        if tok == "W":
            out += _free_if(interval_ns)
        else:
            out.append(pulse(tok[0], tok[1], rabi_mhz, ideal))
    return out


def build_droid(
    n_blocks: int, rabi_mhz: float = RABI_MHZ, interval_ns: float = INTERVAL_NS, ideal: bool = False
) -> PulseSequence:
    """pi/2(y), ``n_blocks`` repetitions of the six-frame cycle, readout."""
    if n_blocks < 0:
        raise ValueError("n_blocks must be non-negative")
    block = droid_block(interval_ns, rabi_mhz, ideal)
    return _assemble(block * n_blocks, rabi_mhz, ideal, "droid", period=len(block))


def build_ramsey(t_ns: float, rabi_mhz: float = RABI_MHZ, ideal: bool = False) -> PulseSequence:
    return _assemble(_free_if(t_ns), rabi_mhz, ideal, "ramsey")


def build_rabi(t_ns: float, rabi_mhz: float = RABI_MHZ) -> PulseSequence:
    """Continuous x drive for ``t_ns``; read ``Sz`` directly."""
    body = [Segment("drive", float(t_ns), PHASE_X, rabi_mhz)] if t_ns > 0 else []
    return PulseSequence(tuple(body), None, "rabi", 0)


def build_spin_lock(t_ns: float, rabi_mhz: float = RABI_MHZ, ideal: bool = False) -> PulseSequence:
    """pi/2(y) - drive along x for ``t_ns`` - readout."""
    body = [Segment("drive", float(t_ns), PHASE_X, rabi_mhz)] if t_ns > 0 else []
    return _assemble(body, rabi_mhz, ideal, "spin_lock")


def build_t1(t_ns: float) -> PulseSequence:
    """Free evolution of the polarized state; read ``Sz`` directly."""
    return PulseSequence(tuple(_free_if(t_ns)), None, "t1", 0)


def differential_pair(seq: PulseSequence) -> tuple[PulseSequence, PulseSequence]:
    """Bright (-y readout) and dark (+y readout) copies of ``seq``."""
    if not seq.has_readout:
        raise ValueError(f"sequence {seq.label!r} has no readout pulse")
    last = seq.segments[-1]
    bright = replace(seq, segments=seq.segments[:-1] + (replace(last, phase=BRIGHT_PHASE),),
                     readout_phase=BRIGHT_PHASE)
    dark = replace(seq, segments=seq.segments[:-1] + (replace(last, phase=DARK_PHASE),),
                   readout_phase=DARK_PHASE)
    return bright, dark


def toggling_frames(seq: PulseSequence, n_sites: int = 1) -> list[tuple[np.ndarray, float]]:
    """``(R_k, duration_k)`` for each free window of the sequence body.

    ``R_k`` is the accumulated ideal rotation of all body pulses preceding the
    window, so the window's Hamiltonian in the toggling frame is
    ``R_k^dag H R_k``.  Drive segments count as their nominal rotation.
    """
    R = np.eye(2, dtype=complex)
    frames = []
    for seg in seq.body:
        if seg.kind == "free":
            U = R if n_sites == 1 else kron_all([R] * n_sites)
            frames.append((U, seg.duration_ns))
        else:
            R = rotation(seg.rotation_angle, seg.phase) @ R
    return frames


def net_rotation(seq: PulseSequence) -> np.ndarray:
    """Single-spin product of the nominal rotations of the body pulses."""
    R = np.eye(2, dtype=complex)
    for seg in seq.body:
        if seg.is_pulse:
            R = rotation(seg.rotation_angle, seg.phase) @ R
    return R


# --------------------------------------------------------------------------
# Sweeps

SWEEP_MODES = ("fixed_interval", "fixed_n")
FAMILIES = ("xy8", "droid", "echo", "ramsey", "rabi", "spin_lock", "t1")


@dataclass(frozen=True)
class SweepPlan:
    """A family of sequences indexed by ``points``.

    For ``xy8``/``droid`` in ``fixed_interval`` mode the points are pulse counts
    (XY-8) or cycle counts (DROID) at constant ``interval_ns``; in ``fixed_n``
    mode they are intervals (ns) at constant ``n_pulses`` (pulses or cycles).
    For every other family the points are evolution times in ns.
    """

    family: str
    points: tuple = ()
    mode: str = "fixed_interval"
    interval_ns: float = INTERVAL_NS
    n_pulses: int = 8
    rabi_mhz: float = RABI_MHZ
    ideal: bool = False
    timing: str = "edge"

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown sequence family {self.family!r}")
        if self.mode not in SWEEP_MODES:
            raise ValueError(f"unknown sweep mode {self.mode!r}")


def expand_sweep(plan: SweepPlan) -> list[PulseSequence]:
    kw = dict(rabi_mhz=plan.rabi_mhz, ideal=plan.ideal)
    fam = plan.family
    if fam == "xy8":
        if plan.mode == "fixed_interval":
            return [build_xy8(plan.interval_ns, int(n), timing=plan.timing, **kw) for n in plan.points]
        return [build_xy8(float(t), plan.n_pulses, timing=plan.timing, **kw) for t in plan.points]
    if fam == "droid":
        if plan.mode == "fixed_interval":
            return [build_droid(int(n), interval_ns=plan.interval_ns, **kw) for n in plan.points]
        return [build_droid(plan.n_pulses, interval_ns=float(t), **kw) for t in plan.points]
    if fam == "echo":
        return [build_echo(float(t), **kw) for t in plan.points]
    if fam == "ramsey":
        return [build_ramsey(float(t), **kw) for t in plan.points]
    if fam == "spin_lock":
        return [build_spin_lock(float(t), **kw) for t in plan.points]
    if fam == "rabi":
        return [build_rabi(float(t), plan.rabi_mhz) for t in plan.points]
    return [build_t1(float(t)) for t in plan.points]


# --------------------------------------------------------------------------
# Sequence description files


def sequence_to_dict(seq: PulseSequence) -> dict:
    recs = []
    for s in seq.segments:
        rec = {"kind": s.kind, "duration_ns": s.duration_ns}
        if s.is_pulse:
            rec["phase_deg"] = float(np.degrees(s.phase))
        if s.kind == "drive":
            rec["rabi_mhz"] = s.rabi_mhz
        if s.kind == "ideal":
            rec["angle_deg"] = float(np.degrees(s.angle))
        recs.append(rec)
    return {
        "label": seq.label,
        "prep_segments": seq.prep_segments,
        "period": seq.period,
        "readout_phase_deg": None if seq.readout_phase is None else float(np.degrees(seq.readout_phase)),
        "segments": recs,
    }


def sequence_from_dict(doc: dict) -> PulseSequence:
    allowed = {"label", "prep_segments", "period", "readout_phase_deg", "segments"}
    unknown = set(doc) - allowed
    if unknown:
        raise ValueError(f"unknown sequence keys: {sorted(unknown)}")
    segs = []
    for rec in doc.get("segments", []):
        extra = set(rec) - {"kind", "duration_ns", "phase_deg", "rabi_mhz", "angle_deg"}
        if extra:
            raise ValueError(f"unknown segment fields: {sorted(extra)}")
        segs.append(
            Segment(
                rec["kind"],
                float(rec.get("duration_ns", 0.0)),
                float(np.radians(rec.get("phase_deg", 0.0))),
                float(rec.get("rabi_mhz", 0.0)),
                float(np.radians(rec.get("angle_deg", 0.0))),
            )
        )
    ro = doc.get("readout_phase_deg")
    return PulseSequence(
        tuple(segs),
        None if ro is None else float(np.radians(ro)),
        doc.get("label", ""),
        int(doc.get("prep_segments", 0)),
        int(doc.get("period", 0)),
    )


def save_sequence(seq: PulseSequence, path) -> None:
    Path(path).write_text(yaml.safe_dump(sequence_to_dict(seq), sort_keys=False))


def load_sequence(path) -> PulseSequence:
    return sequence_from_dict(yaml.safe_load(Path(path).read_text()))


BUILTIN_SEQUENCES = {
    "echo": lambda: build_echo(40.0),
    "xy8": lambda: build_xy8(INTERVAL_NS, 8),
    "droid": lambda: build_droid(1),
}
