"""Parametric pulse schedules: envelopes, channels, instructions and lowering.

Times are integer multiples of the device sample period ``dt``. A schedule is
an immutable, time-ordered tuple of instructions plus the parameter space its
:class:`ParamRef` placeholders draw from.

Frame model
-----------
Every channel carries a frame ``(phase, detuning)``. The carrier seen by the
driven qubit is ``exp(i*(2π ν t + θ(t)))`` where ``ν`` is the channel's nominal
frequency (the driven or target qubit frequency) and the frame phase ``θ``
starts at 0 and evolves as

* ``ShiftPhase(φ)`` adds ``φ`` at its start time,
* between events it grows at ``2π * detuning`` (phase-continuous), where the
  detuning is the value set by the most recent ``SetDetuning`` on the channel.

The single-qubit native pulse and cross-resonance blocks built here set their
detuning when they start and reset it to zero when they end, so each block
advances its channel frame by exactly ``2π δ T`` regardless of where it is
placed in time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Sequence, Union

import numpy as np

from .errors import BindingError, BoundsError, LoweringError, ValidationError

if TYPE_CHECKING:
    from .device_model import DeviceConfig

ENVELOPE_KINDS = ("gaussian", "drag", "gaussian_square")
PARAM_KINDS = ("amplitude", "detuning", "phase", "angle")


# --------------------------------------------------------------------------- params


@dataclass(frozen=True)
class ParamRef:
    """Placeholder for a trainable value, optionally through an affine map.

    The resolved value is ``offset + scale * v``. When ``saturation`` is set the
    linear result ``a = scale * v`` is passed through the arcsine compensation
    ``saturation * (2/π) * arcsin(a π / (2 saturation))`` before adding ``offset``;
    the map has unit slope at zero and reaches ``saturation`` when the linear
    amplitude equals ``2 saturation / π``.
    """

    name: str
    scale: float = 1.0
    offset: float = 0.0
    saturation: float | None = None

    def resolve(self, value: float) -> float:
        lin = self.scale * value
        if self.saturation is not None:
            arg = np.clip(lin * math.pi / (2 * self.saturation), -1.0, 1.0)
            lin = self.saturation * (2 / math.pi) * math.asin(arg)
        return self.offset + lin


Value = Union[float, ParamRef]


def _is_param(v: Any) -> bool:
    return isinstance(v, ParamRef)


@dataclass(frozen=True)
class ParamSpec:
    name: str
    kind: str
    lo: float
    hi: float

    def __post_init__(self):
        if self.kind not in PARAM_KINDS:
            raise ValidationError(f"unknown parameter kind {self.kind!r}")
        if not (np.isfinite(self.lo) and np.isfinite(self.hi)) or self.lo > self.hi:
            raise ValidationError(f"invalid bounds [{self.lo}, {self.hi}] for {self.name}")


@dataclass(frozen=True)
class ParamSpace:
    """Ordered, uniquely named parameter declarations with box bounds."""

    entries: tuple[ParamSpec, ...] = ()

    def __post_init__(self):
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate parameter names in {names}")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def get(self, name: str) -> ParamSpec:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def lower(self) -> np.ndarray:
        return np.array([e.lo for e in self.entries], dtype=float)

    def upper(self) -> np.ndarray:
        return np.array([e.hi for e in self.entries], dtype=float)

    def merge(self, other: "ParamSpace") -> "ParamSpace":
        """Union of two spaces; identical re-declarations are allowed."""
        out = list(self.entries)
        for e in other.entries:
            if e.name in self:
                if self.get(e.name) != e:
                    raise ValidationError(f"conflicting declarations for parameter {e.name}")
                continue
            out.append(e)
        return ParamSpace(tuple(out))

    def subset(self, names: Iterable[str]) -> "ParamSpace":
        keep = set(names)
        return ParamSpace(tuple(e for e in self.entries if e.name in keep))


def default_bounds(kind: str, device: "DeviceConfig | None" = None) -> tuple[float, float]:
    """Default box for a parameter kind (amplitude [0, 0.4], detuning ±2 MHz)."""
    amp_max = device.amp_max if device is not None else 0.4
    det_max = device.detuning_max if device is not None else 2e6
    return {
        "amplitude": (0.0, amp_max),
        "detuning": (-det_max, det_max),
        "phase": (-math.pi, math.pi),
        "angle": (-math.pi, math.pi),
    }[kind]


# ------------------------------------------------------------------------ envelopes


@dataclass(frozen=True)
class Envelope:
    """Pulse envelope sampled once per ``dt``.

    Attributes
    ----------
    kind : {"gaussian", "drag", "gaussian_square"}
    duration : int
        Number of samples.
    sigma : float
        Gaussian width in samples.
    amp : float or ParamRef
        Peak amplitude as a fraction of full drive.
    beta : float
        DRAG quadrature coefficient in samples (``drag`` only).
    width : int
        Flat-top length in samples (``gaussian_square`` only).
    """

    kind: str
    duration: int
    sigma: float
    amp: Value
    beta: float = 0.0
    width: int = 0

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValidationError(f"unknown envelope kind {self.kind!r}")
        if int(self.duration) != self.duration or self.duration <= 0:
            raise ValidationError("envelope duration must be a positive integer")
        if not self.sigma > 0:
            raise ValidationError("envelope sigma must be positive")
        if self.kind == "gaussian_square" and not 0 <= self.width < self.duration:
            raise ValidationError("gaussian_square width must satisfy 0 <= width < duration")

    @property
    def is_bound(self) -> bool:
        return not _is_param(self.amp)

    def shape(self) -> np.ndarray:
        """Unit-amplitude complex samples (the envelope divided by ``amp``)."""
        k = np.arange(self.duration, dtype=float)
        if self.kind in ("gaussian", "drag"):
            c = (self.duration - 1) / 2
            g = np.exp(-((k - c) ** 2) / (2 * self.sigma**2))
            if self.kind == "gaussian":
                return g.astype(complex)
            return g + 1j * self.beta * (-(k - c) / self.sigma**2) * g
        rise = (self.duration - self.width) / 2
        t_up, t_down = rise, rise + self.width - 1
        out = np.ones(self.duration)
        left = k < t_up
        right = k > t_down
        out[left] = np.exp(-((k[left] - t_up) ** 2) / (2 * self.sigma**2))
        out[right] = np.exp(-((k[right] - t_down) ** 2) / (2 * self.sigma**2))
        return out.astype(complex)

    def samples(self) -> np.ndarray:
        if not self.is_bound:
            raise BindingError(f"envelope amplitude {self.amp.name!r} is unbound")
        return float(self.amp) * self.shape()

    def area(self) -> float:
        """Sum of the real unit-amplitude samples (rotation area per unit amp, in dt)."""
        return float(np.sum(self.shape().real))


def sample_envelope(e: Envelope, k: int) -> complex:
    """Value of a bound envelope at sample ``k`` (held over ``[k dt, (k+1) dt)``)."""
    if not 0 <= k < e.duration:
        raise ValidationError(f"sample index {k} outside [0, {e.duration})")
    return complex(e.samples()[k])


# ------------------------------------------------------------------------- channels


@dataclass(frozen=True, order=True)
class Channel:
    """Drive channel ``d{q}`` or control channel ``u{c}_{t}``.

    A drive channel drives qubit ``q`` at its own frequency. A control channel
    drives the control qubit ``c`` at the target qubit's frequency
    (cross-resonance), so its frame is referenced to the target.
    """

    kind: str
    qubits: tuple[int, ...]

    def __post_init__(self):
        if self.kind == "drive" and len(self.qubits) != 1:
            raise ValidationError("drive channel needs exactly one qubit")
        if self.kind == "control" and (len(self.qubits) != 2 or self.qubits[0] == self.qubits[1]):
            raise ValidationError("control channel needs two distinct qubits")
        if self.kind not in ("drive", "control"):
            raise ValidationError(f"unknown channel kind {self.kind!r}")

    @classmethod
    def drive(cls, qubit: int) -> "Channel":
        return cls("drive", (int(qubit),))

    @classmethod
    def control(cls, control: int, target: int) -> "Channel":
        return cls("control", (int(control), int(target)))

    @classmethod
    def parse(cls, name: str) -> "Channel":
        try:
            if name.startswith("d"):
                return cls.drive(int(name[1:]))
            if name.startswith("u"):
                c, t = name[1:].split("_")
                return cls.control(int(c), int(t))
        except ValueError:
            pass
        raise ValidationError(f"cannot parse channel name {name!r}")

    @property
    def name(self) -> str:
        if self.kind == "drive":
            return f"d{self.qubits[0]}"
        return f"u{self.qubits[0]}_{self.qubits[1]}"

    @property
    def driven_qubit(self) -> int:
        return self.qubits[0]

    @property
    def frame_qubit(self) -> int:
        """Qubit whose frequency the channel carrier is referenced to."""
        return self.qubits[-1]

    def __str__(self) -> str:
        return self.name


# --------------------------------------------------------------------- instructions


@dataclass(frozen=True)
class Play:
    t0: int
    channel: Channel
    envelope: Envelope

    @property
    def duration(self) -> int:
        return self.envelope.duration


@dataclass(frozen=True)
class ShiftPhase:
    t0: int
    channel: Channel
    phase: Value
    duration = 0


@dataclass(frozen=True)
class SetDetuning:
    t0: int
    channel: Channel
    detuning: Value
    duration = 0


@dataclass(frozen=True)
class Delay:
    t0: int
    channel: Channel
    length: int

    @property
    def duration(self) -> int:
        return self.length


@dataclass(frozen=True)
class Barrier:
    t0: int
    channels: tuple[Channel, ...]
    duration = 0


Instruction = Union[Play, ShiftPhase, SetDetuning, Delay, Barrier]
_ORDER = {SetDetuning: 0, ShiftPhase: 1, Barrier: 2, Delay: 3, Play: 4}


def _channels_of(inst: Instruction) -> tuple[Channel, ...]:
    return inst.channels if isinstance(inst, Barrier) else (inst.channel,)


def _end(inst: Instruction) -> int:
    return inst.t0 + inst.duration


def _shift(inst: Instruction, dt: int) -> Instruction:
    return replace(inst, t0=inst.t0 + dt)


def _qubits_of_channel(ch: Channel) -> tuple[int, ...]:
    return ch.qubits


@dataclass(frozen=True)
class PulseSchedule:
    """Immutable timed sequence of instructions.

    Instructions with equal start times keep their insertion order, which
    matters for zero-duration frame updates issued at the same instant.
    """

    n_qubits: int
    instructions: tuple[Instruction, ...] = ()
    params: ParamSpace = field(default_factory=ParamSpace)
    metadata: tuple[tuple[str, Any], ...] = ()

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValidationError("schedule needs at least one qubit")
        order = sorted(range(len(self.instructions)), key=lambda i: self.instructions[i].t0)
        object.__setattr__(self, "instructions", tuple(self.instructions[i] for i in order))
        busy: dict[Channel, list[tuple[int, int]]] = {}
        for inst in self.instructions:
            if inst.t0 < 0:
                raise ValidationError("instruction start time must be non-negative")
            for ch in _channels_of(inst):
                if max(ch.qubits) >= self.n_qubits:
                    raise ValidationError(f"channel {ch} references a qubit outside the schedule")
            if isinstance(inst, Play):
                for a, b in busy.get(inst.channel, []):
                    if inst.t0 < b and a < _end(inst):
                        raise ValidationError(f"overlapping plays on channel {inst.channel}")
                busy.setdefault(inst.channel, []).append((inst.t0, _end(inst)))

    # structure ---------------------------------------------------------------
    @property
    def duration(self) -> int:
        return max((_end(i) for i in self.instructions), default=0)

    @property
    def channels(self) -> tuple[Channel, ...]:
        seen: dict[Channel, None] = {}
        for inst in self.instructions:
            for ch in _channels_of(inst):
                seen.setdefault(ch, None)
        return tuple(sorted(seen))

    @property
    def plays(self) -> tuple[Play, ...]:
        return tuple(i for i in self.instructions if isinstance(i, Play))

    @property
    def meta(self) -> dict[str, Any]:
        return dict(self.metadata)

    def with_metadata(self, **items: Any) -> "PulseSchedule":
        meta = dict(self.metadata)
        meta.update(items)
        return replace(self, metadata=tuple(sorted(meta.items())))

    def unbound_names(self) -> set[str]:
        names = set()
        for inst in self.instructions:
            for v in _values_of(inst):
                if _is_param(v):
                    names.add(v.name)
        return names

    @property
    def is_bound(self) -> bool:
        return not self.unbound_names()

    def shifted(self, dt: int) -> "PulseSchedule":
        return replace(self, instructions=tuple(_shift(i, dt) for i in self.instructions))

    def qubit_ends(self) -> dict[int, int]:
        ends: dict[int, int] = {}
        for inst in self.instructions:
            for ch in _channels_of(inst):
                for q in _qubits_of_channel(ch):
                    ends[q] = max(ends.get(q, 0), _end(inst))
        return ends

    def __len__(self) -> int:
        return len(self.instructions)


def _values_of(inst: Instruction) -> tuple[Value, ...]:
    if isinstance(inst, Play):
        return (inst.envelope.amp,)
    if isinstance(inst, ShiftPhase):
        return (inst.phase,)
    if isinstance(inst, SetDetuning):
        return (inst.detuning,)
    return ()


# ------------------------------------------------------------------------- builders


class ScheduleBuilder:
    """Mutable helper that places blocks as soon as the qubits they touch are free.

    A block occupies every qubit reached by its channels (a control channel
    occupies both control and target). ``barrier()`` synchronizes all qubits.
    """

    def __init__(self, n_qubits: int, params: ParamSpace | None = None):
        self.n_qubits = n_qubits
        self.params = params or ParamSpace()
        self._insts: list[Instruction] = []
        self._free = [0] * n_qubits
        self.metadata: dict[str, Any] = {}

    @property
    def time(self) -> int:
        return max(self._free) if self._free else 0

    def append(self, block: PulseSchedule, t0: int | None = None) -> int:
        """Place ``block``; returns its start time."""
        if block.n_qubits > self.n_qubits:
            raise ValidationError("block uses more qubits than the builder")
        qubits = sorted({q for ch in block.channels for q in ch.qubits})
        start = max((self._free[q] for q in qubits), default=self.time) if t0 is None else t0
        self._insts.extend(_shift(i, start) for i in block.instructions)
        ends = block.qubit_ends()
        for q in qubits:
            self._free[q] = max(self._free[q], start + ends.get(q, 0), start)
        self.params = self.params.merge(block.params)
        return start

    def layer(self, blocks: Sequence[PulseSchedule], align: str = "alap") -> None:
        """Append blocks that form one layer, then a barrier.

        Blocks on disjoint qubits run in parallel; blocks sharing a qubit are
        serialized. ``alap`` right-aligns every block to the layer end.
        """
        if not blocks:
            return
        base = self.time
        if align == "asap":
            for b in blocks:
                self.append(b)
            self.barrier()
            return
        if align != "alap":
            raise ValidationError(f"unknown alignment {align!r}")
        # schedule the reversed list forward, then mirror
        free = [0] * self.n_qubits
        placed = []
        for b in reversed(blocks):
            qs = sorted({q for ch in b.channels for q in ch.qubits})
            s = max((free[q] for q in qs), default=0)
            for q in qs:
                free[q] = s + b.duration
            placed.append((b, s))
        length = max(free)
        for b, s in reversed(placed):
            self.append(b, t0=base + length - s - b.duration)
        self._free = [base + length] * self.n_qubits
        self.barrier()

    def barrier(self) -> None:
        t = self.time
        self._free = [t] * self.n_qubits
        chans = tuple(Channel.drive(q) for q in range(self.n_qubits))
        self._insts.append(Barrier(t, chans))

    def build(self) -> PulseSchedule:
        sched = PulseSchedule(self.n_qubits, tuple(self._insts), self.params)
        if self.metadata:
            sched = sched.with_metadata(**self.metadata)
        return sched


def sequence(blocks: Sequence[PulseSchedule], n_qubits: int | None = None) -> PulseSchedule:
    """Place blocks one after another with a barrier between each."""
    n = n_qubits or max((b.n_qubits for b in blocks), default=1)
    builder = ScheduleBuilder(n)
    for b in blocks:
        builder.append(b)
        builder.barrier()
    return builder.build()


def _declare(
    value: Value | str, kind: str, device: "DeviceConfig | None"
) -> tuple[Value, ParamSpace]:
    """Turn a string into a ParamRef with default bounds; pass numbers through."""
    if isinstance(value, str):
        lo, hi = default_bounds(kind, device)
        return ParamRef(value), ParamSpace((ParamSpec(value, kind, lo, hi),))
    if _is_param(value):
        lo, hi = default_bounds(kind, device)
        return value, ParamSpace((ParamSpec(value.name, kind, lo, hi),))
    return float(value), ParamSpace()


def _framed_play(
    n_qubits: int,
    channel: Channel,
    env: Envelope,
    detuning: Value,
    phase: Value,
    params: ParamSpace,
) -> PulseSchedule:
    insts: list[Instruction] = []
    local_phase = _is_param(phase) or phase != 0.0
    with_detuning = _is_param(detuning) or detuning != 0.0
    if with_detuning:
        insts.append(SetDetuning(0, channel, detuning))
    if local_phase:
        insts.append(ShiftPhase(0, channel, phase))
    insts.append(Play(0, channel, env))
    if local_phase:
        neg = replace(phase, scale=-phase.scale, offset=-phase.offset) if _is_param(phase) else -phase
        insts.append(ShiftPhase(env.duration, channel, neg))
    if with_detuning:
        insts.append(SetDetuning(env.duration, channel, 0.0))
    return PulseSchedule(n_qubits, tuple(insts), params)


def snp(
    qubit: int,
    amp_param: Value | str,
    detuning_param: Value | str,
    device: "DeviceConfig",
    phase_param: Value | str = 0.0,
    duration: int | None = None,
) -> PulseSchedule:
    """Single-qubit native pulse: one DRAG play on the qubit's drive channel.

    Strings declare new parameters with default bounds. ``phase_param`` rotates
    the drive axis for this pulse only.
    """
    if not 0 <= qubit < device.n_qubits:
        raise ValidationError(f"qubit {qubit} not in a {device.n_qubits}-qubit device")
    amp, ps = _declare(amp_param, "amplitude", device)
    det, ps2 = _declare(detuning_param, "detuning", device)
    ph, ps3 = _declare(phase_param, "phase", device)
    dur = int(duration or device.snp_duration)
    env = Envelope("drag", dur, dur / 4, amp, beta=device.drag_beta)
    return _framed_play(
        device.n_qubits, Channel.drive(qubit), env, det, ph, ps.merge(ps2).merge(ps3)
    )


def cr_envelope(device: "DeviceConfig", amp: Value, duration_dt: int) -> Envelope:
    sigma = device.cr_sigma
    width = int(duration_dt - 2 * device.cr_risefall * sigma)
    if width < 0:
        raise ValidationError(
            f"cross-resonance duration {duration_dt} dt is shorter than its ramps"
        )
    return Envelope("gaussian_square", int(duration_dt), sigma, amp, width=width)


def cr(
    control: int,
    target: int,
    amp_param: Value | str,
    detuning_param: Value | str,
    duration_dt: int | None,
    device: "DeviceConfig",
    phase_param: Value | str = 0.0,
) -> PulseSchedule:
    """Cross-resonance block: a GaussianSquare play on ``u{control}_{target}``."""
    device.require_edge(control, target)
    amp, ps = _declare(amp_param, "amplitude", device)
    det, ps2 = _declare(detuning_param, "detuning", device)
    ph, ps3 = _declare(phase_param, "phase", device)
    env = cr_envelope(device, amp, int(duration_dt or device.cr_duration))
    return _framed_play(
        device.n_qubits, Channel.control(control, target), env, det, ph, ps.merge(ps2).merge(ps3)
    )


def duration_of(s: PulseSchedule, device: "DeviceConfig") -> tuple[int, float]:
    """Critical-path length in samples and in nanoseconds."""
    n = s.duration
    return n, n * device.dt * 1e9


# --------------------------------------------------------------------------- binding


def _resolve(v: Value, values: Mapping[str, float]) -> float:
    if _is_param(v):
        if v.name not in values:
            raise BindingError(f"no value for parameter {v.name!r}")
        return float(v.resolve(values[v.name]))
    return float(v)


def bind(
    s: PulseSchedule, values: Sequence[float] | Mapping[str, float], tol: float = 1e-12
) -> PulseSchedule:
    """Replace every ParamRef by its value.

    ``values`` is either a vector in ``s.params`` order or a name→value mapping
    that covers every parameter of the schedule.
    """
    if isinstance(values, Mapping):
        mapping = {k: float(v) for k, v in values.items()}
        missing = [n for n in s.params.names if n not in mapping]
        if missing:
            raise BindingError(f"missing values for {missing}")
    else:
        vec = np.asarray(values, dtype=float).ravel()
        if vec.shape[0] != len(s.params):
            raise ValidationError(
                f"expected {len(s.params)} parameter values, got {vec.shape[0]}"
            )
        mapping = dict(zip(s.params.names, vec.tolist()))
    for spec in s.params:
        v = mapping[spec.name]
        if not np.isfinite(v) or v < spec.lo - tol or v > spec.hi + tol:
            raise BoundsError(
                f"parameter {spec.name!r} = {v} outside [{spec.lo}, {spec.hi}]", spec.name
            )
    out: list[Instruction] = []
    for inst in s.instructions:
        if isinstance(inst, Play):
            out.append(replace(inst, envelope=replace(inst.envelope, amp=_resolve(inst.envelope.amp, mapping))))
        elif isinstance(inst, ShiftPhase):
            out.append(replace(inst, phase=_resolve(inst.phase, mapping)))
        elif isinstance(inst, SetDetuning):
            out.append(replace(inst, detuning=_resolve(inst.detuning, mapping)))
        else:
            out.append(inst)
    return replace(s, instructions=tuple(out), params=ParamSpace())


def validate_bound(s: PulseSchedule, device: "DeviceConfig", tol: float = 1e-12) -> None:
    """Check a bound schedule against the device's amplitude/detuning limits and topology."""
    names = s.unbound_names()
    if names:
        raise BindingError(f"unbound parameters {sorted(names)}")
    if s.n_qubits > device.n_qubits:
        raise ValidationError("schedule uses more qubits than the device")
    for inst in s.instructions:
        if isinstance(inst, Play):
            peak = float(np.max(np.abs(inst.envelope.samples().real)))
            if peak > device.amp_max + tol:
                raise BoundsError(
                    f"|amp| {peak:.6g} exceeds amp_max {device.amp_max} on {inst.channel}"
                )
        if isinstance(inst, SetDetuning) and abs(inst.detuning) > device.detuning_max * (1 + 1e-12):
            raise BoundsError(f"detuning {inst.detuning} Hz exceeds ±{device.detuning_max} Hz")
        for ch in _channels_of(inst):
            if ch.kind == "control":
                device.require_edge(*ch.qubits)


# ----------------------------------------------------------------------- frame query


@dataclass(frozen=True)
class FrameSegment:
    """Frame state valid from ``t0``: ``θ(t) = phase + 2π detuning (t - t0) dt``."""

    t0: int
    phase: float
    detuning: float


def frame_timeline(s: PulseSchedule, channel: Channel, dt: float) -> list[FrameSegment]:
    """Piecewise-linear frame phase history of a bound schedule on one channel."""
    segs = [FrameSegment(0, 0.0, 0.0)]
    for inst in s.instructions:
        if isinstance(inst, (ShiftPhase, SetDetuning)) and inst.channel == channel:
            last = segs[-1]
            phase = last.phase + 2 * math.pi * last.detuning * (inst.t0 - last.t0) * dt
            if isinstance(inst, ShiftPhase):
                segs.append(FrameSegment(inst.t0, phase + _resolve(inst.phase, {}), last.detuning))
            else:
                segs.append(FrameSegment(inst.t0, phase, _resolve(inst.detuning, {})))
    return segs


def frame_phase_at(s: PulseSchedule, channel: Channel, t: float, dt: float) -> float:
    """Frame phase θ at (possibly fractional) sample time ``t``."""
    segs = frame_timeline(s, channel, dt)
    cur = segs[0]
    for seg in segs:
        if seg.t0 <= t:
            cur = seg
    return cur.phase + 2 * math.pi * cur.detuning * (t - cur.t0) * dt


def virtual_z_phases(s: PulseSchedule) -> dict[int, float]:
    """Net ShiftPhase per drive channel (the pending frame rotation of each qubit)."""
    out: dict[int, float] = {}
    for inst in s.instructions:
        if isinstance(inst, ShiftPhase) and inst.channel.kind == "drive":
            q = inst.channel.qubits[0]
            out[q] = out.get(q, 0.0) + _resolve(inst.phase, {})
    return out


# --------------------------------------------------------------------------- lowering


GATES_1Q = ("rx", "ry", "rz", "x", "h", "sx")
GATES_2Q = ("cx", "cz")


@dataclass(frozen=True)
class Gate:
    """A gate instance; ``angle`` is a float or a ParamRef of kind ``angle``."""

    name: str
    qubits: tuple[int, ...]
    angle: Value | None = None


def _angle_amp(theta: Value, a_half_pi: float, device: "DeviceConfig") -> Value:
    """Linear amplitude↔angle map ``A_θ = A_{π/2} θ / (π/2)``."""
    slope = a_half_pi / (math.pi / 2)
    sat = device.amp_max if device.amp_model == "arcsine" else None
    if _is_param(theta):
        return ParamRef(theta.name, scale=theta.scale * slope, offset=theta.offset * slope, saturation=sat)
    amp = float(theta) * slope
    if sat is not None:
        amp = ParamRef("_", scale=slope, saturation=sat).resolve(float(theta))
    return amp


def _rotation(
    device: "DeviceConfig", qubit: int, theta: Value, axis_phase: float, duration: int
) -> PulseSchedule:
    from .device_model import calibrate_pi_half

    a = calibrate_pi_half(device, duration)
    env = Envelope("drag", duration, duration / 4, _angle_amp(theta, a, device), beta=device.drag_beta)
    params = ParamSpace()
    if _is_param(theta):
        params = ParamSpace((ParamSpec(theta.name, "angle", *default_bounds("angle")),))
    return _framed_play(device.n_qubits, Channel.drive(qubit), env, 0.0, axis_phase, params)


def _virtual_z(device: "DeviceConfig", qubit: int, theta: float) -> PulseSchedule:
    """Frame update realising RZ(θ): shift the qubit's drive frame and every
    control channel that targets it."""
    chans = [Channel.drive(qubit)] + [
        Channel.control(c, t) for c, t in device.directed_edges() if t == qubit
    ]
    return PulseSchedule(
        device.n_qubits, tuple(ShiftPhase(0, ch, float(theta)) for ch in chans)
    )


def _cx(device: "DeviceConfig", control: int, target: int) -> PulseSchedule:
    from .device_model import calibrate_cx

    cal = calibrate_cx(device, control, target)
    half = cal.duration
    b = ScheduleBuilder(device.n_qubits)
    x_c = _rotation(device, control, math.pi, 0.0, device.snp_duration)
    sx_t = _rotation(device, target, math.pi / 2, 0.0, device.snp_duration)
    b.append(cr(control, target, -cal.amp, 0.0, half, device, phase_param=cal.phase))
    b.append(x_c)
    b.append(cr(control, target, cal.amp, 0.0, half, device, phase_param=cal.phase))
    t = b.time
    b.append(x_c, t0=t)
    b.append(sx_t, t0=t)
    b.append(_virtual_z(device, control, math.pi / 2))
    if cal.target_z:
        b.append(_virtual_z(device, target, cal.target_z))
    return b.build()


def lower_gate(
    gate: str | Gate,
    qubits: Sequence[int] | None = None,
    device: "DeviceConfig | None" = None,
    theta: Value | None = None,
) -> PulseSchedule:
    """Lower one gate to a pulse schedule.

    * ``rx``/``ry``: one DRAG pulse of ``rx_gate_duration`` samples with the
      linear amplitude map; ``ry`` rotates the drive axis by -π/2 for the pulse.
    * ``rz``: zero-duration frame shift (virtual Z).
    * ``x``: ``rx(π)``; ``sx``: ``rx(π/2)``.
    * ``h``: ``rz(π)`` followed by ``ry(π/2)``.
    * ``cx``: echoed cross-resonance: CR(-π/8 ZX), X_π(control), CR(+π/8 ZX),
      then X_π(control) in parallel with √X(target), plus a virtual RZ(π/2) on
      the control.
    * ``cz``: H(target), CX, H(target).

    The returned schedule carries ``virtual_z=True`` metadata: frame shifts
    stand for Z rotations still owed to the qubits, which the simulator applies
    at the end when asked to interpret the schedule as a gate circuit.
    """
    if device is None:
        raise ValidationError("lower_gate needs a device")
    if isinstance(gate, Gate):
        name, qubits, theta = gate.name, gate.qubits, gate.angle
    else:
        name = gate
    name = name.lower()
    qubits = tuple(int(q) for q in (qubits or ()))
    for q in qubits:
        if not 0 <= q < device.n_qubits:
            raise ValidationError(f"qubit {q} not on device")
    if name in GATES_1Q and len(qubits) != 1 or name in GATES_2Q and len(qubits) != 2:
        raise LoweringError(f"gate {name} applied to {len(qubits)} qubits")
    dur = device.rx_gate_duration
    if name in ("rx", "ry", "rz") and theta is None:
        raise LoweringError(f"gate {name} needs an angle")
    if name == "rx":
        s = _rotation(device, qubits[0], theta, 0.0, dur)
    elif name == "ry":
        s = _rotation(device, qubits[0], theta, -math.pi / 2, dur)
    elif name == "x":
        s = _rotation(device, qubits[0], math.pi, 0.0, dur)
    elif name == "sx":
        s = _rotation(device, qubits[0], math.pi / 2, 0.0, dur)
    elif name == "rz":
        if _is_param(theta):
            raise LoweringError("parametric rz is not supported")
        s = _virtual_z(device, qubits[0], float(theta))
    elif name == "h":
        s = sequence(
            [_virtual_z(device, qubits[0], math.pi), _rotation(device, qubits[0], math.pi / 2, -math.pi / 2, dur)],
            device.n_qubits,
        )
    elif name == "cx":
        device.require_edge(*qubits)
        s = _cx(device, *qubits)
    elif name == "cz":
        c, t = qubits
        device.require_edge(c, t)
        s = lower_circuit([Gate("h", (t,)), Gate("cx", (c, t)), Gate("h", (t,))], device)
    else:
        raise LoweringError(f"unsupported gate {name!r}")
    return s.with_metadata(virtual_z=True)


def lower_circuit(gates: Sequence[Gate], device: "DeviceConfig", barriers: bool = False) -> PulseSchedule:
    """Lower a gate list, placing each gate as soon as its qubits are free."""
    b = ScheduleBuilder(device.n_qubits)
    for g in gates:
        b.append(lower_gate(g, device=device))
        if barriers:
            b.barrier()
    b.metadata["virtual_z"] = True
    return b.build()


# ---------------------------------------------------------------------- serialization


def _value_json(v: Value) -> Any:
    if _is_param(v):
        d: dict[str, Any] = {"param": v.name}
        if v.scale != 1.0:
            d["scale"] = v.scale
        if v.offset != 0.0:
            d["offset"] = v.offset
        if v.saturation is not None:
            d["saturation"] = v.saturation
        return d
    return float(v)


def _value_from(d: Any) -> Value:
    if isinstance(d, dict):
        return ParamRef(d["param"], d.get("scale", 1.0), d.get("offset", 0.0), d.get("saturation"))
    return float(d)


def schedule_to_dict(s: PulseSchedule) -> dict[str, Any]:
    """JSON-ready form.

    ``{"n_qubits", "duration_dt", "params": [{name, kind, bounds}],
    "instructions": [{"op", "t0", "channel"|"channels", ...}], "metadata"}``.
    Envelope amplitudes and frame values are numbers or ``{"param": name, ...}``.
    """
    insts = []
    for i in s.instructions:
        if isinstance(i, Play):
            e = i.envelope
            env = {"kind": e.kind, "duration": e.duration, "sigma": e.sigma, "amp": _value_json(e.amp)}
            if e.kind == "drag":
                env["beta"] = e.beta
            if e.kind == "gaussian_square":
                env["width"] = e.width
            insts.append({"op": "play", "t0": i.t0, "channel": i.channel.name, "envelope": env})
        elif isinstance(i, ShiftPhase):
            insts.append({"op": "shift_phase", "t0": i.t0, "channel": i.channel.name, "phase": _value_json(i.phase)})
        elif isinstance(i, SetDetuning):
            insts.append({"op": "set_detuning", "t0": i.t0, "channel": i.channel.name, "detuning": _value_json(i.detuning)})
        elif isinstance(i, Delay):
            insts.append({"op": "delay", "t0": i.t0, "channel": i.channel.name, "duration": i.length})
        else:
            insts.append({"op": "barrier", "t0": i.t0, "channels": [c.name for c in i.channels]})
    return {
        "n_qubits": s.n_qubits,
        "duration_dt": s.duration,
        "params": [{"name": p.name, "kind": p.kind, "bounds": [p.lo, p.hi]} for p in s.params],
        "instructions": insts,
        "metadata": dict(s.metadata),
    }


def schedule_from_dict(d: Mapping[str, Any]) -> PulseSchedule:
    insts: list[Instruction] = []
    for i in d["instructions"]:
        op = i["op"]
        if op == "play":
            e = i["envelope"]
            env = Envelope(
                e["kind"], int(e["duration"]), float(e["sigma"]), _value_from(e["amp"]),
                beta=float(e.get("beta", 0.0)), width=int(e.get("width", 0)),
            )
            insts.append(Play(int(i["t0"]), Channel.parse(i["channel"]), env))
        elif op == "shift_phase":
            insts.append(ShiftPhase(int(i["t0"]), Channel.parse(i["channel"]), _value_from(i["phase"])))
        elif op == "set_detuning":
            insts.append(SetDetuning(int(i["t0"]), Channel.parse(i["channel"]), _value_from(i["detuning"])))
        elif op == "delay":
            insts.append(Delay(int(i["t0"]), Channel.parse(i["channel"]), int(i["duration"])))
        elif op == "barrier":
            insts.append(Barrier(int(i["t0"]), tuple(Channel.parse(c) for c in i["channels"])))
        else:
            raise ValidationError(f"unknown instruction op {op!r}")
    params = ParamSpace(tuple(ParamSpec(p["name"], p["kind"], *p["bounds"]) for p in d.get("params", [])))
    meta = tuple(sorted(d.get("metadata", {}).items()))
    return PulseSchedule(int(d["n_qubits"]), tuple(insts), params, meta)


def dumps(s: PulseSchedule) -> str:
    return json.dumps(schedule_to_dict(s), indent=2, sort_keys=True)


def loads(text: str) -> PulseSchedule:
    return schedule_from_dict(json.loads(text))
